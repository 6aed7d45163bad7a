"""Dataset loading and the seeded missing-feature streaming protocol.

Feature availability is decided per (seed, step, feature) by a counter-based
hash, so the mask of any single cell can be reproduced without replaying the
stream and two runs with the same seed see exactly the same observations.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


class DatasetError(ValueError):
    """Malformed or empty input file."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (T, d)
    labels: np.ndarray  # (T,) ints in [0, num_classes)
    num_classes: int
    name: str = ""
    class_names: tuple = ()

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DatasetError("features must be (T, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError("labels must lie in [0, num_classes)")

    @property
    def T(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def head(self, n):
        """First ``n`` rows; used to subsample very large streams."""
        return Dataset(self.features[:n], self.labels[:n], self.num_classes, self.name, self.class_names)


@dataclass(frozen=True)
class Observation:
    values: np.ndarray  # NaN where the feature is unavailable
    mask: np.ndarray  # bool, True where observed
    label: int
    step: int


@dataclass(frozen=True)
class MaskPolicy:
    p_f: float = 1.0
    always_available: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_f <= 1.0:
            raise ValueError(f"p_f must be in [0, 1], got {self.p_f}")
        if self.always_available < 0:
            raise ValueError("always_available must be >= 0")


# loaders -------------------------------------------------------------------


def _is_number(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def _split_rows(path, delimiter):
    text = Path(path).read_text()
    lines = [(i + 1, line) for i, line in enumerate(text.splitlines()) if line.strip()]
    if not lines:
        raise DatasetError(f"{path}: file is empty")
    if delimiter is None:
        delimiter = "," if "," in lines[0][1] else None
    if delimiter is None:
        return [(n, line.split()) for n, line in lines]
    reader = csv.reader((line for _, line in lines), delimiter=delimiter)
    return [(n, [tok.strip() for tok in row]) for (n, _), row in zip(lines, reader)]


def load_csv(path, label_column=-1, delimiter=None, name=None):
    """Read a rectangular table with one label column.

    A first row with any non-numeric feature cell is treated as a header.
    ``label_column`` is an index (negative allowed) or a header name. Labels
    may be any token and are numbered in order of first appearance.
    The delimiter is sniffed (comma, else whitespace) unless given.
    """
    rows = _split_rows(path, delimiter)
    width = len(rows[0][1])
    header = None
    if isinstance(label_column, str):
        header = rows[0][1]
        if label_column not in header:
            raise DatasetError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
        rows = rows[1:]
    else:
        label_idx = label_column % width
        first = [tok for j, tok in enumerate(rows[0][1]) if j != label_idx]
        if not all(_is_number(tok) for tok in first):
            header = rows[0][1]
            rows = rows[1:]
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    features, labels, label_map = [], [], {}
    for line_no, row in rows:
        if len(row) != width:
            raise DatasetError(f"{path}:{line_no}: expected {width} fields, found {len(row)}")
        label = row[label_idx]
        if label not in label_map:
            label_map[label] = len(label_map)
        labels.append(label_map[label])
        try:
            features.append([float(tok) for j, tok in enumerate(row) if j != label_idx])
        except ValueError as exc:
            raise DatasetError(f"{path}:{line_no}: {exc}") from None
    return Dataset(
        np.asarray(features, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        max(len(label_map), 2),
        name or Path(path).stem,
        tuple(label_map),
    )


def load_libsvm(path, n_features, name=None):
    """Read ``label idx:val ...`` lines with 1-based indices.

    Unlisted features are 0.0. Labels in {-1, +1} map to {0, 1}; {0, 1} is kept;
    any other label set is numbered in sorted order.
    """
    lines = [(i + 1, line) for i, line in enumerate(Path(path).read_text().splitlines()) if line.strip()]
    if not lines:
        raise DatasetError(f"{path}: file is empty")
    features = np.zeros((len(lines), n_features))
    raw_labels = []
    for row, (line_no, line) in enumerate(lines):
        tokens = line.split()
        try:
            raw_labels.append(float(tokens[0]))
        except ValueError:
            raise DatasetError(f"{path}:{line_no}: bad label {tokens[0]!r}") from None
        for pos, tok in enumerate(tokens[1:], start=2):
            idx, sep, val = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                j, v = int(idx), float(val)
            except ValueError:
                raise DatasetError(f"{path}:{line_no}: malformed token {tok!r} at position {pos}") from None
            if not 1 <= j <= n_features:
                raise DatasetError(f"{path}:{line_no}: feature index {j} outside 1..{n_features}")
            features[row, j - 1] = v

    raw = np.asarray(raw_labels)
    distinct = sorted(set(raw_labels))
    if set(distinct) <= {-1.0, 1.0}:
        labels, names = (raw > 0).astype(np.int64), ("-1", "+1")
    elif set(distinct) <= {0.0, 1.0}:
        labels, names = raw.astype(np.int64), ("0", "1")
    else:
        lookup = {v: i for i, v in enumerate(distinct)}
        labels = np.array([lookup[v] for v in raw_labels], dtype=np.int64)
        names = tuple(f"{v:g}" for v in distinct)
    return Dataset(features, labels, max(len(names), 2), name or Path(path).stem, names)


# masking -------------------------------------------------------------------


def _splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return x ^ (x >> np.uint64(31))


def availability_uniforms(seed, steps, n_features):
    """Uniform [0, 1) draws keyed on (seed, step, feature); shape (len(steps), n_features)."""
    steps = np.asarray(steps, dtype=np.uint64).reshape(-1, 1)
    feats = np.arange(n_features, dtype=np.uint64).reshape(1, -1)
    with np.errstate(over="ignore"):
        key = _splitmix64(np.array([seed], dtype=np.uint64) & _MASK64)
        row = _splitmix64(key ^ _splitmix64(steps))
        bits = _splitmix64(row ^ _splitmix64(feats + np.uint64(0x632BE59BD9B4E019)))
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def availability_mask(policy, steps, n_features):
    keep = availability_uniforms(policy.seed, steps, n_features) < policy.p_f
    keep[:, : min(policy.always_available, n_features)] = True
    return keep


class StreamingStandardizer:
    """Running mean/variance per feature (Welford), updated after use.

    Only observed entries update the statistics, and a step is scaled with the
    statistics of earlier steps so no label-time information leaks backward.
    """

    def __init__(self, n_features):
        self.count = np.zeros(n_features)
        self.mean = np.zeros(n_features)
        self.m2 = np.zeros(n_features)

    def transform(self, values):
        std = np.sqrt(np.where(self.count > 1, self.m2 / np.maximum(self.count - 1, 1), 1.0))
        std = np.where(std > 1e-12, std, 1.0)
        return (values - self.mean) / std

    def update(self, values, mask):
        self.count[mask] += 1
        delta = values[mask] - self.mean[mask]
        self.mean[mask] += delta / self.count[mask]
        self.m2[mask] += delta * (values[mask] - self.mean[mask])


def mask_stream(ds, policy, standardize=False, chunk=4096):
    """Yield one :class:`Observation` per dataset row, in order."""
    scaler = StreamingStandardizer(ds.d) if standardize else None
    for start in range(0, ds.T, chunk):
        stop = min(start + chunk, ds.T)
        masks = availability_mask(policy, np.arange(start, stop), ds.d)
        for offset, t in enumerate(range(start, stop)):
            mask = masks[offset]
            raw = ds.features[t]
            values = scaler.transform(raw) if scaler is not None else raw.copy()
            values[~mask] = np.nan
            if scaler is not None:
                scaler.update(raw, mask)
            yield Observation(values, mask, int(ds.labels[t]), t)


def to_concat_input(obs):
    """[values with NA as 0; mask as 0/1], length 2d."""
    values = np.where(obs.mask, obs.values, 0.0)
    values = np.nan_to_num(values, nan=0.0)
    return np.concatenate([values, obs.mask.astype(np.float64)])


def present_features(obs):
    ids = np.flatnonzero(obs.mask)
    return obs.values[ids], ids


def observation_from_row(row, label=0, step=0):
    """Build an observation from a raw row where NaN marks a missing value."""
    row = np.asarray(row, dtype=np.float64)
    mask = ~np.isnan(row)
    return Observation(row, mask, int(label), int(step))


def keep_rate(masks, always_available):
    """Fraction of kept entries among the randomly masked columns."""
    masks = np.asarray(masks)
    sub = masks[:, always_available:]
    return float(sub.mean()) if sub.size else math.nan
