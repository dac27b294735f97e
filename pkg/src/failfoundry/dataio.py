"""Tabular data container, CSV ingestion and feature engineering.

A :class:`Dataset` holds named, typed columns with an explicit missingness
mask. Numeric and date columns are stored as ``float64`` arrays with ``nan``
marking a missing value; categorical columns are object arrays of ``str``
with ``None`` marking a missing value.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from ._rng import partial_shuffle, derive_seed

NUMERIC = "numeric"
CATEGORICAL = "categorical"
DATE = "date"
KINDS = (NUMERIC, CATEGORICAL, DATE)

NA_TOKENS = ("", "NA")


class DataParseError(ValueError):
    """Raised when a CSV file cannot be parsed into a Dataset."""


class ConfigError(ValueError):
    """Raised for invalid user-supplied configuration."""


@dataclass
class Dataset:
    """Column-typed table with sample ids and optional binary labels."""

    ids: np.ndarray
    columns: list
    kinds: list
    data: list
    labels: np.ndarray = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.columns = list(self.columns)
        self.kinds = list(self.kinds)
        n = len(self.ids)
        if len(self.columns) != len(self.kinds) or len(self.columns) != len(self.data):
            raise ValueError("columns, kinds and data must have equal length")
        if len(set(self.columns)) != len(self.columns):
            dup = sorted({c for c in self.columns if self.columns.count(c) > 1})
            raise ValueError(f"duplicate column names: {dup}")
        if len(np.unique(self.ids)) != n:
            raise ValueError("sample ids must be unique")
        data = []
        for name, kind, col in zip(self.columns, self.kinds, self.data):
            if kind not in KINDS:
                raise ValueError(f"column {name!r}: unknown kind {kind!r}")
            if kind == CATEGORICAL:
                col = np.asarray(col, dtype=object)
            else:
                col = np.asarray(col, dtype=np.float64)
            if col.shape != (n,):
                raise ValueError(f"column {name!r} has {col.shape[0]} entries, expected {n}")
            data.append(col)
        self.data = data
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise ValueError("labels must have one entry per row")
            if not np.all((labels == 0) | (labels == 1)):
                raise ValueError("labels must be 0 or 1")
            self.labels = labels.astype(np.int64)

    @classmethod
    def from_arrays(cls, X, y=None, ids=None, columns=None):
        """Build an all-numeric Dataset from a 2-d array (``nan`` = NA)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        n, p = X.shape
        if columns is None:
            columns = [f"f{j}" for j in range(p)]
        if ids is None:
            ids = np.arange(n)
        return cls(ids, columns, [NUMERIC] * p, [X[:, j].copy() for j in range(p)], y)

    @property
    def n_rows(self):
        return len(self.ids)

    @property
    def n_cols(self):
        return len(self.columns)

    @property
    def mask(self):
        """Binary matrix, 1 where a measurement exists and 0 where NA."""
        m = np.ones((self.n_rows, self.n_cols), dtype=np.uint8)
        for j, (kind, col) in enumerate(zip(self.kinds, self.data)):
            if kind == CATEGORICAL:
                m[:, j] = np.array([v is not None for v in col], dtype=np.uint8)
            else:
                m[:, j] = ~np.isnan(col)
        return m

    @property
    def X(self):
        """Float feature matrix (``nan`` = NA). Categorical columns are rejected."""
        bad = [c for c, k in zip(self.columns, self.kinds) if k == CATEGORICAL]
        if bad:
            raise ConfigError(f"categorical columns must be one-hot encoded first: {bad}")
        if not self.columns:
            return np.empty((self.n_rows, 0))
        return np.column_stack(self.data)

    def column(self, name):
        return self.data[self._index(name)]

    def kind(self, name):
        return self.kinds[self._index(name)]

    def _index(self, name):
        try:
            return self.columns.index(name)
        except ValueError:
            raise KeyError(f"unknown column {name!r}") from None

    def take(self, rows):
        """Row subset (indices or boolean mask), preserving column layout."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.ids[rows], self.columns, self.kinds,
                       [col[rows] for col in self.data], labels)

    def select(self, names):
        idx = [self._index(n) for n in names]
        return Dataset(self.ids, [self.columns[i] for i in idx], [self.kinds[i] for i in idx],
                       [self.data[i] for i in idx], self.labels)

    def drop(self, names):
        names = set(names)
        return self.select([c for c in self.columns if c not in names])

    def with_column(self, name, kind, values):
        return Dataset(self.ids, self.columns + [name], self.kinds + [kind],
                       self.data + [values], self.labels)

    def with_labels(self, labels):
        return Dataset(self.ids, self.columns, self.kinds, self.data, labels)

    def equals(self, other):
        """Exact equality, treating NA == NA."""
        if not isinstance(other, Dataset):
            return False
        if (self.columns != other.columns or self.kinds != other.kinds
                or not np.array_equal(self.ids, other.ids)):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        for kind, a, b in zip(self.kinds, self.data, other.data):
            if kind == CATEGORICAL:
                if list(a) != list(b):
                    return False
            elif not np.array_equal(a, b, equal_nan=True):
                return False
        return True


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def read_schema(path):
    """Read a two-column ``column,kind`` schema file into a dict."""
    schema = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise DataParseError(f"{path}:{lineno}: expected 'column,kind'")
            name, kind = row[0].strip(), row[1].strip().lower()
            if name == "column" and kind == "kind":
                continue
            if kind not in KINDS:
                raise DataParseError(f"{path}:{lineno}: unknown kind {kind!r}")
            schema[name] = kind
    return schema


def load_csv(path, schema=None, id_column="Id", label_column="Response"):
    """Load a CSV file into a :class:`Dataset`.

    Parameters
    ----------
    path : str or path-like
        File with a header row. Empty fields and the literal ``NA`` are missing.
    schema : dict, optional
        Maps column name to one of ``numeric``, ``categorical``, ``date``.
        Unlisted columns are numeric.
    id_column, label_column : str
        Special columns. Either may be absent from the file; ids then default
        to the row position.
    """
    schema = dict(schema or {})
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataParseError(f"{path}: empty file, header row required") from None
        seen = set()
        for name in header:
            if name in seen:
                raise DataParseError(f"{path}:1: duplicate column name {name!r}")
            seen.add(name)
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise DataParseError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            rows.append((reader.line_num, row))

    unknown = set(schema) - set(header)
    if unknown:
        raise DataParseError(f"{path}: schema names columns absent from header: {sorted(unknown)}")

    def parse_float(token, lineno, name):
        if token in NA_TOKENS:
            return math.nan
        try:
            return float(token)
        except ValueError:
            raise DataParseError(
                f"{path}:{lineno}: non-numeric value {token!r} in column {name!r}") from None

    ids = None
    labels = None
    columns, kinds, data = [], [], []
    for j, name in enumerate(header):
        tokens = [(lineno, row[j]) for lineno, row in rows]
        if name == id_column:
            try:
                ids = [int(t) for _, t in tokens]
            except ValueError as exc:
                raise DataParseError(f"{path}: invalid id value ({exc})") from None
        elif name == label_column:
            try:
                labels = [int(float(t)) for _, t in tokens]
            except ValueError as exc:
                raise DataParseError(f"{path}: invalid label value ({exc})") from None
        else:
            kind = schema.get(name, NUMERIC)
            if kind == CATEGORICAL:
                col = np.array([None if t in NA_TOKENS else t for _, t in tokens], dtype=object)
            else:
                col = np.array([parse_float(t, ln, name) for ln, t in tokens], dtype=np.float64)
            columns.append(name)
            kinds.append(kind)
            data.append(col)
    if ids is None:
        ids = np.arange(len(rows))
    try:
        return Dataset(ids, columns, kinds, data, labels)
    except ValueError as exc:
        raise DataParseError(f"{path}: {exc}") from None


def _fmt(v):
    if isinstance(v, float) and math.isnan(v):
        return ""
    return format(v, ".17g")


def save_csv(d, path, id_column="Id", label_column="Response"):
    """Write ``d`` so that :func:`load_csv` reproduces it exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [id_column] + d.columns
        if d.labels is not None:
            header.append(label_column)
        writer.writerow(header)
        for i in range(d.n_rows):
            row = [str(int(d.ids[i]))]
            for kind, col in zip(d.kinds, d.data):
                v = col[i]
                row.append("" if v is None else (v if kind == CATEGORICAL else _fmt(float(v))))
            if d.labels is not None:
                row.append(str(int(d.labels[i])))
            writer.writerow(row)


def save_schema(d, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["column", "kind"])
        for name, kind in zip(d.columns, d.kinds):
            writer.writerow([name, kind])


# ---------------------------------------------------------------------------
# Feature engineering
# ---------------------------------------------------------------------------

def time_on_line(d, date_columns):
    """Per-row span (max minus min) of the non-missing date values.

    Rows whose dates are all missing get ``nan``.
    """
    date_columns = list(date_columns)
    if not date_columns:
        raise ConfigError("time_on_line needs at least one date column")
    for name in date_columns:
        if d.kind(name) != DATE:
            raise ConfigError(f"column {name!r} is not a date column")
    T = np.column_stack([d.column(c) for c in date_columns])
    out = np.full(d.n_rows, np.nan)
    present = ~np.isnan(T).all(axis=1)
    Tp = T[present]
    out[present] = np.nanmax(Tp, axis=1) - np.nanmin(Tp, axis=1)
    return out


def add_time_on_line(d, date_columns, name="time_on_line"):
    return d.with_column(name, NUMERIC, time_on_line(d, date_columns))


def one_hot(d, cat_columns):
    """Replace each categorical column by 0/1 indicator columns ``col=level``.

    Levels are ordered lexicographically; missing categories get all zeros.
    """
    out = d
    for name in cat_columns:
        if d.kind(name) != CATEGORICAL:
            raise ConfigError(f"column {name!r} is not categorical")
        col = d.column(name)
        levels = sorted({v for v in col if v is not None})
        out = out.drop([name])
        for level in levels:
            ind = np.array([1.0 if v == level else 0.0 for v in col])
            out = out.with_column(f"{name}={level}", NUMERIC, ind)
    return out


def undersample(d, ratio=10.0, seed=0):
    """Keep every positive row and ``floor(ratio * n_pos)`` random negatives.

    Negatives are drawn without replacement by a seeded partial Fisher-Yates
    shuffle; the number drawn is capped at the negatives available. Row order
    of the input is preserved in the output.
    """
    if d.labels is None:
        raise ConfigError("undersampling needs labels")
    if ratio < 0:
        raise ConfigError("ratio must be non-negative")
    pos = np.flatnonzero(d.labels == 1)
    neg = np.flatnonzero(d.labels == 0)
    if len(pos) == 0:
        raise ConfigError("no positive samples: negatives-per-positive ratio undefined")
    k = min(int(math.floor(ratio * len(pos))), len(neg))
    chosen = np.array(partial_shuffle(neg.tolist(), k, seed), dtype=np.int64)
    keep = np.sort(np.concatenate([pos, chosen]))
    return d.take(keep)


@dataclass
class SplitSpec:
    """Validation hold-out fraction and seed."""

    validation_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie strictly between 0 and 1")


def train_validation_split(d, spec=None):
    """Stratified split into (train, validation) datasets."""
    spec = spec or SplitSpec()
    if d.labels is None:
        raise ConfigError("split needs labels")
    valid = []
    for cls in (0, 1):
        idx = np.flatnonzero(d.labels == cls).tolist()
        k = int(round(spec.validation_fraction * len(idx)))
        valid.extend(partial_shuffle(idx, k, derive_seed(spec.seed, cls)))
    is_valid = np.zeros(d.n_rows, dtype=bool)
    is_valid[np.array(valid, dtype=np.int64)] = True
    return d.take(~is_valid), d.take(is_valid)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Parameters of the synthetic failure-detection generator.

    Features are standard normal. ``coefficients`` plants a logistic model on
    the first ``len(coefficients)`` features; the intercept is calibrated so
    that the expected positive rate equals ``positive_rate`` unless
    ``intercept`` is given. With ``n_part_types > 1`` each row is assigned a
    part type and only that type's block of features (plus the ``n_shared``
    leading features) is measured.
    """

    n_rows: int = 1000
    n_features: int = 10
    positive_rate: float = 0.05
    coefficients: tuple = ()
    intercept: float = None
    n_part_types: int = 1
    n_shared: int = None
    block_overlap: int = 0
    n_date_columns: int = 0
    n_categorical_columns: int = 0
    seed: int = 0


def _block_ranges(n_block_features, n_types, overlap):
    edges = np.linspace(0, n_block_features, n_types + 1).round().astype(int)
    return [(edges[t], min(n_block_features, edges[t + 1] + overlap)) for t in range(n_types)]


def make_synthetic(spec=None, return_truth=False, **kwargs):
    """Generate a labeled Dataset from a planted logistic model.

    Returns the Dataset, or ``(dataset, truth)`` with ``return_truth=True``
    where ``truth`` holds the true probabilities, part types, intercept and
    coefficients.
    """
    if spec is None:
        spec = SyntheticSpec(**kwargs)
    elif kwargs:
        raise TypeError("pass either a SyntheticSpec or keyword arguments")
    if not 0.0 < spec.positive_rate < 1.0:
        raise ConfigError("positive_rate must lie strictly between 0 and 1")
    beta = np.asarray(spec.coefficients, dtype=np.float64)
    p = spec.n_features
    if len(beta) > p:
        raise ConfigError("more planted coefficients than features")
    if spec.n_part_types < 1:
        raise ConfigError("n_part_types must be >= 1")
    n_shared = p if spec.n_part_types == 1 and spec.n_shared is None else (spec.n_shared or 0)
    if n_shared > p:
        raise ConfigError("n_shared exceeds n_features")
    if spec.n_part_types > 1 and p - n_shared < spec.n_part_types:
        raise ConfigError("not enough block features for the requested part types")

    rng = np.random.default_rng(spec.seed)
    n = spec.n_rows
    X = rng.standard_normal((n, p))
    types = rng.integers(0, spec.n_part_types, size=n)
    present = np.ones((n, p), dtype=bool)
    if spec.n_part_types > 1:
        present[:, n_shared:] = False
        for t, (lo, hi) in enumerate(_block_ranges(p - n_shared, spec.n_part_types,
                                                   spec.block_overlap)):
            present[np.ix_(types == t, np.arange(n_shared + lo, n_shared + hi))] = True

    coef = np.zeros(p)
    coef[:len(beta)] = beta
    signal = np.where(present, X, 0.0) @ coef
    if spec.intercept is not None:
        b0 = float(spec.intercept)
    elif not np.any(coef):
        b0 = float(logit(spec.positive_rate))
    else:
        target = spec.positive_rate
        b0 = brentq(lambda b: expit(b + signal).mean() - target, -60.0, 60.0, xtol=1e-14)
    prob = expit(b0 + signal)
    labels = (rng.random(n) < prob).astype(np.int64)

    X = np.where(present, X, np.nan)
    columns = [f"f{j}" for j in range(p)]
    kinds = [NUMERIC] * p
    data = [X[:, j] for j in range(p)]
    if spec.n_date_columns:
        start = rng.uniform(0.0, 1000.0, size=n)
        steps = rng.exponential(5.0, size=(n, spec.n_date_columns)).cumsum(axis=1)
        dates = start[:, None] + steps
        dates[rng.random(dates.shape) < 0.2] = np.nan
        for j in range(spec.n_date_columns):
            columns.append(f"d{j}")
            kinds.append(DATE)
            data.append(dates[:, j])
    for j in range(spec.n_categorical_columns):
        levels = np.array(["A", "B", "C", "D"], dtype=object)
        col = levels[rng.integers(0, len(levels), size=n)]
        col[rng.random(n) < 0.1] = None
        columns.append(f"c{j}")
        kinds.append(CATEGORICAL)
        data.append(col)

    d = Dataset(np.arange(n), columns, kinds, data, labels)
    if return_truth:
        truth = {"probabilities": prob, "part_types": types, "intercept": b0,
                 "coefficients": coef, "present": present}
        return d, truth
    return d
