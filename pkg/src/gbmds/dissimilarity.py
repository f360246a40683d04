"""Dissimilarity matrices from observation matrices or token sets.

Supported metrics:

* ``euclidean`` -- L2 distance between real-valued observation rows.
* ``cosine``    -- one minus the cosine similarity of nonnegative rows,
  bounded to [0, 1].
* ``jaccard``   -- one minus the intersection-over-union of token sets,
  bounded to [0, 1].

Per-column weights, when present, multiply the corresponding coordinate
before the metric is evaluated (weighted coordinates, not weighted squared
coordinates).
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, MetricError

METRICS = ("euclidean", "cosine", "jaccard")

# Tolerance for floating-point violations of the [0, 1] range of the
# bounded metrics, and for validating weight normalization.
RANGE_TOL = 1e-12


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class DataMatrix:
    """n observations of q real attributes, with optional column weights."""

    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        values = _as_float_array(self.values, "data matrix")
        if values.ndim != 2:
            raise InputError(f"data matrix must be 2-D, got shape {values.shape}")
        n, q = values.shape
        if n < 3:
            raise InputError(f"need at least 3 observations, got {n}")
        if q < 1:
            raise InputError("need at least one attribute column")
        object.__setattr__(self, "values", values)
        if self.weights is not None:
            w = _as_float_array(self.weights, "column weights")
            if w.shape != (q,):
                raise InputError(f"weights must have shape ({q},), got {w.shape}")
            if np.any(w < 0):
                raise InputError("column weights must be nonnegative")
            if abs(w.sum() - 1.0) > RANGE_TOL:
                raise InputError(f"column weights must sum to 1, got {w.sum()!r}")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    def weighted_values(self) -> np.ndarray:
        """Values with each column scaled by its weight (if weights present)."""
        if self.weights is None:
            return self.values
        return self.values * self.weights[None, :]

    @classmethod
    def from_csv(cls, path, header: bool = False, weights=None) -> "DataMatrix":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            for lineno, row in enumerate(reader, start=1):
                if not row or all(not cell.strip() for cell in row):
                    continue
                if header and lineno == 1:
                    continue
                try:
                    rows.append([float(cell) for cell in row])
                except ValueError as exc:
                    raise InputError(f"{path}: line {lineno}: {exc}") from exc
        if not rows:
            raise InputError(f"{path}: no observations")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise InputError(f"{path}: ragged rows with widths {sorted(widths)}")
        return cls(np.array(rows, dtype=float), weights)


@dataclass(frozen=True)
class TokenSet:
    """A set of opaque string tokens; degenerate marks an unusable empty set."""

    items: frozenset
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "items", frozenset(self.items))
        if len(self.items) == 0 and not self.degenerate:
            raise InputError("empty token set must be flagged degenerate")

    def __len__(self) -> int:
        return len(self.items)


def ngram_tokenize(text: str, n: int, stopwords=None) -> TokenSet:
    """Split text into contiguous n-token subsequences.

    The text is lowercased and split on whitespace; optional stopwords are
    removed before n-grams are formed. Texts with fewer than n surviving
    tokens yield a degenerate-empty token set.
    """
    if n < 1:
        raise InputError(f"n-gram size must be >= 1, got {n}")
    tokens = text.lower().split()
    if stopwords:
        stop = {s.lower() for s in stopwords}
        tokens = [t for t in tokens if t not in stop]
    if len(tokens) < n:
        return TokenSet(frozenset(), degenerate=True)
    grams = {" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}
    return TokenSet(frozenset(grams))


def load_stopwords(path) -> frozenset:
    """One stopword per line; blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def tokenize_documents(path, n: int, stopwords=None) -> list:
    """One document per line of a UTF-8 text file, each n-gram tokenized."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    docs = [line for line in lines if line.strip()]
    if not docs:
        raise InputError(f"{path}: no observations")
    return [ngram_tokenize(doc, n, stopwords) for doc in docs]


def euclidean(x, y) -> float:
    """L2 distance between two equal-length finite vectors."""
    x = _as_float_array(x, "x")
    y = _as_float_array(y, "y")
    if x.shape != y.shape:
        raise MetricError(f"length mismatch: {x.shape} vs {y.shape}")
    return float(np.sqrt(np.sum((x - y) ** 2)))


def cosine(x, y) -> float:
    """Cosine dissimilarity in [0, 1] for nonnegative vectors of positive norm.

    Nonnegativity is required: the [0, 1] range only holds for nonnegative
    inputs, and general vectors are rejected rather than shifted.
    """
    x = _as_float_array(x, "x")
    y = _as_float_array(y, "y")
    if x.shape != y.shape:
        raise MetricError(f"length mismatch: {x.shape} vs {y.shape}")
    if np.any(x < 0) or np.any(y < 0):
        raise MetricError("cosine metric requires nonnegative entries")
    nx = np.sqrt(np.sum(x * x))
    ny = np.sqrt(np.sum(y * y))
    if nx == 0.0 or ny == 0.0:
        raise MetricError("cosine metric undefined for zero-norm vector")
    d = 1.0 - float(np.dot(x, y)) / (nx * ny)
    return _clamp_unit(d)


def jaccard(a: TokenSet, b: TokenSet) -> float:
    """Jaccard dissimilarity 1 - |a & b| / |a | b| in [0, 1]."""
    if len(a) == 0 and len(b) == 0:
        raise MetricError("jaccard metric undefined for two empty token sets")
    inter = len(a.items & b.items)
    union = len(a.items | b.items)
    return _clamp_unit(1.0 - inter / union)


def _clamp_unit(d: float) -> float:
    # Bounded metrics only leave [0, 1] through rounding; anything beyond
    # the tolerance is a real bug upstream.
    if d < -RANGE_TOL or d > 1.0 + RANGE_TOL:
        raise MetricError(f"bounded metric left [0, 1] by more than {RANGE_TOL}: {d!r}")
    return min(max(d, 0.0), 1.0)


@dataclass(frozen=True)
class DissimilarityMatrix:
    """Symmetric nonnegative matrix of pairwise dissimilarities.

    ``upper_bound`` is 1 for the bounded metrics (cosine, jaccard) and
    +inf for euclidean unless overridden.
    """

    values: np.ndarray
    metric: str = "euclidean"
    upper_bound: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = _as_float_array(self.values, "dissimilarity matrix")
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InputError(f"matrix must be square, got shape {values.shape}")
        n = values.shape[0]
        if n < 3:
            raise InputError(f"need at least 3 objects, got {n}")
        if self.metric not in METRICS:
            raise InputError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        asym = np.max(np.abs(values - values.T)) if n else 0.0
        if asym > 1e-9 * max(1.0, np.max(np.abs(values))):
            raise InputError(f"matrix is not symmetric (max asymmetry {asym!r})")
        values = 0.5 * (values + values.T)
        np.fill_diagonal(values, 0.0)
        if np.any(values < 0):
            raise InputError("dissimilarities must be nonnegative")
        ub = self.upper_bound
        if ub is None:
            ub = 1.0 if self.metric in ("cosine", "jaccard") else np.inf
        if not ub > 0:
            raise InputError(f"upper bound must be positive, got {ub!r}")
        if self.metric in ("cosine", "jaccard"):
            if np.any(values > 1.0 + RANGE_TOL):
                raise InputError(f"{self.metric} dissimilarities must lie in [0, 1]")
            values = np.minimum(values, 1.0)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "upper_bound", float(ub))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.n * (self.n - 1) // 2

    def condensed(self) -> np.ndarray:
        """Upper-triangle entries in row-major (i < j) order."""
        iu, ju = np.triu_indices(self.n, k=1)
        return self.values[iu, ju]

    def prefix(self, n: int) -> "DissimilarityMatrix":
        """Submatrix over the first n objects."""
        if not 3 <= n <= self.n:
            raise InputError(f"prefix size must be in [3, {self.n}], got {n}")
        return DissimilarityMatrix(self.values[:n, :n].copy(), self.metric, self.upper_bound)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, self.values, delimiter=",", fmt="%.17g")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path, metric: str = "euclidean", upper_bound=None) -> "DissimilarityMatrix":
        try:
            values = np.loadtxt(path, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from exc
        return cls(values, metric, upper_bound)


def build_matrix(data, metric: str) -> DissimilarityMatrix:
    """Apply a metric pairwise to observations or token sets.

    ``data`` may be a DataMatrix, a raw (n, q) array, or a list of TokenSet.
    Jaccard requires token sets; euclidean and cosine require numeric rows.
    """
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}; expected one of {METRICS}")

    if isinstance(data, (list, tuple)) and data and isinstance(data[0], TokenSet):
        if metric != "jaccard":
            raise MetricError(f"{metric} metric takes numeric rows, not token sets")
        return _build_jaccard(list(data))

    if metric == "jaccard":
        raise MetricError("jaccard metric requires token sets")
    if not isinstance(data, DataMatrix):
        data = DataMatrix(np.asarray(data, dtype=float))
    values = data.weighted_values()
    n = values.shape[0]

    if metric == "euclidean":
        diff = values[:, None, :] - values[None, :, :]
        out = np.sqrt(np.sum(diff * diff, axis=-1))
        return DissimilarityMatrix(out, "euclidean")

    # cosine
    if np.any(values < 0):
        bad = int(np.argwhere(np.any(values < 0, axis=1))[0][0])
        raise MetricError(f"observation {bad}: cosine metric requires nonnegative entries")
    norms = np.sqrt(np.sum(values * values, axis=1))
    if np.any(norms == 0.0):
        bad = int(np.argwhere(norms == 0.0)[0][0])
        raise MetricError(f"observation {bad}: cosine metric undefined for zero-norm vector")
    sims = (values @ values.T) / np.outer(norms, norms)
    out = 1.0 - sims
    if np.any(out < -RANGE_TOL) or np.any(out > 1.0 + RANGE_TOL):
        raise MetricError(f"cosine dissimilarity left [0, 1] by more than {RANGE_TOL}")
    out = np.clip(out, 0.0, 1.0)
    return DissimilarityMatrix(out, "cosine")


def _build_jaccard(sets: list) -> DissimilarityMatrix:
    n = len(sets)
    if n < 3:
        raise InputError(f"need at least 3 objects, got {n}")
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            try:
                out[i, j] = out[j, i] = jaccard(sets[i], sets[j])
            except MetricError as exc:
                raise MetricError(f"pair ({i}, {j}): {exc}") from exc
    return DissimilarityMatrix(out, "jaccard")
