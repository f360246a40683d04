"""Classical multidimensional scaling and the STRESS criterion."""

import warnings

import numpy as np

from .dissimilarity import DissimilarityMatrix
from .errors import InputError, NonEuclideanWarning, RankDeficiencyWarning


def _square_values(D) -> np.ndarray:
    if isinstance(D, DissimilarityMatrix):
        return D.values
    arr = np.asarray(D, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InputError(f"expected a square matrix, got shape {arr.shape}")
    return arr


def classical_mds(D, p: int) -> np.ndarray:
    """Embed a dissimilarity matrix in p dimensions by double centering.

    Double-centers -D^2/2, takes the top-p eigenpairs of the result and
    scales each eigenvector by the square root of its eigenvalue. Negative
    eigenvalues (non-Euclidean input) are clamped to zero with a warning;
    if fewer than p eigenvalues are positive the trailing coordinates are
    zero, also with a warning. The output is centered at the origin, with
    a deterministic sign convention (first nonzero component of each
    eigenvector is positive).
    """
    values = _square_values(D)
    n = values.shape[0]
    if not 1 <= p <= n - 1:
        raise InputError(f"dimension must satisfy 1 <= p <= n - 1 = {n - 1}, got {p}")

    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (values**2) @ J
    B = 0.5 * (B + B.T)
    try:
        eigvals, eigvecs = np.linalg.eigh(B)
    except np.linalg.LinAlgError as exc:
        raise InputError(f"eigendecomposition failed: {exc}") from exc

    # Descending eigenvalue, ties broken by ascending original index.
    order = np.lexsort((np.arange(n), -eigvals))
    eigvals = eigvals[order][:p]
    eigvecs = eigvecs[:, order][:, :p]

    tol = 1e-12 * max(1.0, float(np.max(np.abs(eigvals))) if n else 1.0)
    if np.any(eigvals < -tol):
        warnings.warn(
            "dissimilarities are not Euclidean; negative eigenvalues clamped to zero",
            NonEuclideanWarning,
            stacklevel=2,
        )
    n_positive = int(np.sum(eigvals > tol))
    if n_positive < p:
        warnings.warn(
            f"only {n_positive} positive eigenvalues for requested dimension {p}; "
            "trailing coordinates are zero",
            RankDeficiencyWarning,
            stacklevel=2,
        )

    for k in range(p):
        v = eigvecs[:, k]
        nz = np.nonzero(np.abs(v) > 1e-12)[0]
        if nz.size and v[nz[0]] < 0:
            eigvecs[:, k] = -v

    coords = eigvecs * np.sqrt(np.where(eigvals > tol, eigvals, 0.0))[None, :]
    coords -= coords.mean(axis=0, keepdims=True)
    return coords


def similarity_embedding(D, p: int) -> np.ndarray:
    """Spectral embedding matched to the cosine latent metric.

    Factorizes the similarity matrix S = 1 - D (unit diagonal) through its
    top-p eigenpairs, so the embedded points' inner products, and hence their
    cosine distances, approximate the data directly. Bounded dissimilarities
    embedded as Euclidean coordinates would not preserve angles.
    """
    values = _square_values(D)
    n = values.shape[0]
    if not 1 <= p <= n - 1:
        raise InputError(f"dimension must satisfy 1 <= p <= n - 1 = {n - 1}, got {p}")
    S = 1.0 - values
    np.fill_diagonal(S, 1.0)
    S = 0.5 * (S + S.T)
    eigvals, eigvecs = np.linalg.eigh(S)
    order = np.lexsort((np.arange(n), -eigvals))
    eigvals = eigvals[order][:p]
    eigvecs = eigvecs[:, order][:, :p]
    tol = 1e-12 * max(1.0, float(np.max(np.abs(eigvals))))
    if int(np.sum(eigvals > tol)) < p:
        warnings.warn(
            f"similarity matrix has fewer than {p} positive eigenvalues; "
            "trailing coordinates are zero",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    for k in range(p):
        v = eigvecs[:, k]
        nz = np.nonzero(np.abs(v) > 1e-12)[0]
        if nz.size and v[nz[0]] < 0:
            eigvecs[:, k] = -v
    return eigvecs * np.sqrt(np.maximum(eigvals, 0.0))[None, :]


def initial_embedding(D, p: int, metric: str = "euclidean") -> np.ndarray:
    """Deterministic starting configuration for a given latent metric."""
    if metric == "cosine":
        return similarity_embedding(D, p)
    return classical_mds(D, p)


def stress(D, fitted) -> float:
    """Normalized residual criterion sqrt(sum (d - fit)^2 / sum d^2) over i > j."""
    values = _square_values(D)
    n = values.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    d = values[iu, ju]

    fitted = np.asarray(fitted, dtype=float)
    if fitted.shape == values.shape:
        f = fitted[iu, ju]
    elif fitted.shape == d.shape:
        f = fitted
    else:
        raise InputError(
            f"fitted distances must be {values.shape} or condensed {d.shape}, got {fitted.shape}"
        )

    denom = np.sum(d * d)
    if denom <= 0.0:
        raise InputError("STRESS undefined for an all-zero dissimilarity matrix")
    return float(np.sqrt(np.sum((d - f) ** 2) / denom))
