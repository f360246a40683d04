"""Posterior summaries: mode extraction, alignment, credible regions,
Bayes factors, and model/dimension sweeps."""

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import chi2

from .cmds import stress
from .dissimilarity import DissimilarityMatrix
from .errors import DegenerateInputWarning, GBMDSError, InputError
from .model import ModelSpec, latent_distances, sum_squared_residuals
from .smc import ParticleCloud


def posterior_mode(cloud: ParticleCloud, D: DissimilarityMatrix, metric: str) -> np.ndarray:
    """The particle configuration with the smallest sum of squared residuals.

    The residual term dominates the posterior density, so the minimum-SSR
    particle serves as the approximate posterior mode.
    """
    if cloud.n_particles == 0:
        raise InputError("cannot take the mode of an empty cloud")
    d = D.condensed()
    ssr = np.array(
        [sum_squared_residuals(d, latent_distances(s.X, metric)) for s in cloud.states]
    )
    return cloud.states[int(np.argmin(ssr))].X.copy()


def procrustes(X, target, scale: bool = True) -> np.ndarray:
    """Least-squares similarity alignment of X onto a target configuration.

    Centers both configurations, applies the optimal orthogonal map from the
    SVD of the cross-covariance (reflections allowed), optionally the optimal
    scale, and translates to the target centroid. With ``scale=False`` the
    alignment is rigid.
    """
    X = np.asarray(X, dtype=float)
    target = np.asarray(target, dtype=float)
    if X.shape != target.shape:
        raise InputError(f"shape mismatch: {X.shape} vs {target.shape}")
    mu_x = X.mean(axis=0)
    mu_t = target.mean(axis=0)
    Xc = X - mu_x
    Tc = target - mu_t

    norm_sq = float(np.sum(Xc * Xc))
    if norm_sq == 0.0:
        warnings.warn(
            "degenerate configuration with zero spread; translation-only alignment",
            DegenerateInputWarning,
            stacklevel=2,
        )
        return Xc + mu_t

    U, svals, Vt = np.linalg.svd(Xc.T @ Tc)
    R = U @ Vt
    s = float(np.sum(svals)) / norm_sq if scale else 1.0
    return s * (Xc @ R) + mu_t


@dataclass(frozen=True)
class CredibleRegion:
    """Per-object region: a covariance ellipse for p = 2, axis intervals otherwise.

    ``axes`` holds the semi-axis lengths (eigen directions for p = 2,
    marginal halfwidths otherwise); ``angle`` is the orientation of the first
    ellipse axis in radians, or None when p != 2.
    """

    center: np.ndarray
    axes: np.ndarray
    angle: float | None
    level: float

    def to_record(self, index: int) -> dict:
        return {
            "object": index,
            "center": [float(v) for v in self.center],
            "axes": [float(v) for v in self.axes],
            "angle": None if self.angle is None else float(self.angle),
            "level": self.level,
        }


def credible_ellipses(samples, level: float = 0.95) -> list:
    """Gaussian credible regions per object from aligned posterior samples.

    ``samples`` has shape (n_samples, n, p). For p = 2 the region is the
    ellipse (z - mu)' S^-1 (z - mu) <= chi2(p, level); for other p each axis
    gets a marginal interval. Singular covariances are regularized with a
    warning.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3:
        raise InputError(f"samples must have shape (n_samples, n, p), got {samples.shape}")
    n_samples, n, p = samples.shape
    if not 0.0 < level < 1.0:
        raise InputError(f"level must lie in (0, 1), got {level}")
    if n_samples < p + 1:
        raise InputError(f"need at least p + 1 = {p + 1} samples per object, got {n_samples}")

    regions = []
    warned = False
    for i in range(n):
        pts = samples[:, i, :]
        mu = pts.mean(axis=0)
        cov = np.cov(pts, rowvar=False, ddof=1).reshape(p, p)
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals[0] <= 1e-12 * max(eigvals[-1], 1.0):
            if not warned:
                warnings.warn(
                    "singular per-object covariance regularized",
                    DegenerateInputWarning,
                    stacklevel=2,
                )
                warned = True
            cov = cov + 1e-12 * max(eigvals[-1], 1.0) * np.eye(p)
        if p == 2:
            vals, vecs = np.linalg.eigh(cov)
            vals = vals[::-1]
            vecs = vecs[:, ::-1]
            radius = chi2.ppf(level, df=p)
            axes = np.sqrt(radius * np.maximum(vals, 0.0))
            angle = float(np.arctan2(vecs[1, 0], vecs[0, 0]))
            regions.append(CredibleRegion(mu, axes, angle, level))
        else:
            half = np.sqrt(chi2.ppf(level, df=1) * np.diag(cov))
            regions.append(CredibleRegion(mu, half, None, level))
    return regions


@dataclass(frozen=True)
class BayesFactor:
    """Evidence ratio with its conventional strength label.

    ``favored`` is 1 or 2 for the supported model, 0 for an exact tie; the
    strength applies to whichever model is favored (the reciprocal is used
    when the ratio is below 1).
    """

    value: float
    favored: int
    strength: str

    def describe(self) -> str:
        if self.favored == 0:
            return "equal support (Bayes factor 1)"
        return f"{self.strength} evidence for model {self.favored}"


def bayes_factor(log_marginal_1: float, log_marginal_2: float) -> BayesFactor:
    """exp(logM1 - logM2) with the weak/substantial/strong scale.

    Ratios in (1, 3] are weak, (3, 10] substantial, above 10 strong; ratios
    below 1 are labeled by their reciprocal in favor of model 2.
    """
    if not (np.isfinite(log_marginal_1) and np.isfinite(log_marginal_2)):
        raise InputError("log marginal likelihoods must be finite")
    log_bf = log_marginal_1 - log_marginal_2
    value = float(np.exp(log_bf))
    if log_bf == 0.0:
        return BayesFactor(1.0, 0, "weak")
    # Thresholds applied in log space so the 3 and 10 boundaries are exact.
    magnitude = abs(log_bf)
    if magnitude <= np.log(3.0):
        strength = "weak"
    elif magnitude <= np.log(10.0):
        strength = "substantial"
    else:
        strength = "strong"
    return BayesFactor(value, 1 if log_bf > 0 else 2, strength)


@dataclass
class FitResult:
    """Everything a single engine run produces, posterior-aligned."""

    mode: np.ndarray
    samples: np.ndarray
    regions: list | None
    stress: float
    log_marginal: float
    n_iterations: int
    schedule: np.ndarray
    acceptance: np.ndarray
    family: str
    metric: str
    p: int
    n_objects: int

    def summary_dict(self) -> dict:
        return {
            "family": self.family,
            "metric": self.metric,
            "p": self.p,
            "n_objects": self.n_objects,
            "log_marginal": self.log_marginal,
            "stress": self.stress,
            "n_iterations": self.n_iterations,
            "mean_acceptance": float(np.mean(self.acceptance)) if len(self.acceptance) else None,
        }


def summarize_run(result, D: DissimilarityMatrix, spec: ModelSpec,
                  ellipse_level: float = 0.95) -> FitResult:
    """Build a FitResult from an engine run: mode, aligned samples, regions, STRESS."""
    cloud = result.cloud
    mode = posterior_mode(cloud, D, spec.metric)
    samples = np.stack([procrustes(s.X, mode) for s in cloud.states])
    regions = None
    if samples.shape[0] >= spec.p + 1:
        regions = credible_ellipses(samples, ellipse_level)
    fitted = latent_distances(mode, spec.metric)
    return FitResult(
        mode=mode,
        samples=samples,
        regions=regions,
        stress=stress(D, fitted),
        log_marginal=result.log_marginal,
        n_iterations=result.n_iterations,
        schedule=np.asarray(result.schedule),
        acceptance=np.array([rec.acceptance for rec in result.records]),
        family=spec.family,
        metric=spec.metric,
        p=spec.p,
        n_objects=D.n,
    )


@dataclass(frozen=True)
class SweepCell:
    family: str
    metric: str
    p: int
    log_marginal: float | None
    stress: float | None
    n_iterations: int | None
    seed: int
    error: str | None = None

    @property
    def valid(self) -> bool:
        return self.error is None


@dataclass
class ComparisonTable:
    """Model-comparison grid; the winner maximizes the log marginal likelihood."""

    cells: list
    winner_index: int | None

    @property
    def winner(self) -> SweepCell | None:
        return None if self.winner_index is None else self.cells[self.winner_index]

    def to_csv_text(self) -> str:
        lines = ["family,metric,p,log_marginal,stress,n_iterations,seed,error"]
        for cell in self.cells:
            lines.append(
                ",".join(
                    [
                        cell.family,
                        cell.metric,
                        str(cell.p),
                        "" if cell.log_marginal is None else f"{cell.log_marginal:.17g}",
                        "" if cell.stress is None else f"{cell.stress:.17g}",
                        "" if cell.n_iterations is None else str(cell.n_iterations),
                        str(cell.seed),
                        "" if cell.error is None else cell.error.replace(",", ";"),
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "cells": [
                {
                    "family": c.family,
                    "metric": c.metric,
                    "p": c.p,
                    "log_marginal": c.log_marginal,
                    "stress": c.stress,
                    "n_iterations": c.n_iterations,
                    "seed": c.seed,
                    "error": c.error,
                }
                for c in self.cells
            ],
            "winner_index": self.winner_index,
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


def _cell_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((int(master_seed), 101, index)).generate_state(1)[0])


def sweep(D: DissimilarityMatrix, families, metrics, dims, config, hyper=None,
          workers: int = 1) -> ComparisonTable:
    """One engine run per (family, metric, p) grid cell.

    Cell seeds derive from the master seed and the cell's grid position, so
    the table is reproducible and independent of execution order. Failing
    cells are recorded with their error and the sweep continues.
    """
    from .adaptive import fit_gbmds

    grid = [(f, me, int(p)) for f in families for me in metrics for p in dims]
    if not grid:
        raise InputError("empty sweep grid")

    def run_cell(item):
        index, (family, metric, p) = item
        seed = _cell_seed(config.seed, index)
        spec = ModelSpec(family=family, metric=metric, p=p)
        try:
            fit = fit_gbmds(
                D,
                spec,
                hyper=hyper,
                config=_with_seed(config, seed),
            )
            return SweepCell(family, metric, p, fit.log_marginal, fit.stress,
                             fit.n_iterations, seed)
        except (GBMDSError, np.linalg.LinAlgError) as exc:
            return SweepCell(family, metric, p, None, None, None, seed, error=str(exc))

    items = list(enumerate(grid))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run_cell, items))
    else:
        cells = [run_cell(item) for item in items]

    winner = None
    for i, cell in enumerate(cells):
        if cell.valid and (winner is None or cell.log_marginal > cells[winner].log_marginal):
            winner = i
    return ComparisonTable(cells=cells, winner_index=winner)


def _with_seed(config, seed: int):
    return replace(config, seed=seed)
