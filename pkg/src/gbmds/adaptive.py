"""Batch-wise incremental inference.

Data arriving in batches is handled by rerunning the annealed SMC engine on
each growing prefix of the dissimilarity matrix. The first batch anchors its
latent reference on the classical MDS embedding; later batches center the
reference for previously seen objects on the previous posterior (weighted
particle means with a pooled covariance) and draw the new objects from their
prior. Every batch conditions on all pairwise dissimilarities among the
objects seen so far, not just the new pairs.
"""

from dataclasses import dataclass, replace

import numpy as np

from .dissimilarity import DataMatrix, DissimilarityMatrix, TokenSet, build_matrix
from .errors import InputError
from .model import HyperParams, ModelSpec
from .postprocess import FitResult, summarize_run
from .smc import (
    GBMDSTarget,
    LatentReference,
    ParticleCloud,
    SMCConfig,
    cmds_reference,
    run_asmc,
)

# Regularization added to the pooled posterior covariance so the reference
# stays sampleable even for a degenerate cloud.
_COV_JITTER = 1e-8


@dataclass(frozen=True)
class BatchPlan:
    """Strictly increasing object counts 0 < n_1 < ... < n_B = n, with n_1 >= 3."""

    boundaries: tuple

    def __post_init__(self):
        bounds = tuple(int(b) for b in self.boundaries)
        if not bounds:
            raise InputError("batch plan needs at least one boundary")
        if bounds[0] < 3:
            raise InputError(f"first batch must hold at least 3 objects, got {bounds[0]}")
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise InputError(f"batch boundaries must be strictly increasing, got {bounds}")
        object.__setattr__(self, "boundaries", bounds)

    @property
    def n_batches(self) -> int:
        return len(self.boundaries)

    @property
    def n_total(self) -> int:
        return self.boundaries[-1]

    @classmethod
    def single(cls, n: int) -> "BatchPlan":
        return cls((n,))

    @classmethod
    def uniform(cls, n: int, batch_size: int) -> "BatchPlan":
        if batch_size < 1:
            raise InputError(f"batch size must be positive, got {batch_size}")
        bounds = list(range(batch_size, n, batch_size))
        if not bounds or bounds[0] < 3:
            bounds = [max(3, batch_size)] + [b for b in bounds if b > max(3, batch_size)]
        if bounds[-1] != n:
            bounds.append(n)
        return cls(tuple(b for b in bounds if b <= n))


def reference_from_posterior(cloud: ParticleCloud, n_prev: int) -> LatentReference:
    """Previous-posterior reference: weighted per-object means, pooled covariance.

    The covariance is the weighted spread of the particles around each
    object's mean, pooled over objects and regularized, and is shared by all
    old objects. Particles should already be aligned (the non-identifiable
    rotation removed) before calling this.
    """
    samples = np.stack([s.X for s in cloud.states])
    return _reference_from_arrays(samples, cloud.weights, n_prev)


def _reference_from_arrays(samples: np.ndarray, weights: np.ndarray, n_prev: int,
                           n_new: int = 0) -> LatentReference:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3:
        raise InputError(f"samples must have shape (K, n, p), got {samples.shape}")
    K, n, p = samples.shape
    if not 1 <= n_prev <= n:
        raise InputError(f"n_prev must lie in [1, {n}], got {n_prev}")
    w = np.asarray(weights, dtype=float)
    if w.shape != (K,):
        raise InputError(f"weights must have shape ({K},), got {w.shape}")
    w = w / w.sum()

    block = samples[:, :n_prev, :]
    centers = np.einsum("k,kip->ip", w, block)
    centered = block - centers[None, :, :]
    pooled = np.einsum("k,kip,kiq->pq", w, centered, centered) / n_prev
    pooled = 0.5 * (pooled + pooled.T) + _COV_JITTER * np.eye(p)
    return LatentReference(centers=centers, cov=pooled, n_new=n_new)


def _prefix_provider(data):
    """Normalize the accepted data forms into  n -> DissimilarityMatrix."""
    if callable(data):
        return data, None
    if isinstance(data, DissimilarityMatrix):
        return (lambda n: data.prefix(n)), data.n
    if isinstance(data, DataMatrix) or (
        isinstance(data, (list, tuple)) and data and isinstance(data[0], TokenSet)
    ):
        raise InputError(
            "raw observations need a metric; pass (data, metric) through "
            "run_adaptive's data_metric argument or prebuild the matrix"
        )
    raise InputError(f"cannot interpret {type(data).__name__} as dissimilarity data")


def run_adaptive(data, plan: BatchPlan, spec: ModelSpec, config: SMCConfig,
                 hyper: HyperParams | None = None, data_metric: str | None = None,
                 diagnostics_dir=None) -> list:
    """Run the engine once per batch; returns one FitResult per batch.

    ``data`` may be a full DissimilarityMatrix (prefixes are sliced out of
    it), a callable mapping an object count to a DissimilarityMatrix, a raw
    observation array, or a list of token sets; the last two require
    ``data_metric``.
    """
    if data_metric is not None:
        full = build_matrix(data, data_metric)
        provider, n_total = (lambda n: full.prefix(n)), full.n
    else:
        provider, n_total = _prefix_provider(data)
    if n_total is not None and plan.n_total != n_total:
        raise InputError(
            f"batch plan ends at {plan.n_total} objects but the data holds {n_total}"
        )

    results = []
    reference = None
    n_prev = 0
    for b, n_b in enumerate(plan.boundaries, start=1):
        try:
            D_b = provider(n_b)
            if D_b.n != n_b:
                raise InputError(f"provider returned {D_b.n} objects, expected {n_b}")
            hyper_b = hyper if hyper is not None else HyperParams.from_cmds(D_b, spec)
            if b == 1:
                reference = cmds_reference(D_b, spec.p, metric=spec.metric)
            else:
                reference = LatentReference(
                    centers=reference.centers, cov=reference.cov, n_new=n_b - n_prev
                )
            target = GBMDSTarget(
                D_b,
                spec,
                hyper_b,
                reference,
                step_scale=config.step_scale,
                subset_fraction=config.subset_fraction,
                mh_sweeps=config.mh_sweeps,
            )
            batch_config = _batch_config(config, b)
            diag_path = None
            if diagnostics_dir is not None:
                diag_path = f"{diagnostics_dir}/diagnostics_batch{b}.csv"
            run = run_asmc(target, batch_config, diagnostics_path=diag_path)
        except Exception as exc:
            raise _annotate_batch(exc, b) from exc
        fit = summarize_run(run, D_b, spec)
        results.append(fit)

        # Reference for the next batch: weighted moments of the aligned cloud.
        reference = _reference_from_arrays(fit.samples, run.cloud.weights, n_b)
        n_prev = n_b
    return results


def _annotate_batch(exc: Exception, batch: int) -> Exception:
    try:
        return type(exc)(f"batch {batch}: {exc}")
    except Exception:
        return exc


def fit_gbmds(D: DissimilarityMatrix, spec: ModelSpec, config: SMCConfig,
              hyper: HyperParams | None = None, diagnostics_dir=None) -> FitResult:
    """Single-batch fit: one engine run with the classical-MDS reference."""
    return run_adaptive(
        D, BatchPlan.single(D.n), spec, config, hyper=hyper, diagnostics_dir=diagnostics_dir
    )[0]


def _batch_config(config: SMCConfig, batch: int) -> SMCConfig:
    if batch == 1:
        return config
    child = int(np.random.SeedSequence((int(config.seed), 202, batch)).generate_state(1)[0])
    return replace(config, seed=child)
