"""Adaptive annealed sequential Monte Carlo.

The engine bridges from an easy reference distribution (annealing parameter
tau = 0) to the posterior (tau = 1) through targets proportional to

    (likelihood * prior)^tau * reference^(1 - tau).

Each iteration reweights the previous particles by

    log w_incr = dtau * (log posterior - log reference),

chooses the next tau by bisection so the relative conditional effective
sample size hits a threshold phi, moves every particle with a tau-invariant
Metropolis-Hastings/Gibbs kernel, accumulates the running log marginal
likelihood as log sum_k W_k * w_incr_k, and multinomially resamples whenever
the relative effective sample size drops below a threshold epsilon.

The engine only sees the :class:`AnnealedTarget` surface, so oracle targets
with closed-form evidence plug straight in. Targets may optionally provide
``*_batch`` hooks that evaluate a whole particle list at once; the bundled
GBMDS target uses them to vectorize over particles.

Randomness is drawn from counter-based streams derived from (seed, stream,
iteration, particle), which makes every run bitwise reproducible regardless
of how many worker threads evaluate the particles.
"""

import abc
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dissimilarity import DissimilarityMatrix
from .errors import (
    DegenerateInputWarning,
    InputError,
    IterationLimitError,
    NumericalError,
)
from .model import (
    HyperParams,
    ModelSpec,
    ParticleState,
    _log_gamma_pdf,
    _log_invgamma,
    latent_distances,
    log_latent_gaussian,
    log_prior_parts,
    tsn_log_likelihood,
    tt_log_likelihood,
)

# RNG stream identifiers; entropy tuples are (seed, stream, *counters).
_STREAM_REFERENCE = 0
_STREAM_PROPAGATE = 1
_STREAM_RESAMPLE = 2
_STREAM_FINAL = 3


def _stream_rng(seed, stream, *counters) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), stream, *map(int, counters))))


class AnnealedTarget(abc.ABC):
    """What the engine needs to know about a model.

    ``propagate`` must leave the tau-annealed bridge density invariant and
    return the moved state together with an acceptance indicator in [0, 1].
    """

    @abc.abstractmethod
    def reference_log_density(self, state) -> float: ...

    @abc.abstractmethod
    def posterior_log_density(self, state) -> float: ...

    @abc.abstractmethod
    def sample_reference(self, rng: np.random.Generator): ...

    @abc.abstractmethod
    def propagate(self, state, tau: float, rng: np.random.Generator): ...


@dataclass(frozen=True)
class SMCConfig:
    """Engine settings; the defaults suit the desk-scale experiments."""

    n_particles: int = 200
    rcess_threshold: float = 0.8
    resample_threshold: float = 0.5
    seed: int = 0
    step_scale: float | None = None
    bisection_tol: float = 1e-10
    max_iterations: int = 10_000
    subset_fraction: float = 1.0
    mh_sweeps: int = 2
    workers: int = 1
    fixed_schedule: tuple | None = None

    def __post_init__(self):
        if self.n_particles < 2:
            raise InputError(f"need at least 2 particles, got {self.n_particles}")
        if not 1.0 / self.n_particles < self.rcess_threshold < 1.0:
            raise InputError(
                f"rCESS threshold must lie in (1/K, 1), got {self.rcess_threshold}"
            )
        if not 0.0 < self.resample_threshold <= 1.0:
            raise InputError(
                f"resampling threshold must lie in (0, 1], got {self.resample_threshold}"
            )
        if not 0.0 < self.subset_fraction <= 1.0:
            raise InputError(f"subset fraction must lie in (0, 1], got {self.subset_fraction}")
        if self.max_iterations < 1:
            raise InputError("iteration cap must be positive")
        if self.mh_sweeps < 1:
            raise InputError("need at least one MH sweep per propagation")
        if self.workers < 1:
            raise InputError("worker count must be positive")
        if self.step_scale is not None and self.step_scale <= 0:
            raise InputError("step scale must be positive")
        if self.fixed_schedule is not None:
            sched = tuple(float(t) for t in self.fixed_schedule)
            if not sched or abs(sched[-1] - 1.0) > 0:
                raise InputError("a fixed schedule must end at 1")
            taus = (0.0,) + sched
            if any(b <= a for a, b in zip(taus, taus[1:])):
                raise InputError("a fixed schedule must be strictly increasing in (0, 1]")
            object.__setattr__(self, "fixed_schedule", sched)


@dataclass
class ParticleCloud:
    """K weighted particles, the annealing schedule so far, and the running logM."""

    states: list
    log_weights: np.ndarray
    schedule: list
    log_marginal: float = 0.0
    iteration: int = 0

    @property
    def n_particles(self) -> int:
        return len(self.states)

    @property
    def weights(self) -> np.ndarray:
        return normalized_weights(self.log_weights)


@dataclass(frozen=True)
class IterationRecord:
    """Per-iteration diagnostics.

    ``log_incremental`` keeps the per-particle incremental log-weights so the
    running marginal-likelihood product can be reconstructed after the fact.
    """

    iteration: int
    tau: float
    ress: float
    acceptance: float
    log_marginal: float
    rcess: float
    log_marginal_increment: float
    resampled: bool
    log_incremental: np.ndarray = None


@dataclass
class ASMCResult:
    cloud: ParticleCloud
    log_marginal: float
    schedule: np.ndarray
    n_iterations: int
    records: list


def normalized_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - np.max(lw))
    return w / w.sum()


def ress(weights) -> float:
    """Relative effective sample size 1 / (K * sum W^2), in [1/K, 1]."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / (w.size * np.sum(w * w)))


def rcess(weights, log_incremental) -> float:
    """Relative conditional ESS (sum Ww)^2 / sum W w^2, via log-sum-exp."""
    w = np.asarray(weights, dtype=float)
    lw = np.asarray(log_incremental, dtype=float)
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    num = logsumexp(log_w + lw)
    if not np.isfinite(num):
        raise NumericalError("all incremental weights vanished in the rCESS computation")
    den = logsumexp(log_w + 2.0 * lw)
    return float(np.exp(2.0 * num - den))


def next_tau(tau_prev, weights, log_density_gap, phi, tol=1e-10) -> float:
    """Smallest annealing increment whose rCESS hits phi, by bisection.

    ``log_density_gap`` is (log posterior - log reference) at the previous
    states, so the incremental weights at a candidate tau are
    (tau - tau_prev) * gap. rCESS decreases in tau; if even tau = 1 keeps
    rCESS above phi the schedule finishes there. Interior solutions satisfy
    |rcess - phi| <= tol.
    """
    if not tau_prev < 1.0:
        raise InputError(f"previous tau must be below 1, got {tau_prev}")
    gap = np.asarray(log_density_gap, dtype=float)

    def f(tau):
        return rcess(weights, (tau - tau_prev) * gap)

    if f(1.0) >= phi:
        return 1.0
    lo, hi = tau_prev, 1.0
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if abs(val - phi) <= tol:
            return mid
        if val > phi:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17:
            break
    return mid


class _TargetOps:
    """Uniform batch interface over a target, threaded when no batch hooks exist."""

    def __init__(self, target, workers: int):
        self.target = target
        self.batched = hasattr(target, "propagate_batch")
        self.workers = max(1, int(workers))
        self._pool = None

    def __enter__(self):
        if not self.batched and self.workers > 1:
            self._pool = ThreadPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None
        return False

    def _map(self, fn, items):
        if self._pool is not None:
            return list(self._pool.map(fn, items))
        return [fn(item) for item in items]

    def sample_reference(self, n_particles: int, rng: np.random.Generator) -> list:
        if hasattr(self.target, "sample_reference_batch"):
            return self.target.sample_reference_batch(n_particles, rng)
        return [self.target.sample_reference(rng) for _ in range(n_particles)]

    def log_densities(self, states):
        if hasattr(self.target, "log_densities"):
            return self.target.log_densities(states)
        post = np.array(self._map(self.target.posterior_log_density, states), dtype=float)
        ref = np.array(self._map(self.target.reference_log_density, states), dtype=float)
        return post, ref

    def propagate(self, states, tau: float, seed, iteration: int):
        """Move all particles; returns (states, acceptance, log_post, log_ref)."""
        if self.batched:
            rng = _stream_rng(seed, _STREAM_PROPAGATE, iteration)
            return self.target.propagate_batch(states, tau, rng)

        def move(item):
            k, state = item
            rng = _stream_rng(seed, _STREAM_PROPAGATE, iteration, k)
            return self.target.propagate(state, tau, rng)

        moved = self._map(move, list(enumerate(states)))
        new_states = [s for s, _ in moved]
        acc = float(np.mean([a for _, a in moved]))
        post, ref = self.log_densities(new_states)
        return new_states, acc, post, ref


def initialize_particles(target, n_particles: int, rng) -> ParticleCloud:
    """Draw K particles from the reference; uniform weights, tau = 0, logM = 0."""
    if n_particles < 2:
        raise InputError(f"need at least 2 particles, got {n_particles}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    with _TargetOps(target, workers=1) as ops:
        states = ops.sample_reference(n_particles, rng)
    return ParticleCloud(
        states=states,
        log_weights=np.zeros(n_particles),
        schedule=[0.0],
        log_marginal=0.0,
        iteration=0,
    )


def incremental_log_weights(cloud: ParticleCloud, d_tau: float, target) -> np.ndarray:
    """log w_incr = dtau * (posterior - reference) at the previous-iteration states."""
    tau_prev = cloud.schedule[-1]
    if d_tau < 0 or tau_prev + d_tau > 1.0 + 1e-12:
        raise InputError(f"annealing increment {d_tau} leaves [0, 1] from tau = {tau_prev}")
    with _TargetOps(target, workers=1) as ops:
        post, ref = ops.log_densities(cloud.states)
    bad = ~(np.isfinite(post) & np.isfinite(ref))
    if np.any(bad):
        raise NumericalError(
            f"non-finite log-density for particle {int(np.argmax(bad))}"
        )
    return d_tau * (post - ref)


def multinomial_resample(cloud: ParticleCloud, rng: np.random.Generator) -> ParticleCloud:
    """K iid categorical draws by weight; the result carries uniform weights."""
    idx = resample_indices(cloud.weights, rng)
    return ParticleCloud(
        states=[cloud.states[i] for i in idx],
        log_weights=np.zeros(cloud.n_particles),
        schedule=list(cloud.schedule),
        log_marginal=cloud.log_marginal,
        iteration=cloud.iteration,
    )


def resample_indices(weights, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return rng.choice(w.size, size=w.size, replace=True, p=w / w.sum())


class _DiagnosticsWriter:
    """Streams one CSV row per iteration: r, tau, rESS, acceptance, running logM."""

    HEADER = "iteration,tau,ress,acceptance,log_marginal\n"

    def __init__(self, path):
        self.handle = open(path, "w", encoding="utf-8") if path is not None else None
        if self.handle is not None:
            self.handle.write(self.HEADER)

    def write(self, rec: IterationRecord):
        if self.handle is not None:
            self.handle.write(
                f"{rec.iteration},{rec.tau:.17g},{rec.ress:.17g},"
                f"{rec.acceptance:.17g},{rec.log_marginal:.17g}\n"
            )
            self.handle.flush()

    def close(self):
        if self.handle is not None:
            self.handle.close()
            self.handle = None


def run_asmc(target, config: SMCConfig, diagnostics_path=None) -> ASMCResult:
    """Run the adaptive annealed SMC loop until tau reaches 1.

    Returns the final equal-weight cloud (an extra multinomial resample is
    applied at the end), the accumulated log marginal likelihood, the
    realized annealing schedule, and per-iteration diagnostics.
    """
    K = config.n_particles
    seed = config.seed
    writer = _DiagnosticsWriter(diagnostics_path)
    try:
        with _TargetOps(target, config.workers) as ops:
            rng_init = _stream_rng(seed, _STREAM_REFERENCE)
            states = ops.sample_reference(K, rng_init)
            post, ref = ops.log_densities(states)
            _require_finite(post, ref)

            log_w = np.zeros(K)
            tau = 0.0
            log_marginal = 0.0
            schedule = [0.0]
            records = []
            r = 0
            while tau < 1.0:
                r += 1
                if r > config.max_iterations:
                    raise IterationLimitError(
                        f"annealing schedule did not reach 1 within {config.max_iterations} "
                        "iterations; the rCESS threshold is too close to 1"
                    )
                weights = normalized_weights(log_w)
                gap = post - ref
                if config.fixed_schedule is not None:
                    if r > len(config.fixed_schedule):
                        raise InputError("fixed schedule exhausted before reaching tau = 1")
                    tau_new = config.fixed_schedule[r - 1]
                else:
                    tau_new = next_tau(
                        tau, weights, gap, config.rcess_threshold, config.bisection_tol
                    )
                d_tau = tau_new - tau
                log_incr = d_tau * gap
                rcess_val = rcess(weights, log_incr)

                # log sum_k W_k w_incr_k, written so zero increments give
                # exactly zero.
                total_prev = logsumexp(log_w)
                increment = logsumexp(log_w + log_incr) - total_prev
                log_marginal += increment
                log_w = log_w + log_incr
                weights = normalized_weights(log_w)

                states, acceptance, post, ref = ops.propagate(states, tau_new, seed, r)
                _require_finite(post, ref)

                tau = tau_new
                schedule.append(tau)
                ress_val = ress(weights)
                resampled = False
                if tau < 1.0 and ress_val < config.resample_threshold:
                    rng_res = _stream_rng(seed, _STREAM_RESAMPLE, r)
                    idx = resample_indices(weights, rng_res)
                    states = [states[i] for i in idx]
                    post = post[idx]
                    ref = ref[idx]
                    log_w = np.zeros(K)
                    resampled = True
                records.append(
                    IterationRecord(
                        iteration=r,
                        tau=tau,
                        ress=ress_val,
                        acceptance=acceptance,
                        log_marginal=log_marginal,
                        rcess=rcess_val,
                        log_marginal_increment=increment,
                        resampled=resampled,
                        log_incremental=log_incr,
                    )
                )
                writer.write(records[-1])

            # Extra resample so the returned particles carry equal weight.
            weights = normalized_weights(log_w)
            rng_final = _stream_rng(seed, _STREAM_FINAL)
            idx = resample_indices(weights, rng_final)
            states = [states[i] for i in idx]
            cloud = ParticleCloud(
                states=states,
                log_weights=np.zeros(K),
                schedule=schedule,
                log_marginal=log_marginal,
                iteration=r,
            )
            return ASMCResult(
                cloud=cloud,
                log_marginal=log_marginal,
                schedule=np.asarray(schedule),
                n_iterations=r,
                records=records,
            )
    finally:
        writer.close()


def _require_finite(post, ref):
    bad = ~(np.isfinite(post) & np.isfinite(ref))
    if np.any(bad):
        raise NumericalError(f"non-finite log-density for particle {int(np.argmax(bad))}")


# --------------------------------------------------------------------------
# The GBMDS target and its propagation kernel
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LatentReference:
    """Reference law for the latent configuration.

    The first ``centers.shape[0]`` objects get independent Gaussians with the
    shared covariance ``cov``; the remaining ``n_new`` objects use the prior
    N(0, diag(lambda)) of whichever particle is being evaluated.
    """

    centers: np.ndarray
    cov: np.ndarray
    n_new: int = 0

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        p = centers.shape[1]
        if cov.shape != (p, p):
            raise InputError(f"reference covariance must be ({p}, {p}), got {cov.shape}")
        if np.max(np.abs(cov - cov.T)) > 1e-10:
            raise InputError("reference covariance must be symmetric")
        if self.n_new < 0:
            raise InputError("n_new must be nonnegative")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def n_objects(self) -> int:
        return self.centers.shape[0] + self.n_new


def cmds_reference(D: DissimilarityMatrix, p: int, spread: float | None = None,
                   metric: str = "euclidean") -> LatentReference:
    """First-batch reference: Gaussians centered on a spectral embedding.

    Euclidean latents use the classical MDS embedding; cosine latents use the
    similarity-matrix factorization matched to that metric. The default
    spread concentrates the particles around the embedding while matching the
    posterior's information-based coordinate variance p * (SSR/m) / (n - 1),
    capped at the embedding's own mean squared coordinate so the reference
    never drowns the configuration scale. An explicit ``spread`` overrides
    this.
    """
    from .cmds import initial_embedding

    centers = initial_embedding(D, p, metric)
    if spread is None:
        if metric == "cosine":
            safe = centers.copy()
            norms = np.sqrt(np.sum(safe * safe, axis=1))
            safe[norms < 1e-12, 0] += 1e-8
            delta0 = latent_distances(safe, "cosine")
        else:
            iu, ju = np.triu_indices(D.n, k=1)
            delta0 = np.sqrt(np.sum((centers[iu] - centers[ju]) ** 2, axis=-1))
        msr = float(np.sum((D.condensed() - delta0) ** 2)) / D.n_pairs
        coord_scale = float(np.mean(centers**2))
        spread = p * msr / (D.n - 1.0)
        if coord_scale > 0:
            spread = min(spread, coord_scale)
        spread = max(spread, 1e-8)
    return LatentReference(centers=centers, cov=spread * np.eye(p), n_new=0)


class GBMDSTarget(AnnealedTarget):
    """Annealed target for one dissimilarity matrix under one model family.

    The propagation kernel follows the reference recipe: Gibbs draws for the
    prior covariance diagonal (and, for the Student-t family, the per-pair
    precision multipliers), then one joint Gaussian random-walk
    Metropolis-Hastings move on (X, sigma2[, psi]) accepted by the ratio of
    tau-annealed targets.
    """

    def __init__(self, D: DissimilarityMatrix, spec: ModelSpec, hyper: HyperParams,
                 reference: LatentReference, step_scale: float | None = None,
                 subset_fraction: float = 1.0, mh_sweeps: int = 1):
        if reference.n_objects != D.n:
            raise InputError(
                f"reference covers {reference.n_objects} objects but D has {D.n}"
            )
        if hyper.beta.shape not in ((1,), (spec.p,)):
            raise InputError(
                f"beta must have one entry per dimension ({spec.p}), got {hyper.beta.shape}"
            )
        self.D = D
        self.spec = spec
        self.hyper = hyper
        self.reference = reference
        self.upper = spec.resolve_upper_bound(D)
        self.n = D.n
        self.p = spec.p
        self.m = D.n_pairs

        d = D.condensed()
        if np.any(d <= 0):
            warnings.warn(
                "zero dissimilarities perturbed to 1e-12; the model support excludes 0",
                DegenerateInputWarning,
                stacklevel=2,
            )
            d = np.maximum(d, 1e-12)
        if np.any(d > self.upper):
            raise InputError(
                f"dissimilarities exceed the model upper bound {self.upper}"
            )
        self.d = d

        if not 0.0 < subset_fraction <= 1.0:
            raise InputError(f"subset fraction must lie in (0, 1], got {subset_fraction}")
        self.subset_fraction = float(subset_fraction)
        if mh_sweeps < 1:
            raise InputError(f"need at least one MH sweep, got {mh_sweeps}")
        self.mh_sweeps = int(mh_sweeps)
        # Joint random-walk scaling over all n*p latent coordinates; the
        # classic 2.38^2 / dimension rule with the full perturbed dimension.
        if step_scale is not None:
            self.step_scale = float(step_scale)
        else:
            self.step_scale = 2.38**2 / (self.n * self.p)

        self.n_ref = reference.centers.shape[0]
        try:
            self._ref_chol = np.linalg.cholesky(reference.cov)
        except np.linalg.LinAlgError as exc:
            raise InputError(f"reference covariance is not positive definite: {exc}") from exc
        self._ref_cov_inv = np.linalg.inv(reference.cov)
        self._ref_logdet = float(np.linalg.slogdet(reference.cov)[1])

    # -- density pieces ----------------------------------------------------

    def _log_likelihood(self, delta, sigma2, psi, zeta) -> np.ndarray:
        if self.spec.family == "tt":
            return tt_log_likelihood(self.d, delta, sigma2, zeta, self.upper)
        shape = np.zeros_like(np.asarray(sigma2, dtype=float)) if self.spec.family == "tn" else psi
        return tsn_log_likelihood(self.d, delta, sigma2, shape, self.upper)

    def _log_posterior_arrays(self, X, sigma2, psi, lam, zeta):
        delta = latent_distances(X, self.spec.metric)
        ll = self._log_likelihood(delta, sigma2, psi, zeta)
        lp = log_prior_parts(X, sigma2, psi, lam, zeta, self.hyper, self.spec.family)
        return ll + lp, delta

    def _log_reference_arrays(self, X, sigma2, psi, lam, zeta):
        n_ref, p = self.n_ref, self.p
        centered = X[..., :n_ref, :] - self.reference.centers
        quad = np.einsum("...ij,jk,...ik->...", centered, self._ref_cov_inv, centered)
        out = -0.5 * (n_ref * (p * np.log(2.0 * np.pi) + self._ref_logdet) + quad)
        if self.reference.n_new:
            X_new = X[..., n_ref:, :]
            lam_arr = np.asarray(lam, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                gauss = -0.5 * (
                    self.reference.n_new * np.sum(np.log(2.0 * np.pi * lam_arr), axis=-1)
                    + np.sum(np.sum(X_new * X_new, axis=-2) / lam_arr, axis=-1)
                )
            out = out + gauss
        out = out + _param_log_prior(sigma2, psi, lam, zeta, self.hyper, self.spec.family)
        return out

    # -- single-state surface ------------------------------------------------

    def posterior_log_density(self, state: ParticleState) -> float:
        post, _ = self._log_posterior_arrays(
            state.X, state.sigma2, state.psi, state.lam, state.zeta
        )
        return float(post)

    def reference_log_density(self, state: ParticleState) -> float:
        return float(
            self._log_reference_arrays(state.X, state.sigma2, state.psi, state.lam, state.zeta)
        )

    def sample_reference(self, rng: np.random.Generator) -> ParticleState:
        return self.sample_reference_batch(1, rng)[0]

    def propagate(self, state: ParticleState, tau: float, rng: np.random.Generator):
        states, acc, _, _ = self.propagate_batch([state], tau, rng)
        return states[0], acc

    # -- batch surface -------------------------------------------------------

    def sample_reference_batch(self, n_particles: int, rng: np.random.Generator) -> list:
        K, n, p, m = n_particles, self.n, self.p, self.m
        hyper = self.hyper
        beta = np.broadcast_to(hyper.beta, (p,))
        lam = 1.0 / rng.gamma(hyper.alpha, 1.0 / beta, size=(K, p))
        sigma2 = 1.0 / rng.gamma(hyper.a, 1.0 / hyper.b, size=K)
        if self.spec.family == "tsn":
            psi = rng.uniform(hyper.c, hyper.d, size=K)
        else:
            psi = np.zeros(K)
        zeta = None
        if self.spec.family == "tt":
            zeta = rng.gamma(hyper.nu / 2.0, 2.0 / hyper.nu, size=(K, m))
        X = np.empty((K, n, p))
        X[:, : self.n_ref, :] = self.reference.centers + (
            rng.standard_normal((K, self.n_ref, p)) @ self._ref_chol.T
        )
        if self.reference.n_new:
            X[:, self.n_ref :, :] = rng.standard_normal(
                (K, self.reference.n_new, p)
            ) * np.sqrt(lam)[:, None, :]
        return self._unstack(X, sigma2, psi, lam, zeta)

    def log_densities(self, states):
        X, sigma2, psi, lam, zeta = self._stack(states)
        post, _ = self._log_posterior_arrays(X, sigma2, psi, lam, zeta)
        ref = self._log_reference_arrays(X, sigma2, psi, lam, zeta)
        return post, ref

    def propagate_batch(self, states, tau: float, rng: np.random.Generator):
        X, sigma2, psi, lam, zeta = self._stack(states)
        delta = latent_distances(X, self.spec.metric)
        acc = 0.0
        post = ref = None
        for _ in range(self.mh_sweeps):
            X, sigma2, psi, lam, zeta, delta, post, ref, acc_sweep = self._kernel_sweep(
                X, sigma2, psi, lam, zeta, delta, tau, rng
            )
            acc += acc_sweep
        return (
            self._unstack(X, sigma2, psi, lam, zeta),
            acc / self.mh_sweeps,
            post,
            ref,
        )

    def _kernel_sweep(self, X, sigma2, psi, lam, zeta, delta, tau, rng):
        """One Gibbs + joint-MH cycle on stacked particle arrays."""
        K, n, p, m = X.shape[0], self.n, self.p, self.m
        hyper = self.hyper
        family = self.spec.family

        # (i) Gibbs update of the prior covariance diagonal. The exact
        # conditional under the tau-bridge: the latent prior enters with
        # power tau for objects whose reference is the fixed Gaussian, and
        # with power 1 for objects whose reference IS the prior (the prior
        # factor then cancels between posterior and reference). At tau = 0
        # this reduces to a prior redraw, at tau = 1 to the full conditional
        # InvGamma(alpha + n/2, beta_k + sum x^2 / 2).
        n_ref = self.n_ref
        u_ref = np.sum(X[..., :n_ref, :] ** 2, axis=-2)
        u_new = np.sum(X[..., n_ref:, :] ** 2, axis=-2)
        beta = np.broadcast_to(hyper.beta, (p,))
        shape_lam = hyper.alpha + 0.5 * (tau * n_ref + self.reference.n_new)
        rate_lam = beta + 0.5 * (tau * u_ref + u_new)
        lam = 1.0 / rng.gamma(shape_lam, 1.0 / rate_lam)

        resid = self.d - delta

        # (ii) Gibbs update of the precision multipliers from the conditional
        # Gamma((tau + nu)/2, nu/2 + tau * resid^2 / (2 sigma2)); the weak
        # zeta-dependence of the truncation normalizer is neglected, as in
        # the conditional it derives from. At tau = 0 this is a prior redraw.
        if family == "tt":
            rate = tau * resid * resid / (2.0 * sigma2[:, None]) + hyper.nu / 2.0
            zeta = rng.gamma((tau + hyper.nu) / 2.0, 1.0 / rate, size=(K, m))

        ll_cur = self._log_likelihood(delta, sigma2, psi, zeta)
        lp_cur = log_prior_parts(X, sigma2, psi, lam, zeta, hyper, family)
        post_cur = ll_cur + lp_cur
        ref_cur = self._log_reference_arrays(X, sigma2, psi, lam, zeta)
        gamma_cur = _combine(tau, post_cur, ref_cur)

        # (iii) Joint Gaussian random-walk move on (X, sigma2[, psi]). The
        # sigma2 proposal spread follows the variance of
        # InvGamma(a + m/2, b + SSR/2) at the current residuals.
        ssr = np.sum(resid * resid, axis=-1)
        shape_sig = hyper.a + 0.5 * m
        scale_sig = hyper.b + 0.5 * ssr
        prop_var = scale_sig**2 / ((shape_sig - 1.0) ** 2 * (shape_sig - 2.0))

        noise = rng.standard_normal((K, n, p)) * np.sqrt(
            self.step_scale * sigma2 / (n - 1.0)
        )[:, None, None]
        if self.subset_fraction < 1.0:
            n_upd = max(1, round(self.subset_fraction * n))
            u = rng.random((K, n))
            chosen = np.argpartition(u, n_upd - 1, axis=1)[:, :n_upd]
            mask = np.zeros((K, n), dtype=bool)
            np.put_along_axis(mask, chosen, True, axis=1)
            noise = noise * mask[:, :, None]
        X_prop = X + noise
        sigma2_prop = sigma2 + rng.standard_normal(K) * np.sqrt(prop_var)
        if family == "tsn":
            psi_prop = psi + 0.1 * rng.standard_normal(K)
        else:
            psi_prop = psi

        valid = sigma2_prop > 0.0
        sigma2_safe = np.where(valid, sigma2_prop, 1.0)
        delta_prop = latent_distances(X_prop, self.spec.metric)
        ll_prop = self._log_likelihood(delta_prop, sigma2_safe, psi_prop, zeta)
        lp_prop = log_prior_parts(X_prop, sigma2_safe, psi_prop, lam, zeta, hyper, family)
        ref_prop = self._log_reference_arrays(X_prop, sigma2_safe, psi_prop, lam, zeta)
        gamma_prop = np.where(valid, _combine(tau, ll_prop + lp_prop, ref_prop), -np.inf)

        log_u = np.log(rng.random(K))
        # -inf - -inf gives NaN, and NaN comparisons are False: a move between
        # two zero-density states is rejected, as it should be.
        with np.errstate(invalid="ignore"):
            accept = log_u < (gamma_prop - gamma_cur)

        X = np.where(accept[:, None, None], X_prop, X)
        sigma2 = np.where(accept, sigma2_prop, sigma2)
        psi = np.where(accept, psi_prop, psi)
        delta = np.where(accept[:, None], delta_prop, delta)
        post = np.where(accept, ll_prop + lp_prop, post_cur)
        ref = np.where(accept, ref_prop, ref_cur)

        # (iv) Metropolized near-conjugate move for sigma2: propose from the
        # inverse-gamma conditional implied by the Gaussian part of the
        # tau-annealed likelihood and correct for the neglected truncation
        # (and skew) factors. Random walks cannot cross between the inflated-
        # variance and precision-partitioned modes of the Student-t family;
        # this move can.
        sigma2, post, ref = self._scale_jump(
            X, sigma2, psi, lam, zeta, delta, tau, rng, post, ref
        )

        # (v) Symmetry moves on the configuration: global rotations and axis
        # reflections preserve every pairwise distance (Euclidean and cosine
        # alike), so only the prior and reference terms enter the ratio. They
        # decorrelate the orientation degrees of freedom that coordinate-wise
        # random walks traverse too slowly.
        X, lam_post, ref = self._orientation_move(
            X, sigma2, psi, lam, zeta, tau, rng, ref
        )
        post = post + lam_post
        return X, sigma2, psi, lam, zeta, delta, post, ref, float(np.mean(accept))

    def _scale_jump(self, X, sigma2, psi, lam, zeta, delta, tau, rng, post_cur, ref_cur):
        K = X.shape[0]
        hyper = self.hyper
        resid = self.d - delta
        weighted = resid * resid if zeta is None else zeta * resid * resid
        shape_g = hyper.a + 0.5 * tau * self.m
        rate_g = hyper.b + 0.5 * tau * np.sum(weighted, axis=-1)
        sigma2_prop = 1.0 / rng.gamma(shape_g, 1.0 / rate_g)

        ll_prop = self._log_likelihood(delta, sigma2_prop, psi, zeta)
        lp_prop = log_prior_parts(X, sigma2_prop, psi, lam, zeta, hyper, self.spec.family)
        ref_prop = self._log_reference_arrays(X, sigma2_prop, psi, lam, zeta)
        gamma_prop = _combine(tau, ll_prop + lp_prop, ref_prop)
        gamma_cur = _combine(tau, post_cur, ref_cur)
        log_q_prop = _log_invgamma(sigma2_prop, shape_g, rate_g)
        log_q_cur = _log_invgamma(sigma2, shape_g, rate_g)
        with np.errstate(invalid="ignore"):
            accept = np.log(rng.random(K)) < (gamma_prop - gamma_cur + log_q_cur - log_q_prop)
        sigma2 = np.where(accept, sigma2_prop, sigma2)
        post = np.where(accept, ll_prop + lp_prop, post_cur)
        ref = np.where(accept, ref_prop, ref_cur)
        return sigma2, post, ref

    def _orientation_move(self, X, sigma2, psi, lam, zeta, tau, rng, ref_cur):
        K, p = X.shape[0], self.p
        lp_x_cur = log_latent_gaussian(X, lam)
        delta_post = np.zeros(K)
        for kind in ("rotate", "reflect", "translate"):
            if kind == "rotate":
                if p < 2:
                    continue
                theta = 0.3 * rng.standard_normal(K)
                a0 = rng.integers(0, p, size=K)[:, None, None]
                a1 = ((a0[:, 0, 0] + 1 + rng.integers(0, p - 1, size=K)) % p)[:, None, None]
                col0 = np.take_along_axis(X, a0, axis=2)
                col1 = np.take_along_axis(X, a1, axis=2)
                c = np.cos(theta)[:, None, None]
                s = np.sin(theta)[:, None, None]
                X_prop = X.copy()
                np.put_along_axis(X_prop, a0, c * col0 - s * col1, axis=2)
                np.put_along_axis(X_prop, a1, s * col0 + c * col1, axis=2)
            elif kind == "reflect":
                axis = rng.integers(0, p, size=K)[:, None, None]
                X_prop = X.copy()
                np.put_along_axis(X_prop, axis, -np.take_along_axis(X, axis, axis=2), axis=2)
            else:
                if self.spec.metric != "euclidean":
                    continue
                shift = rng.standard_normal((K, p)) * np.sqrt(
                    np.mean(lam, axis=-1) / self.n
                )[:, None]
                X_prop = X + shift[:, None, :]
            lp_x_prop = log_latent_gaussian(X_prop, lam)
            ref_prop = self._log_reference_arrays(X_prop, sigma2, psi, lam, zeta)
            log_ratio = _combine(tau, lp_x_prop - lp_x_cur, ref_prop - ref_cur)
            accept = np.log(rng.random(K)) < log_ratio
            X = np.where(accept[:, None, None], X_prop, X)
            delta_post = delta_post + np.where(accept, lp_x_prop - lp_x_cur, 0.0)
            lp_x_cur = np.where(accept, lp_x_prop, lp_x_cur)
            ref_cur = np.where(accept, ref_prop, ref_cur)
        return X, delta_post, ref_cur

    # -- plumbing --------------------------------------------------------------

    def _stack(self, states):
        X = np.stack([s.X for s in states])
        sigma2 = np.array([s.sigma2 for s in states], dtype=float)
        psi = np.array([s.psi for s in states], dtype=float)
        lam = np.stack([s.lam for s in states])
        zeta = None
        if self.spec.family == "tt":
            zeta = np.stack([s.zeta for s in states])
        return X, sigma2, psi, lam, zeta

    def _unstack(self, X, sigma2, psi, lam, zeta) -> list:
        K = X.shape[0]
        return [
            ParticleState(
                X=X[k].copy(),
                sigma2=float(sigma2[k]),
                psi=float(psi[k]),
                lam=lam[k].copy(),
                zeta=None if zeta is None else zeta[k].copy(),
            )
            for k in range(K)
        ]


def _combine(tau: float, post, ref):
    """tau * post + (1 - tau) * ref without 0 * inf pitfalls at the endpoints."""
    if tau <= 0.0:
        return np.asarray(ref, dtype=float)
    if tau >= 1.0:
        return np.asarray(post, dtype=float)
    return tau * np.asarray(post, dtype=float) + (1.0 - tau) * np.asarray(ref, dtype=float)


def _param_log_prior(sigma2, psi, lam, zeta, hyper: HyperParams, family: str):
    """Prior density of the non-latent parameters (the reference uses the prior)."""
    out = _log_invgamma(np.asarray(sigma2, dtype=float), hyper.a, hyper.b)
    out = out + np.sum(_log_invgamma(np.asarray(lam, dtype=float), hyper.alpha, hyper.beta), axis=-1)
    if family == "tsn":
        psi = np.asarray(psi, dtype=float)
        inside = (psi >= hyper.c) & (psi <= hyper.d)
        out = out + np.where(inside, -np.log(hyper.d - hyper.c), -np.inf)
    if family == "tt":
        out = out + np.sum(
            _log_gamma_pdf(np.asarray(zeta, dtype=float), hyper.nu / 2.0, hyper.nu / 2.0),
            axis=-1,
        )
    return out


def propagate_gbmds(state: ParticleState, tau: float, D: DissimilarityMatrix,
                    spec: ModelSpec, hyper: HyperParams, rng: np.random.Generator,
                    reference: LatentReference | None = None,
                    step_scale: float | None = None,
                    subset_fraction: float = 1.0, mh_sweeps: int = 1):
    """One GBMDS kernel move on a single state; returns (state, acceptance).

    Convenience wrapper that builds a target on the fly; hot loops should
    construct a :class:`GBMDSTarget` once and call ``propagate`` directly.
    """
    if reference is None:
        reference = cmds_reference(D, spec.p)
    target = GBMDSTarget(D, spec, hyper, reference, step_scale, subset_fraction, mh_sweeps)
    return target.propagate(state, tau, rng)
