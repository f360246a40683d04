"""Log-density kernels for the three truncated error models.

Observed dissimilarities d_ij are modeled as draws from a distribution
centered on the latent distances delta_ij = metric(x_i, x_j), truncated to
(0, U):

* ``tn``  -- truncated Gaussian (the skew-normal with shape pinned to 0),
* ``tsn`` -- truncated skew-normal with shape parameter psi,
* ``tt``  -- truncated Student-t via its Gaussian scale mixture, with one
  Gamma-distributed precision multiplier zeta_ij per pair.

All densities are evaluated in log space and retain their full normalizing
constants (including the (2*pi)^(-m/2) and skew-normal 2^m factors) so that
log-marginal-likelihood estimates are comparable across families.

Every kernel broadcasts over leading axes: a stack of K particle states can
be evaluated in one call by passing X with shape (K, n, p), sigma2 with
shape (K,), and so on.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr, owens_t

from .cmds import initial_embedding
from .dissimilarity import DissimilarityMatrix
from .errors import DegenerateInputWarning, InputError, MetricError, NumericalError

FAMILIES = ("tn", "tsn", "tt")
LATENT_METRICS = ("euclidean", "cosine")

_LOG2 = np.log(2.0)
_LOG2PI = np.log(2.0 * np.pi)
# Below this, a linear-space probability has lost its relative precision and
# the asymptotic tail expansion takes over.
_TAIL_FLOOR = 1e-280


@dataclass(frozen=True)
class ModelSpec:
    """Which error family and latent metric to fit, at which dimension.

    ``upper_bound`` of None resolves to the data matrix's bound at fit time
    (1 for cosine/jaccard data, +inf for euclidean).
    """

    family: str
    metric: str = "euclidean"
    p: int = 2
    upper_bound: float | None = None

    def __post_init__(self):
        family = self.family.lower()
        if family not in FAMILIES:
            raise InputError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", family)
        metric = self.metric.lower()
        if metric not in LATENT_METRICS:
            raise InputError(
                f"latent metric must be one of {LATENT_METRICS}, got {self.metric!r}"
            )
        object.__setattr__(self, "metric", metric)
        if self.p < 1:
            raise InputError(f"dimension must be >= 1, got {self.p}")
        if self.upper_bound is not None and not self.upper_bound > 0:
            raise InputError(f"upper bound must be positive, got {self.upper_bound!r}")

    def resolve_upper_bound(self, D: DissimilarityMatrix) -> float:
        return float(self.upper_bound) if self.upper_bound is not None else D.upper_bound


@dataclass(frozen=True)
class HyperParams:
    """Prior hyperparameters.

    sigma2 ~ InvGamma(a, b); psi ~ Uniform(c, d); lambda_k ~ InvGamma(alpha,
    beta_k); zeta_ij ~ Gamma(nu/2, rate nu/2).
    """

    a: float = 5.0
    b: float = 1.0
    c: float = -2.0
    d: float = 2.0
    alpha: float = 0.5
    beta: np.ndarray = field(default_factory=lambda: np.array([0.5]))
    nu: float = 5.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise InputError("inverse-gamma parameters a, b must be positive")
        if not self.c < self.d:
            raise InputError("shape prior bounds must satisfy c < d")
        if not (self.alpha > 0 and self.nu > 0):
            raise InputError("alpha and nu must be positive")
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if np.any(beta <= 0):
            raise InputError("all beta_k must be positive")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def from_cmds(cls, D: DissimilarityMatrix, spec: ModelSpec, **overrides) -> "HyperParams":
        """Empirical-Bayes defaults anchored to a spectral starting embedding.

        b is the mean squared residual of the embedding (SSR / m under the
        model's latent metric) and beta_k is half the sample variance of the
        k-th embedding coordinate.
        """
        coords = initial_embedding(D, spec.p, spec.metric)
        if spec.metric == "cosine":
            norms = np.linalg.norm(coords, axis=1)
            bad = norms < 1e-12
            if np.any(bad):
                warnings.warn(
                    "zero-norm classical MDS rows jittered for the cosine latent metric",
                    DegenerateInputWarning,
                    stacklevel=2,
                )
                coords = coords.copy()
                coords[bad, 0] += 1e-8
        delta0 = latent_distances(coords, spec.metric)
        ssr0 = float(np.sum((D.condensed() - delta0) ** 2))
        b = max(ssr0 / D.n_pairs, 1e-12)
        beta = np.maximum(0.5 * np.var(coords, axis=0), 1e-8)
        params = dict(b=b, beta=beta)
        params.update(overrides)
        return cls(**params)


@dataclass
class ParticleState:
    """One posterior sample: latent configuration plus model parameters.

    ``zeta`` holds the per-pair precision multipliers for the Student-t
    family (condensed i < j order) and is None otherwise. ``psi`` is 0 for
    families without a shape parameter.
    """

    X: np.ndarray
    sigma2: float
    lam: np.ndarray
    psi: float = 0.0
    zeta: np.ndarray | None = None

    def copy(self) -> "ParticleState":
        return ParticleState(
            X=self.X.copy(),
            sigma2=self.sigma2,
            lam=self.lam.copy(),
            psi=self.psi,
            zeta=None if self.zeta is None else self.zeta.copy(),
        )


def pair_indices(n: int):
    """Row/column indices of the condensed (i < j, row-major) pair order."""
    return np.triu_indices(n, k=1)


def latent_distances(X, metric: str) -> np.ndarray:
    """Condensed pairwise distances of a configuration (broadcasts over leading axes).

    The cosine form here applies to arbitrary latent vectors of positive
    norm, so its range is [0, 2]; the nonnegativity restriction only applies
    to observed data.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim < 2:
        raise InputError(f"configuration must be at least 2-D, got shape {X.shape}")
    n = X.shape[-2]
    iu, ju = pair_indices(n)
    if metric == "euclidean":
        diff = X[..., iu, :] - X[..., ju, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if metric == "cosine":
        norms = np.sqrt(np.sum(X * X, axis=-1))
        if np.any(norms == 0.0):
            raise MetricError("cosine latent distance undefined for zero-norm point")
        sims = np.sum(X[..., iu, :] * X[..., ju, :], axis=-1) / (norms[..., iu] * norms[..., ju])
        return np.clip(1.0 - sims, 0.0, 2.0)
    raise InputError(f"latent metric must be one of {LATENT_METRICS}, got {metric!r}")


def delta_matrix(X, metric: str) -> np.ndarray:
    """Square symmetric matrix of latent distances."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError(f"expected a single (n, p) configuration, got shape {X.shape}")
    n = X.shape[0]
    cond = latent_distances(X, metric)
    out = np.zeros((n, n))
    iu, ju = pair_indices(n)
    out[iu, ju] = cond
    out[ju, iu] = cond
    return out


def sum_squared_residuals(d, delta) -> np.ndarray:
    """SSR = sum over pairs of (d - delta)^2, broadcasting over leading axes."""
    resid = np.asarray(d, dtype=float) - np.asarray(delta, dtype=float)
    return np.sum(resid * resid, axis=-1)


# --------------------------------------------------------------------------
# Skew-normal CDF machinery
# --------------------------------------------------------------------------


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0, stable at both ends."""
    x = np.minimum(x, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = x < -_LOG2
        return np.where(small, np.log1p(-np.exp(x)), np.log(-np.expm1(np.maximum(x, -_LOG2))))


def _log_sn_tail(z, shape):
    """Asymptotic log CDF of the standard skew-normal deep in the left tail."""
    z = np.asarray(z, dtype=float)
    shape = np.broadcast_to(np.asarray(shape, dtype=float), z.shape)
    # shape <= 0: the left tail behaves like (1 + sign) copies of the normal
    # tail; shape > 0: Mills-type ratio of the skew-normal density, whose
    # log-derivative is ~ -z * (1 + shape^2) as z -> -inf.
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = (
            _LOG2
            - 0.5 * _LOG2PI
            - 0.5 * z * z
            + log_ndtr(shape * z)
            - np.log(np.maximum(z * z * (1.0 + shape * shape), 1.0))
        )
        zero = log_ndtr(z)
        neg = _LOG2 + log_ndtr(z)
    return np.where(shape > 0, pos, np.where(shape < 0, neg, zero))


def _log_sn_cdf_pair(z, shape):
    """(log CDF, log survival) of the standard skew-normal, tail-safe.

    One Owen's T evaluation serves both sides through T(-z, -a) = -T(z, a).
    """
    z = np.asarray(z, dtype=float)
    shape = np.asarray(shape, dtype=float)
    t = owens_t(z, shape)
    cdf = ndtr(z) - 2.0 * t
    surv = ndtr(-z) + 2.0 * t
    with np.errstate(divide="ignore", invalid="ignore"):
        log_cdf = np.log(np.maximum(cdf, _TAIL_FLOOR))
        log_surv = np.log(np.maximum(surv, _TAIL_FLOOR))
    lo_cdf = cdf < _TAIL_FLOOR
    if np.any(lo_cdf):
        log_cdf = np.where(lo_cdf, _log_sn_tail(z, shape), log_cdf)
    lo_surv = surv < _TAIL_FLOOR
    if np.any(lo_surv):
        log_surv = np.where(lo_surv, _log_sn_tail(-z, -shape), log_surv)
    return log_cdf, log_surv


def log_skew_normal_cdf(x, loc=0.0, scale=1.0, shape=0.0):
    """log F(x) for the skew-normal with the given location, scale and shape.

    F(x) = Phi(z) - 2 * OwensT(z, shape) with z = (x - loc) / scale. Deep
    tails switch to an asymptotic expansion, so finite arguments never
    return -inf.
    """
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise InputError("scale must be positive")
    z = (np.asarray(x, dtype=float) - loc) / scale
    log_cdf, _ = _log_sn_cdf_pair(z, shape)
    if np.ndim(log_cdf) == 0:
        return float(log_cdf)
    return log_cdf


def _log_sn_interval(delta, sigma, shape, upper):
    """log(F(upper) - F(0)) for a skew-normal located at delta with scale sigma.

    Computed from log CDFs / log survivals on whichever side keeps full
    relative precision. Returns -inf where the interval mass is below double
    precision.
    """
    z0 = (0.0 - delta) / sigma
    if np.isinf(upper):
        _, log_s0 = _log_sn_cdf_pair(z0, shape)
        return log_s0
    zU = (upper - delta) / sigma
    lf0, ls0 = _log_sn_cdf_pair(z0, shape)
    lfU, lsU = _log_sn_cdf_pair(zU, shape)
    left = lfU + _log1mexp(lf0 - lfU)
    right = ls0 + _log1mexp(lsU - ls0)
    return np.where(z0 + zU < 0, left, right)


def _log_normal_interval(a, b):
    """log(Phi(a) - Phi(b)) for a >= b, fully in log space."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    use_left = a + b < 0
    hi = np.where(use_left, a, -b)
    lo = np.where(use_left, b, -a)
    lhi = log_ndtr(hi)
    llo = log_ndtr(lo)
    return lhi + _log1mexp(llo - lhi)


# --------------------------------------------------------------------------
# Likelihoods
# --------------------------------------------------------------------------


def tsn_log_likelihood(d, delta, sigma2, psi, upper) -> np.ndarray:
    """Truncated skew-normal log-likelihood, broadcasting over leading axes.

    ``d`` is the condensed (m,) data vector; ``delta`` broadcasts to
    (..., m); ``sigma2`` and ``psi`` to (...,). With psi = 0 this is exactly
    the truncated-Gaussian log-likelihood.
    """
    d = np.asarray(d, dtype=float)
    delta = np.asarray(delta, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    psi = np.asarray(psi, dtype=float)
    m = d.shape[-1]
    sigma = np.sqrt(sigma2)[..., None]
    resid = d - delta
    shape = psi[..., None]
    log_norm = _log_sn_interval(delta, sigma, shape, upper)
    ll = (
        m * _LOG2
        - 0.5 * m * _LOG2PI
        - 0.5 * m * np.log(sigma2)
        - 0.5 * np.sum(resid * resid, axis=-1) / sigma2
        + np.sum(log_ndtr(shape * resid / sigma), axis=-1)
        - np.sum(log_norm, axis=-1)
    )
    return ll


def tt_log_likelihood(d, delta, sigma2, zeta, upper) -> np.ndarray:
    """Truncated Student-t log-likelihood conditional on the mixture weights.

    Each pair is Gaussian with variance sigma2 / zeta_ij truncated to
    (0, upper); ``zeta`` broadcasts to (..., m).
    """
    d = np.asarray(d, dtype=float)
    delta = np.asarray(delta, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    m = d.shape[-1]
    sigma = np.sqrt(sigma2)[..., None]
    root_zeta = np.sqrt(zeta)
    resid = d - delta
    a_lo = -delta * root_zeta / sigma
    if np.isinf(upper):
        log_norm = log_ndtr(delta * root_zeta / sigma)
    else:
        a_hi = (upper - delta) * root_zeta / sigma
        log_norm = _log_normal_interval(a_hi, a_lo)
    ll = (
        -0.5 * m * _LOG2PI
        - 0.5 * m * np.log(sigma2)
        + 0.5 * np.sum(np.log(zeta), axis=-1)
        - 0.5 * np.sum(zeta * resid * resid, axis=-1) / sigma2
        - np.sum(log_norm, axis=-1)
    )
    return ll


def _check_support(D: DissimilarityMatrix, upper: float) -> np.ndarray:
    d = D.condensed()
    if np.any(d <= 0):
        iu, ju = pair_indices(D.n)
        k = int(np.argmax(d <= 0))
        raise InputError(
            f"pair ({iu[k]}, {ju[k]}): dissimilarity {d[k]!r} outside the model "
            f"support (0, {upper}); perturb duplicate observations first"
        )
    if np.any(d > upper):
        iu, ju = pair_indices(D.n)
        k = int(np.argmax(d > upper))
        raise InputError(
            f"pair ({iu[k]}, {ju[k]}): dissimilarity {d[k]!r} exceeds the upper bound {upper}"
        )
    return d


def _raise_on_norm_underflow(log_norm, n: int):
    flat = np.atleast_1d(np.asarray(log_norm))
    if np.all(np.isfinite(flat)):
        return
    idx = np.argwhere(~np.isfinite(flat))
    pair = int(idx[0][-1])
    iu, ju = pair_indices(n)
    raise NumericalError(
        f"pair ({iu[pair]}, {ju[pair]}): truncation normalization underflowed to "
        "zero; the latent point is catastrophically far from the data"
    )


def log_lik_tsn(D: DissimilarityMatrix, X, sigma2, psi, metric=None, upper_bound=None) -> float:
    """Truncated skew-normal log-likelihood of a configuration against D."""
    upper = float(upper_bound) if upper_bound is not None else D.upper_bound
    metric = _resolve_latent_metric(metric, D)
    d = _check_support(D, upper)
    delta = latent_distances(X, metric)
    sigma = np.sqrt(float(sigma2))
    log_norm = _log_sn_interval(delta, sigma, float(psi), upper)
    _raise_on_norm_underflow(log_norm, D.n)
    return float(tsn_log_likelihood(d, delta, sigma2, psi, upper))


def log_lik_tt(D: DissimilarityMatrix, X, sigma2, zeta, metric=None, upper_bound=None) -> float:
    """Truncated Student-t log-likelihood of a configuration against D."""
    upper = float(upper_bound) if upper_bound is not None else D.upper_bound
    metric = _resolve_latent_metric(metric, D)
    d = _check_support(D, upper)
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != d.shape:
        raise InputError(f"zeta must have shape {d.shape}, got {zeta.shape}")
    if np.any(zeta <= 0):
        raise InputError("all zeta_ij must be positive")
    delta = latent_distances(X, metric)
    sigma = np.sqrt(float(sigma2))
    root_zeta = np.sqrt(zeta)
    if np.isinf(upper):
        log_norm = log_ndtr(delta * root_zeta / sigma)
    else:
        log_norm = _log_normal_interval((upper - delta) * root_zeta / sigma, -delta * root_zeta / sigma)
    _raise_on_norm_underflow(log_norm, D.n)
    return float(tt_log_likelihood(d, delta, sigma2, zeta, upper))


def _resolve_latent_metric(metric, D: DissimilarityMatrix) -> str:
    if metric is not None:
        return metric
    return D.metric if D.metric in LATENT_METRICS else "euclidean"


# --------------------------------------------------------------------------
# Priors and the annealed target
# --------------------------------------------------------------------------


def _log_invgamma(x, shape, scale):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x
    return np.where(x > 0, val, -np.inf)


def _log_gamma_pdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x
    return np.where(x > 0, val, -np.inf)


def log_latent_gaussian(X, lam) -> np.ndarray:
    """Log-density of the latent rows under N(0, diag(lam)), broadcasting."""
    X = np.asarray(X, dtype=float)
    lam = np.asarray(lam, dtype=float)
    n = X.shape[-2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x_term = -0.5 * (
            n * np.sum(np.log(2.0 * np.pi * lam), axis=-1)
            + np.sum(np.sum(X * X, axis=-2) / lam, axis=-1)
        )
    return np.where(np.all(lam > 0, axis=-1), x_term, -np.inf)


def log_prior_parts(X, sigma2, psi, lam, zeta, hyper: HyperParams, family: str) -> np.ndarray:
    """Joint log-prior density, broadcasting over leading axes."""
    X = np.asarray(X, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    lam = np.asarray(lam, dtype=float)

    out = log_latent_gaussian(X, lam)
    out = out + _log_invgamma(sigma2, hyper.a, hyper.b)
    out = out + np.sum(_log_invgamma(lam, hyper.alpha, hyper.beta), axis=-1)
    if family == "tsn":
        psi = np.asarray(psi, dtype=float)
        inside = (psi >= hyper.c) & (psi <= hyper.d)
        out = out + np.where(inside, -np.log(hyper.d - hyper.c), -np.inf)
    if family == "tt":
        if zeta is None:
            raise InputError("the Student-t family requires zeta in the state")
        out = out + np.sum(_log_gamma_pdf(zeta, hyper.nu / 2.0, hyper.nu / 2.0), axis=-1)
    return out


def log_prior(state: ParticleState, hyper: HyperParams, family: str) -> float:
    """Log-prior of one particle state; -inf outside the support."""
    if family not in FAMILIES:
        raise InputError(f"unknown family {family!r}")
    return float(
        log_prior_parts(state.X, state.sigma2, state.psi, state.lam, state.zeta, hyper, family)
    )


def log_posterior(state: ParticleState, D: DissimilarityMatrix, spec: ModelSpec,
                  hyper: HyperParams) -> float:
    """Unnormalized log-posterior: log-likelihood plus log-prior."""
    upper = spec.resolve_upper_bound(D)
    if spec.family == "tt":
        ll = log_lik_tt(D, state.X, state.sigma2, state.zeta, spec.metric, upper)
    else:
        psi = 0.0 if spec.family == "tn" else state.psi
        ll = log_lik_tsn(D, state.X, state.sigma2, psi, spec.metric, upper)
    return ll + log_prior(state, hyper, spec.family)


def annealed_log_target(state: ParticleState, tau: float, reference, D: DissimilarityMatrix,
                        spec: ModelSpec, hyper: HyperParams) -> float:
    """Log of the bridge density: tau * (loglik + logprior) + (1 - tau) * reference."""
    if not 0.0 <= tau <= 1.0:
        raise InputError(f"annealing parameter must lie in [0, 1], got {tau}")
    if tau == 0.0:
        return float(reference(state))
    post = log_posterior(state, D, spec, hyper)
    if tau == 1.0:
        return post
    return tau * post + (1.0 - tau) * float(reference(state))
