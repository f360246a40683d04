"""Shared oracles and fixtures for the test suite.

Everything here is deliberately independent of the library's own evaluation
paths: densities come from scipy building blocks or quadrature, evidence from
closed forms, and moments from textbook formulas.
"""

import numpy as np
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from gbmds.dissimilarity import DissimilarityMatrix
from gbmds.smc import AnnealedTarget


def skew_normal_pdf(t, loc, scale, shape):
    z = (np.asarray(t, dtype=float) - loc) / scale
    return 2.0 / scale * norm.pdf(z) * norm.cdf(shape * z)


def skew_normal_cdf_quad(x, loc=0.0, scale=1.0, shape=0.0, epsabs=1e-13):
    val, _ = integrate.quad(
        lambda t: skew_normal_pdf(t, loc, scale, shape), -np.inf, x,
        epsabs=epsabs, limit=300,
    )
    return val


def truncated_sn_logpdf_quad(x, loc, scale, shape, upper):
    """Log-density of the skew normal restricted to (0, upper), by quadrature."""
    hi = 200.0 * scale + abs(loc) if np.isinf(upper) else upper
    Z, _ = integrate.quad(
        lambda t: skew_normal_pdf(t, loc, scale, shape), 0.0, hi,
        epsabs=1e-13, limit=300,
    )
    return float(np.log(skew_normal_pdf(x, loc, scale, shape)) - np.log(Z))


def owens_t_quad(h, a, epsabs=1e-14):
    """Owen's T by its defining integral."""
    val, _ = integrate.quad(
        lambda x: np.exp(-0.5 * h * h * (1.0 + x * x)) / (1.0 + x * x),
        0.0, a, epsabs=epsabs, limit=300,
    )
    return val / (2.0 * np.pi)


def truncated_normal_moments(mean, sd, lower=0.0):
    """Mean and variance of N(mean, sd^2) conditioned on exceeding `lower`."""
    alpha = (lower - mean) / sd
    lam = norm.pdf(alpha) / norm.sf(alpha)
    mu = mean + sd * lam
    var = sd * sd * (1.0 + alpha * lam - lam * lam)
    return mu, var


def condensed_to_matrix(cond, n, metric="euclidean"):
    out = np.zeros((n, n))
    iu, ju = np.triu_indices(n, k=1)
    out[iu, ju] = cond
    out[ju, iu] = cond
    return DissimilarityMatrix(out, metric)


def mann_kendall_z(series):
    """Normal-approximation Mann-Kendall trend statistic (no tie correction)."""
    x = np.asarray(series, dtype=float)
    n = x.size
    s = 0
    for i in range(n - 1):
        s += np.sum(np.sign(x[i + 1 :] - x[i]))
    var = n * (n - 1) * (2 * n + 5) / 18.0
    if s > 0:
        return float((s - 1) / np.sqrt(var))
    if s < 0:
        return float((s + 1) / np.sqrt(var))
    return 0.0


def toy_corpus(seed, n_docs=15, vocab=40, n_topics=5):
    """Synthetic nonnegative term-weight rows spanning a wide cosine range."""
    rng = np.random.default_rng((seed, 9))
    topics = rng.gamma(0.4, 1.0, size=(n_topics, vocab))
    weights = rng.dirichlet(0.25 * np.ones(n_topics), size=n_docs)
    return (weights @ topics) * rng.gamma(3.0, 1.0, size=(n_docs, vocab)) + 1e-6


class GaussianMeanTarget(AnnealedTarget):
    """Conjugate 1-D Gaussian-mean model with analytic evidence.

    y_i ~ N(theta, obs_var) with known obs_var and theta ~ N(prior_mean,
    prior_var); the reference is the prior, and the kernel is a tau-adapted
    Gaussian random walk.
    """

    def __init__(self, y, obs_var=100.0, prior_mean=0.0, prior_var=4.0, sweeps=10):
        self.y = np.asarray(y, dtype=float)
        self.obs_var = float(obs_var)
        self.prior_mean = float(prior_mean)
        self.prior_var = float(prior_var)
        self.sweeps = sweeps
        self.n = self.y.size

    def log_evidence(self):
        cov = self.obs_var * np.eye(self.n) + self.prior_var * np.ones((self.n, self.n))
        return float(
            multivariate_normal.logpdf(self.y, mean=self.prior_mean * np.ones(self.n), cov=cov)
        )

    def log_evidence_closed_form(self):
        n, s2, v0 = self.n, self.obs_var, self.prior_var
        ybar = self.y.mean()
        sse = float(np.sum((self.y - ybar) ** 2))
        return float(
            -0.5 * n * np.log(2 * np.pi * s2)
            - 0.5 * np.log(1.0 + n * v0 / s2)
            - 0.5 * sse / s2
            - 0.5 * n * (ybar - self.prior_mean) ** 2 / (s2 + n * v0)
        )

    def reference_log_density(self, theta):
        return float(
            -0.5 * np.log(2 * np.pi * self.prior_var)
            - 0.5 * (theta - self.prior_mean) ** 2 / self.prior_var
        )

    def posterior_log_density(self, theta):
        ll = -0.5 * self.n * np.log(2 * np.pi * self.obs_var) - 0.5 * np.sum(
            (self.y - theta) ** 2
        ) / self.obs_var
        return float(ll) + self.reference_log_density(theta)

    def sample_reference(self, rng):
        return self.prior_mean + np.sqrt(self.prior_var) * rng.standard_normal()

    def propagate(self, theta, tau, rng):
        prec = tau * self.n / self.obs_var + 1.0 / self.prior_var
        step = 2.4 / np.sqrt(prec)

        def bridge(t):
            if tau == 0.0:
                return self.reference_log_density(t)
            if tau == 1.0:
                return self.posterior_log_density(t)
            return tau * self.posterior_log_density(t) + (1 - tau) * self.reference_log_density(t)

        current = bridge(theta)
        accepted = 0
        for _ in range(self.sweeps):
            proposal = theta + step * rng.standard_normal()
            value = bridge(proposal)
            if np.log(rng.random()) < value - current:
                theta, current = proposal, value
                accepted += 1
        return theta, accepted / self.sweeps


class PointMassTarget(AnnealedTarget):
    """Degenerate target whose reference puts all mass at one point."""

    def __init__(self, value=1.5):
        self.value = value

    def reference_log_density(self, state):
        return 0.0

    def posterior_log_density(self, state):
        return 0.0

    def sample_reference(self, rng):
        return self.value

    def propagate(self, state, tau, rng):
        return state, 1.0
