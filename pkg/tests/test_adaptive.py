"""Batch plans, posterior references, and incremental inference."""

import numpy as np
import pytest

from gbmds.adaptive import (
    BatchPlan,
    _reference_from_arrays,
    fit_gbmds,
    reference_from_posterior,
    run_adaptive,
)
from gbmds.dissimilarity import build_matrix
from gbmds.errors import InputError
from gbmds.model import HyperParams, ModelSpec
from gbmds.smc import GBMDSTarget, ParticleCloud, SMCConfig, run_asmc, cmds_reference


def euclid_data(seed, n=12, q=4):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, q))


class TestBatchPlan:
    def test_valid(self):
        plan = BatchPlan((5, 9, 12))
        assert plan.n_batches == 3 and plan.n_total == 12

    def test_empty_batch_rejected(self):
        with pytest.raises(InputError):
            BatchPlan((5, 5, 9))

    def test_first_batch_minimum(self):
        with pytest.raises(InputError):
            BatchPlan((2, 9))

    def test_uniform(self):
        plan = BatchPlan.uniform(11, 4)
        assert plan.boundaries[-1] == 11
        assert plan.boundaries[0] >= 3

    def test_single(self):
        assert BatchPlan.single(7).boundaries == (7,)


class TestReferenceFromPosterior:
    def _cloud(self, samples):
        K = samples.shape[0]
        from gbmds.model import ParticleState

        states = [
            ParticleState(X=samples[k], sigma2=1.0, lam=np.ones(samples.shape[2]))
            for k in range(K)
        ]
        return ParticleCloud(
            states=states, log_weights=np.zeros(K), schedule=[0.0, 1.0]
        )

    def test_single_particle_degenerate(self):
        rng = np.random.default_rng(0)
        sample = rng.standard_normal((1, 4, 2))
        ref = reference_from_posterior(self._cloud(sample), 4)
        assert np.allclose(ref.centers, sample[0])
        assert np.allclose(ref.cov, 1e-8 * np.eye(2))

    def test_symmetric_pair_has_zero_mean(self):
        v = np.array([[1.0, -2.0], [0.5, 0.25], [3.0, 1.0]])
        samples = np.stack([v, -v])
        ref = reference_from_posterior(self._cloud(samples), 3)
        assert np.allclose(ref.centers, 0.0)

    def test_weighted_moment_oracle(self):
        rng = np.random.default_rng(1)
        K, n, p = 50, 6, 2
        samples = rng.standard_normal((K, n, p))
        weights = rng.random(K)
        weights /= weights.sum()
        ref = _reference_from_arrays(samples, weights, n)
        centers = np.einsum("k,kip->ip", weights, samples)
        assert np.allclose(ref.centers, centers)
        pooled = np.zeros((p, p))
        for i in range(n):
            diff = samples[:, i, :] - centers[i]
            pooled += (weights[:, None, None] * np.einsum("kp,kq->kpq", diff, diff)).sum(axis=0)
        pooled = pooled / n + 1e-8 * np.eye(p)
        assert np.allclose(ref.cov, pooled)

    def test_n_prev_validation(self):
        rng = np.random.default_rng(2)
        samples = rng.standard_normal((4, 3, 2))
        with pytest.raises(InputError):
            _reference_from_arrays(samples, np.full(4, 0.25), 9)


class TestRunAdaptive:
    def test_single_batch_equals_fit(self):
        D = build_matrix(euclid_data(3), "euclidean")
        spec = ModelSpec(family="tn", metric="euclidean", p=2)
        cfg = SMCConfig(n_particles=40, seed=5)
        via_plan = run_adaptive(D, BatchPlan.single(D.n), spec, cfg)[0]
        via_fit = fit_gbmds(D, spec, cfg)
        assert via_plan.log_marginal == via_fit.log_marginal
        assert np.array_equal(via_plan.mode, via_fit.mode)
        assert via_plan.stress == via_fit.stress

    def test_batch_outputs_grow(self):
        D = build_matrix(euclid_data(4, n=13), "euclidean")
        spec = ModelSpec(family="tn", metric="euclidean", p=2)
        cfg = SMCConfig(n_particles=40, seed=6)
        fits = run_adaptive(D, BatchPlan((8, 11, 13)), spec, cfg)
        assert [f.n_objects for f in fits] == [8, 11, 13]
        assert all(f.mode.shape == (nb, 2) for f, nb in zip(fits, (8, 11, 13)))

    def test_batches_use_full_prefix_matrix(self):
        # The provider must hand each batch every pairwise entry among the
        # first n_b objects, not just new pairs.
        D = build_matrix(euclid_data(5, n=10), "euclidean")
        seen = []

        def provider(nb):
            sub = D.prefix(nb)
            seen.append(sub.values.copy())
            return sub

        spec = ModelSpec(family="tn", metric="euclidean", p=2)
        run_adaptive(provider, BatchPlan((6, 10)), spec, SMCConfig(n_particles=30, seed=7))
        assert np.array_equal(seen[0], D.values[:6, :6])
        assert np.array_equal(seen[1], D.values)

    def test_raw_observations_with_metric(self):
        data = np.abs(euclid_data(6, n=9)) + 0.1
        spec = ModelSpec(family="tn", metric="cosine", p=2)
        cfg = SMCConfig(n_particles=30, seed=8)
        fits = run_adaptive(data, BatchPlan((6, 9)), spec, cfg, data_metric="cosine")
        assert fits[-1].n_objects == 9

    def test_plan_size_mismatch(self):
        D = build_matrix(euclid_data(7), "euclidean")
        spec = ModelSpec(family="tn", metric="euclidean", p=2)
        with pytest.raises(InputError):
            run_adaptive(D, BatchPlan((6, 11)), spec, SMCConfig(n_particles=30, seed=9))

    def test_old_block_initialized_per_reference(self):
        # After batch 1, a batch-2 target must draw the old block from the
        # posterior-moment reference: check the sample moments of the draws.
        D = build_matrix(euclid_data(8, n=10), "euclidean")
        spec = ModelSpec(family="tn", metric="euclidean", p=2)
        cfg = SMCConfig(n_particles=60, seed=10)
        fit = fit_gbmds(D.prefix(7), spec, cfg)
        ref = _reference_from_arrays(
            fit.samples, np.full(fit.samples.shape[0], 1.0 / fit.samples.shape[0]), 7, n_new=3
        )
        hyper = HyperParams.from_cmds(D, spec)
        target = GBMDSTarget(D, spec, hyper, ref)
        rng = np.random.default_rng(11)
        states = target.sample_reference_batch(4000, rng)
        X = np.stack([s.X for s in states])
        old_mean = X[:, :7, :].mean(axis=0)
        sd = np.sqrt(np.diag(ref.cov)).max()
        assert np.all(np.abs(old_mean - ref.centers) <= 5 * sd / np.sqrt(4000) + 1e-6)
        pooled = np.zeros((2, 2))
        for i in range(7):
            diff = X[:, i, :] - X[:, i, :].mean(axis=0)
            pooled += diff.T @ diff / X.shape[0]
        pooled /= 7
        assert np.allclose(pooled, ref.cov, rtol=0.15, atol=1e-4)
        # The new block is drawn from N(0, diag(lambda)) with heavy-tailed
        # lambda, so check the (robust) median rather than the mean.
        new_median = np.median(X[:, 7:, :], axis=0)
        assert np.all(np.abs(new_median) < 0.2)

    def test_batch_error_annotated(self):
        def provider(nb):
            raise ValueError("broken provider")

        spec = ModelSpec(family="tn", metric="euclidean", p=2)
        with pytest.raises(ValueError, match="batch 1"):
            run_adaptive(provider, BatchPlan((5, 8)), spec, SMCConfig(n_particles=30, seed=12))
