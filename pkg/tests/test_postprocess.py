"""Posterior summaries, alignment, credible regions, and sweeps."""

import numpy as np
import pytest

from gbmds.dissimilarity import build_matrix
from gbmds.errors import DegenerateInputWarning, InputError
from gbmds.model import HyperParams, ModelSpec, ParticleState, delta_matrix, latent_distances
from gbmds.postprocess import (
    bayes_factor,
    credible_ellipses,
    posterior_mode,
    procrustes,
    summarize_run,
    sweep,
)
from gbmds.smc import GBMDSTarget, ParticleCloud, SMCConfig, cmds_reference, run_asmc
from gbmds.cmds import stress


def cloud_from_configs(configs):
    states = [
        ParticleState(X=np.asarray(X, dtype=float), sigma2=1.0, lam=np.ones(np.shape(X)[1]))
        for X in configs
    ]
    return ParticleCloud(states=states, log_weights=np.zeros(len(states)), schedule=[0.0, 1.0])


class TestPosteriorMode:
    def test_single_particle(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((4, 2))
        D = build_matrix(X, "euclidean")
        cloud = cloud_from_configs([X])
        assert np.array_equal(posterior_mode(cloud, D, "euclidean"), X)

    def test_exact_match_wins(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((4, 2))
        D = build_matrix(X, "euclidean")
        cloud = cloud_from_configs([X + 0.3, X, X - 0.5 * rng.standard_normal((4, 2))])
        assert np.array_equal(posterior_mode(cloud, D, "euclidean"), X)

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((5, 2))
        D = build_matrix(X, "euclidean")
        configs = [rng.standard_normal((5, 2)) for _ in range(40)]
        cloud = cloud_from_configs(configs)
        got = posterior_mode(cloud, D, "euclidean")
        best, best_ssr = None, np.inf
        for cfg in configs:
            fitted = delta_matrix(cfg, "euclidean")
            iu, ju = np.triu_indices(5, k=1)
            ssr = float(np.sum((D.values[iu, ju] - fitted[iu, ju]) ** 2))
            if ssr < best_ssr:
                best, best_ssr = cfg, ssr
        assert np.array_equal(got, best)


class TestProcrustes:
    def test_identity(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((6, 2))
        assert np.allclose(procrustes(X, X), X, atol=1e-12)

    def test_recovers_constructed_transform(self):
        rng = np.random.default_rng(4)
        target = rng.standard_normal((7, 2))
        theta = 1.1
        R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        moved = 2.5 * target @ R + np.array([4.0, -2.0])
        assert np.allclose(procrustes(moved, target), target, atol=1e-10)

    def test_reflection_allowed(self):
        rng = np.random.default_rng(5)
        target = rng.standard_normal((6, 2))
        mirrored = target * np.array([-1.0, 1.0])
        assert np.allclose(procrustes(mirrored, target), target, atol=1e-10)

    def test_objective_never_increases(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            X = rng.standard_normal((5, 3))
            target = rng.standard_normal((5, 3))
            aligned = procrustes(X, target)
            assert np.linalg.norm(aligned - target) <= np.linalg.norm(X - target) + 1e-12

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((6, 2))
        target = rng.standard_normal((6, 2))
        once = procrustes(X, target)
        twice = procrustes(once, target)
        assert np.max(np.abs(twice - once)) < 1e-10

    def test_degenerate_translation_only(self):
        target = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        X = np.ones((3, 2)) * 5.0
        with pytest.warns(DegenerateInputWarning):
            aligned = procrustes(X, target)
        assert np.allclose(aligned, target.mean(axis=0))

    def test_rigid_option_skips_scale(self):
        rng = np.random.default_rng(8)
        target = rng.standard_normal((6, 2))
        shrunk = 0.5 * target
        rigid = procrustes(shrunk, target, scale=False)
        assert np.allclose(np.linalg.norm(rigid - rigid.mean(0), axis=1),
                           0.5 * np.linalg.norm(target - target.mean(0), axis=1), atol=1e-10)


class TestCredibleEllipses:
    def test_identical_samples_regularized(self):
        samples = np.tile(np.array([[1.0, 2.0], [3.0, 4.0]]), (10, 1, 1))
        with pytest.warns(DegenerateInputWarning):
            regions = credible_ellipses(samples)
        assert np.allclose(regions[0].center, [1.0, 2.0])
        assert np.all(regions[0].axes < 1e-4)

    def test_gaussian_coverage(self):
        rng = np.random.default_rng(9)
        cov = np.array([[2.0, 0.6], [0.6, 0.5]])
        L = np.linalg.cholesky(cov)
        draws = rng.standard_normal((100_000, 1, 2)) @ L.T + np.array([1.0, -2.0])
        region = credible_ellipses(draws, level=0.95)[0]
        c, s = np.cos(region.angle), np.sin(region.angle)
        R = np.array([[c, -s], [s, c]])
        local = (draws[:, 0, :] - region.center) @ R
        inside = np.sum((local / region.axes) ** 2, axis=1) <= 1.0
        assert 0.945 <= inside.mean() <= 0.955

    def test_isotropic_axis_ratio(self):
        rng = np.random.default_rng(10)
        draws = rng.standard_normal((10_000, 1, 2))
        region = credible_ellipses(draws)[0]
        ratio = region.axes[0] / region.axes[1]
        assert abs(ratio - 1.0) < 0.05

    def test_higher_dimension_reports_intervals(self):
        rng = np.random.default_rng(11)
        draws = rng.standard_normal((500, 2, 3))
        regions = credible_ellipses(draws)
        assert regions[0].angle is None
        assert regions[0].axes.shape == (3,)

    def test_needs_enough_samples(self):
        with pytest.raises(InputError):
            credible_ellipses(np.zeros((2, 3, 2)))

    def test_record_serialization(self):
        rng = np.random.default_rng(12)
        regions = credible_ellipses(rng.standard_normal((50, 1, 2)))
        record = regions[0].to_record(0)
        assert set(record) == {"object", "center", "axes", "angle", "level"}


class TestBayesFactor:
    def test_equal_support(self):
        bf = bayes_factor(-10.0, -10.0)
        assert bf.value == 1.0 and bf.favored == 0 and bf.strength == "weak"

    def test_substantial(self):
        bf = bayes_factor(np.log(5.0), 0.0)
        assert bf.value == pytest.approx(5.0)
        assert bf.favored == 1 and bf.strength == "substantial"

    def test_strong(self):
        bf = bayes_factor(np.log(20.0), 0.0)
        assert bf.value == pytest.approx(20.0)
        assert bf.strength == "strong"

    def test_reciprocal_labels_model_two(self):
        bf = bayes_factor(0.0, np.log(7.0))
        assert bf.favored == 2 and bf.strength == "substantial"
        assert bf.value == pytest.approx(1 / 7.0)

    def test_weak_boundary(self):
        assert bayes_factor(np.log(3.0), 0.0).strength == "weak"
        assert bayes_factor(np.log(10.0), 0.0).strength == "substantial"

    def test_non_finite_rejected(self):
        with pytest.raises(InputError):
            bayes_factor(np.inf, 0.0)


@pytest.fixture(scope="module")
def D():
    rng = np.random.default_rng(13)
    return build_matrix(rng.standard_normal((9, 4)), "euclidean")


class TestSweep:
    def test_single_cell(self, D):
        table = sweep(D, ("tn",), ("euclidean",), (2,), SMCConfig(n_particles=30, seed=1))
        assert len(table.cells) == 1
        assert table.winner_index == 0
        assert table.winner.valid

    def test_infeasible_cell_isolated(self, D):
        table = sweep(
            D, ("tn",), ("euclidean",), (2, 9), SMCConfig(n_particles=30, seed=2)
        )
        assert table.cells[0].valid
        assert not table.cells[1].valid
        assert table.cells[1].error
        assert table.winner_index == 0

    def test_deterministic(self, D):
        cfg = SMCConfig(n_particles=30, seed=3)
        a = sweep(D, ("tn", "tt"), ("euclidean",), (2,), cfg)
        b = sweep(D, ("tn", "tt"), ("euclidean",), (2,), cfg)
        assert a.to_csv_text() == b.to_csv_text()
        assert a.winner_index == b.winner_index

    def test_winner_maximizes_log_marginal(self, D):
        table = sweep(D, ("tn", "tt"), ("euclidean",), (2, 3), SMCConfig(n_particles=30, seed=4))
        values = [c.log_marginal for c in table.cells if c.valid]
        assert table.winner.log_marginal == max(values)

    def test_serialization(self, D):
        table = sweep(D, ("tn",), ("euclidean",), (2,), SMCConfig(n_particles=30, seed=5))
        text = table.to_csv_text()
        assert text.startswith("family,metric,p,log_marginal,stress")
        payload = table.to_json_dict()
        assert payload["winner_index"] == 0

    def test_empty_grid(self, D):
        with pytest.raises(InputError):
            sweep(D, (), ("euclidean",), (2,), SMCConfig(n_particles=30, seed=6))


class TestSummarizeRun:
    def test_stress_recomputed_independently(self):
        rng = np.random.default_rng(14)
        D = build_matrix(rng.standard_normal((8, 3)), "euclidean")
        spec = ModelSpec(family="tn", metric="euclidean", p=2)
        hyper = HyperParams.from_cmds(D, spec)
        target = GBMDSTarget(D, spec, hyper, cmds_reference(D, 2))
        result = run_asmc(target, SMCConfig(n_particles=40, seed=7))
        fit = summarize_run(result, D, spec)
        assert fit.stress == pytest.approx(
            stress(D, latent_distances(fit.mode, "euclidean")), abs=0.0
        )
        assert fit.samples.shape == (40, 8, 2)
        assert len(fit.regions) == 8
        aligned_again = np.stack([procrustes(s, fit.mode) for s in fit.samples])
        assert np.max(np.abs(aligned_again - fit.samples)) < 1e-10
