"""Classical MDS and the STRESS criterion."""

import numpy as np
import pytest

from gbmds.cmds import classical_mds, initial_embedding, similarity_embedding, stress
from gbmds.dissimilarity import DissimilarityMatrix, build_matrix
from gbmds.errors import InputError, NonEuclideanWarning, RankDeficiencyWarning
from gbmds.model import latent_distances


def pairwise(coords):
    return latent_distances(coords, "euclidean")


class TestClassicalMDS:
    def test_collinear_points_exact(self):
        pts = np.array([[0.0], [1.0], [3.0]])
        D = build_matrix(pts, "euclidean")
        coords = classical_mds(D, 1)
        assert np.allclose(pairwise(coords), D.condensed(), atol=1e-10)

    def test_all_zero_matrix(self):
        D = np.zeros((4, 4))
        with pytest.warns(RankDeficiencyWarning):
            coords = classical_mds(D, 2)
        assert np.allclose(coords, 0.0)

    def test_equilateral_triangle(self):
        D = np.ones((3, 3)) - np.eye(3)
        coords = classical_mds(D, 2)
        assert np.allclose(pairwise(coords), 1.0, atol=1e-10)

    def test_exact_embedding_recovers_distances(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((12, 3))
        D = build_matrix(X, "euclidean")
        coords = classical_mds(D, 3)
        assert stress(D, pairwise(coords)) < 1e-8

    def test_centered_output(self):
        rng = np.random.default_rng(6)
        D = build_matrix(rng.standard_normal((8, 4)) + 5.0, "euclidean")
        coords = classical_mds(D, 2)
        assert np.allclose(coords.mean(axis=0), 0.0, atol=1e-10)

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        D = build_matrix(rng.standard_normal((9, 4)), "euclidean")
        a = classical_mds(D, 3)
        b = classical_mds(D, 3)
        assert np.array_equal(a, b)

    def test_non_euclidean_warns(self):
        # A bounded metric on diverse vectors is typically not Euclidean-embeddable.
        rng = np.random.default_rng(8)
        D = build_matrix(np.abs(rng.standard_normal((8, 3))) + 0.05, "cosine")
        with pytest.warns(NonEuclideanWarning):
            classical_mds(D, 7)

    def test_rank_deficiency_pads_with_zeros(self):
        pts = np.array([[0.0], [1.0], [3.0], [7.0]])
        D = build_matrix(pts, "euclidean")
        with pytest.warns(RankDeficiencyWarning):
            coords = classical_mds(D, 3)
        assert np.allclose(coords[:, 1:], 0.0)

    def test_dimension_bounds(self):
        D = np.zeros((4, 4))
        with pytest.raises(InputError):
            classical_mds(D, 4)
        with pytest.raises(InputError):
            classical_mds(D, 0)


class TestStress:
    def test_perfect_fit(self):
        rng = np.random.default_rng(9)
        D = build_matrix(rng.standard_normal((5, 2)), "euclidean")
        assert stress(D, D.values) == 0.0

    def test_zero_prediction(self):
        rng = np.random.default_rng(10)
        D = build_matrix(rng.standard_normal((5, 2)), "euclidean")
        assert stress(D, np.zeros((5, 5))) == pytest.approx(1.0, abs=1e-15)

    def test_hand_computed(self):
        D = np.array([[0, 3, 0], [3, 0, 4], [0, 4, 0.0]])
        fitted = np.array([[0, 3, 0], [3, 0, 5], [0, 5, 0.0]])
        assert stress(D, fitted) == pytest.approx(0.2)

    def test_all_zero_rejected(self):
        with pytest.raises(InputError):
            stress(np.zeros((3, 3)), np.zeros((3, 3)))

    def test_invariance_under_rigid_motions(self):
        rng = np.random.default_rng(11)
        X = rng.standard_normal((7, 2))
        D = build_matrix(X + 0.05 * rng.standard_normal((7, 2)), "euclidean")
        base = stress(D, pairwise(X))
        theta = 0.7
        R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        moved = X @ R + np.array([3.0, -1.0])
        reflected = X * np.array([1.0, -1.0])
        assert stress(D, pairwise(moved)) == pytest.approx(base, abs=1e-12)
        assert stress(D, pairwise(reflected)) == pytest.approx(base, abs=1e-12)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(12)
        D = build_matrix(rng.standard_normal((6, 2)), "euclidean")
        fitted = pairwise(rng.standard_normal((6, 2)))
        c = 3.7
        assert stress(c * D.values, c * fitted) == pytest.approx(
            stress(D, fitted), rel=1e-12
        )

    def test_condensed_input(self):
        rng = np.random.default_rng(13)
        D = build_matrix(rng.standard_normal((6, 2)), "euclidean")
        fitted = pairwise(rng.standard_normal((6, 2)))
        full = np.zeros((6, 6))
        iu, ju = np.triu_indices(6, k=1)
        full[iu, ju] = fitted
        full[ju, iu] = fitted
        assert stress(D, fitted) == stress(D, full)


class TestSimilarityEmbedding:
    def test_cosine_geometry_recovered(self):
        rng = np.random.default_rng(14)
        D = build_matrix(np.abs(rng.standard_normal((10, 6))) + 0.05, "cosine")
        coords = similarity_embedding(D, 4)
        fitted = latent_distances(coords, "cosine")
        assert stress(D, fitted) < 0.35

    def test_initial_embedding_dispatch(self):
        rng = np.random.default_rng(15)
        D = build_matrix(rng.standard_normal((6, 3)), "euclidean")
        assert np.array_equal(initial_embedding(D, 2, "euclidean"), classical_mds(D, 2))
        Dc = build_matrix(np.abs(rng.standard_normal((6, 3))) + 0.1, "cosine")
        assert np.array_equal(initial_embedding(Dc, 2, "cosine"), similarity_embedding(Dc, 2))
