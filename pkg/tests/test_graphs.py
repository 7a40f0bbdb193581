"""Topology-graph construction: hand-checked values and algebraic properties."""

import math

import numpy as np
import pytest

from sscl.graphs import build_graph, similarity_matrix, transition_matrix

E = math.e


class TestSimilarityMatrix:
    def test_orthogonal_unit_rows(self):
        A = similarity_matrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(A, np.eye(2), atol=1e-12)

    def test_parallel_rows_norm_cancels(self):
        A = similarity_matrix(np.array([[3.0, 0.0], [5.0, 0.0]]))
        np.testing.assert_allclose(A, np.ones((2, 2)), atol=1e-12)

    def test_hand_evaluated_cosine(self):
        # rows (1,0) and (1,1)/sqrt(2): off-diagonal cosine is 1/sqrt(2)
        A = similarity_matrix(np.array([[1.0, 0.0], [1.0, 1.0]]))
        expected = np.array([[1.0, 1.0 / math.sqrt(2.0)], [1.0 / math.sqrt(2.0), 1.0]])
        np.testing.assert_allclose(A, expected, atol=1e-12)

    def test_exactly_symmetric_and_unit_diagonal(self):
        rng = np.random.default_rng(0)
        Z = rng.normal(size=(17, 6))
        A = similarity_matrix(Z)
        assert np.array_equal(A, A.T)
        np.testing.assert_allclose(np.diag(A), 1.0, atol=1e-12)
        assert A.min() >= -1.0 - 1e-9 and A.max() <= 1.0 + 1e-9

    def test_zero_norm_row_clamped_not_fatal(self):
        A = similarity_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]))
        np.testing.assert_allclose(A[0], 0.0, atol=1e-9)
        np.testing.assert_allclose(A[1, 1], 1.0, atol=1e-12)

    def test_nonfinite_row_reported(self):
        Z = np.array([[1.0, 2.0], [np.nan, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="row 1"):
            similarity_matrix(Z)


class TestTransitionMatrix:
    def test_uniform_for_identical_similarities(self):
        G = transition_matrix(np.ones((2, 2)), gamma=1.0)
        np.testing.assert_allclose(G.transition, 0.5 * np.ones((2, 2)), atol=1e-12)

    def test_hand_softmax_on_identity(self):
        G = transition_matrix(np.eye(2), gamma=1.0)
        hi, lo = E / (E + 1.0), 1.0 / (E + 1.0)
        np.testing.assert_allclose(G.transition, [[hi, lo], [lo, hi]], atol=1e-12)

    def test_large_gamma_flattens_to_uniform(self):
        rng = np.random.default_rng(1)
        A = similarity_matrix(rng.normal(size=(6, 4)))
        G = transition_matrix(A, gamma=1e6)
        np.testing.assert_allclose(G.transition, 1.0 / 6.0, atol=1e-4)

    def test_gamma_must_be_positive(self):
        for bad in (0.0, -1.0):
            with pytest.raises(ValueError, match="gamma"):
                transition_matrix(np.eye(2), gamma=bad)


class TestBuildGraph:
    def test_composition_matches_two_steps(self):
        Z = np.array([[1.0, 0.0], [0.0, 1.0]])
        G = build_graph(Z, gamma=1.0)
        expected = transition_matrix(similarity_matrix(Z), 1.0).transition
        np.testing.assert_allclose(G.transition, expected, atol=0)
        hi, lo = E / (E + 1.0), 1.0 / (E + 1.0)
        np.testing.assert_allclose(G.transition, [[hi, lo], [lo, hi]], atol=1e-12)

    def test_identical_rows_give_identical_columns(self):
        Z = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 1.0]])
        P = build_graph(Z, gamma=1.0).transition
        np.testing.assert_allclose(P[:, 0], P[:, 1], atol=1e-12)

    def test_column_stochastic_over_random_batches(self):
        rng = np.random.default_rng(2)
        for gamma in (0.9, 1.0, 2.0):
            for _ in range(25):
                n = int(rng.integers(1, 65))
                d = int(rng.integers(1, 33))
                P = build_graph(rng.normal(size=(n, d)), gamma).transition
                np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-9)
                assert (P > 0).all()

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        Z = rng.normal(size=(9, 5))
        P = build_graph(Z, 1.3).transition
        for c in (0.1, 3.0, 100.0):
            Pc = build_graph(c * Z, 1.3).transition
            np.testing.assert_allclose(Pc, P, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        Z = rng.normal(size=(7, 3))
        sigma = rng.permutation(7)
        P = build_graph(Z, 1.0).transition
        P_perm = build_graph(Z[sigma], 1.0).transition
        np.testing.assert_allclose(P_perm, P[np.ix_(sigma, sigma)], atol=1e-12)

    def test_sharpening_gamma_gives_diagonal_argmax(self):
        rng = np.random.default_rng(5)
        Z = rng.normal(size=(6, 4))
        P = build_graph(Z, gamma=0.01).transition
        np.testing.assert_array_equal(P.argmax(axis=0), np.arange(6))
