import numpy as np
import pytest
from sklearn.metrics import average_precision_score, roc_auc_score

from oracles import auprc_direct, auroc_pairs, perm_mse_bruteforce
from sparsenmix.metrics import (
    alpha_mse, auprc, auroc, graph_errors, graph_mse, link_labels, perm_mse, rrmse,
)


class TestPermMSE:
    def test_identity(self, rng):
        U = rng.uniform(size=(6, 4))
        assert perm_mse(U, U) == pytest.approx(0.0, abs=1e-15)

    def test_permutation_and_rescaling(self, rng):
        for _ in range(20):
            U = rng.uniform(size=(7, 5))
            perm = rng.permutation(5)
            scale = rng.uniform(0.1, 10, 5)
            assert perm_mse(U[:, perm] * scale, U) < 1e-14
            assert perm_mse(U, U[:, perm] * scale) < 1e-14

    def test_factorial_oracle(self):
        rng = np.random.default_rng(8)
        for k in range(100):
            F = 1 + k % 6
            A, B = rng.uniform(size=(5, F)), rng.uniform(size=(5, F))
            np.testing.assert_allclose(perm_mse(A, B), perm_mse_bruteforce(A, B), atol=1e-12)

    def test_small_example(self, rng):
        A, B = rng.uniform(size=(4, 3)), rng.uniform(size=(4, 3))
        np.testing.assert_allclose(perm_mse(A, B), perm_mse_bruteforce(A, B), atol=1e-12)

    def test_zero_column(self):
        A = np.array([[1.0, 0.0], [0.0, 0.0]])
        B = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = perm_mse(A, B, details=True)
        np.testing.assert_allclose(out.value, 0.5)
        np.testing.assert_array_equal(out.zero_columns_hat, [1])
        assert out.zero_columns_true.size == 0
        np.testing.assert_array_equal(out.assignment, [0, 1])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            perm_mse(np.ones((3, 2)), np.ones((3, 3)))


class TestSimpleMetrics:
    def test_alpha_mse(self, rng):
        assert alpha_mse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert alpha_mse([1.0, 1.0], [0.0, 0.0]) == 1.0
        a, b = rng.normal(size=5), rng.normal(size=5)
        np.testing.assert_allclose(alpha_mse(a, b), np.sum((a - b) ** 2) / 5)
        with pytest.raises(ValueError):
            alpha_mse([1.0], [1.0, 2.0])

    def test_graph_mse(self, rng):
        G = rng.uniform(size=(4, 4))
        assert graph_mse(G, G) == 0.0
        assert graph_mse(3.5 * G, G) < 1e-32
        H = rng.uniform(size=(4, 4))
        ref = np.mean((H / np.sqrt((H**2).sum()) - G / np.sqrt((G**2).sum())) ** 2)
        np.testing.assert_allclose(graph_mse(H, G), ref, rtol=1e-14)

    def test_graph_mse_zero_matrix(self, rng):
        G = rng.uniform(size=(3, 3))
        with pytest.warns(RuntimeWarning):
            v = graph_mse(np.zeros((3, 3)), G)
        np.testing.assert_allclose(v, 1.0 / 9.0)

    def test_graph_errors_keys(self, rng):
        U, V = rng.uniform(size=(5, 2)), rng.uniform(size=(4, 2))
        out = graph_errors(U, V, U, V)
        assert set(out) == {"UU", "VV", "UV"} and max(out.values()) < 1e-30

    def test_rrmse(self, rng):
        Y = rng.poisson(3, (5, 4)).astype(float) + 1
        assert rrmse(Y, Y) == 0.0
        assert rrmse(np.zeros_like(Y), Y) == 1.0
        assert rrmse(2 * Y, Y) == 1.0
        with pytest.raises(ValueError):
            rrmse(Y, np.zeros_like(Y))

    def test_rrmse_observed_mask(self):
        Y = np.array([[1.0, 2.0]])
        Yh = np.array([[1.0, 100.0]])
        assert rrmse(Yh, Y, observed=np.array([[True, False]])) == 0.0


class TestRankMetrics:
    def test_separating(self):
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auprc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_constant_scores(self):
        assert auroc(np.ones(6), [0, 1, 0, 1, 1, 0]) == 0.5

    def test_hand_case(self):
        s = np.array([0.3, 0.7, 0.7, 0.1, 0.9, 0.3])
        lab = np.array([0, 1, 0, 0, 1, 1])
        np.testing.assert_allclose(auroc(s, lab), auroc_pairs(s, lab), rtol=1e-15)
        np.testing.assert_allclose(auroc(s, lab), 7.0 / 9.0)

    def test_pair_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            lab = rng.integers(0, 2, n)
            lab[0], lab[1] = 0, 1
            s = rng.integers(0, 6, n).astype(float)  # many ties
            np.testing.assert_allclose(auroc(s, lab), auroc_pairs(s, lab), rtol=1e-13)
            np.testing.assert_allclose(auroc(s, lab), roc_auc_score(lab, s), rtol=1e-13)
            np.testing.assert_allclose(auprc(s, lab), auprc_direct(s, lab), rtol=1e-13)
            np.testing.assert_allclose(auprc(s, lab), average_precision_score(lab, s), rtol=1e-13)

    def test_monotone_invariance(self, rng):
        s = rng.normal(size=50)
        lab = rng.integers(0, 2, 50)
        lab[:2] = [0, 1]
        assert auroc(s, lab) == auroc(np.exp(3 * s) + 1, lab)
        assert auprc(s, lab) == auprc(np.exp(3 * s) + 1, lab)

    @pytest.mark.parametrize("lab", [[0, 0, 0], [1, 1, 1]])
    def test_degenerate_auroc(self, lab):
        with pytest.raises(ValueError):
            auroc([0.1, 0.2, 0.3], lab)

    def test_degenerate_auprc(self):
        with pytest.raises(ValueError):
            auprc([0.1, 0.2], [0, 0])
        assert auprc([0.1, 0.2], [1, 1]) == 1.0

    def test_link_labels(self):
        ys = np.array([[0, 2], [1, 0]])
        obs = np.array([[True, True], [False, True]])
        np.testing.assert_array_equal(link_labels(ys, obs), [False, True, False])
        np.testing.assert_array_equal(link_labels(ys), [False, True, True, False])
