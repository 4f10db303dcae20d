import numpy as np
import pytest

from sparsenmix.datagen import GeneratorParams, generate


class TestGenerate:
    def test_defaults(self):
        data, Z, truth = generate()
        assert (data.I, data.J, data.M) == (30, 30, 1)
        assert Z.shape == (900, 3)
        assert truth.U0.shape == (30, 8) and truth.V0.shape == (30, 8)
        np.testing.assert_allclose(Z.sum(axis=1), 1.0)
        assert np.all((truth.P_true >= 0) & (truth.P_true <= 1))
        np.testing.assert_allclose(truth.P_true.ravel(), Z @ truth.alpha0)
        np.testing.assert_allclose(truth.Lambda_true, truth.U0 @ truth.V0.T)

    def test_degenerate_scale(self):
        data, _, truth = generate(sparsity=0.0, gamma_scale=0.0)
        np.testing.assert_array_equal(truth.Lambda_true, 0.0)
        np.testing.assert_array_equal(data.y, 0)

    def test_forced_full_detection(self):
        data, _, truth = generate(force_p=1.0, M=2)
        np.testing.assert_array_equal(data.y, truth.latent)

    def test_counts_bounded_by_latent(self):
        data, _, truth = generate(M=3, seed=4)
        assert np.all(data.y >= 0) and np.all(data.y <= truth.latent)
        assert data.y.dtype.kind == "i"

    def test_no_zero_rows(self):
        for seed in range(10):
            _, _, truth = generate(sparsity=0.95, seed=seed)
            assert truth.U0.any(axis=1).all() and truth.V0.any(axis=1).all()

    def test_realized_sparsity_near_target(self):
        _, _, truth = generate(I=200, J=200, seed=1)
        assert abs(truth.realized_sparsity - 0.8) < 0.01

    def test_monte_carlo_mean(self):
        M = 10_000
        data, _, truth = generate(I=3, J=3, F=2, M=M, sparsity=0.0, missing_rate=0.0, seed=11)
        i, j = np.unravel_index(np.argmax(truth.Lambda_true), truth.Lambda_true.shape)
        mean = truth.P_true[i, j] * truth.Lambda_true[i, j]
        sample = data.y[i, j].astype(float)
        se = np.sqrt(mean / M)
        assert abs(sample.mean() - mean) < 3 * se
        # Poisson thinning keeps variance equal to the mean
        assert abs(sample.var() - mean) < 0.1 * mean
        np.testing.assert_allclose(data.y_sum[i, j] / M, sample.mean())

    def test_missing_rate(self):
        data, _, _ = generate(missing_rate=0.3, M=4, seed=2)
        assert abs(data.missing_rate - 0.3) < 0.02

    def test_deterministic(self):
        a = generate(seed=9)
        b = generate(GeneratorParams(seed=9))
        np.testing.assert_array_equal(a[0].y, b[0].y)
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_array_equal(a[2].U0, b[2].U0)

    def test_seed_changes_data(self):
        assert not np.array_equal(generate(seed=1)[0].y, generate(seed=2)[0].y)

    @pytest.mark.parametrize(
        "kw", [dict(sparsity=1.2), dict(sparsity=1.0), dict(missing_rate=1.0), dict(I=0), dict(gamma_scale=-1.0), dict(force_p=1.5)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            generate(**kw)
