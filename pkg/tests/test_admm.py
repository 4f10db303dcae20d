import numpy as np
import pytest

from sparsenmix.admm import (
    KktResiduals, SolverDivergence, augmented_lagrangian, eps_schedule, fit, impute_missing,
    kkt_residuals, negative_log_likelihood, penalty_dual_update, write_trace_csv,
)
from sparsenmix.datagen import generate
from sparsenmix.initialization import init_aux
from sparsenmix.types import BLOCKS, CountData, DetectionState, SolverConfig
from sparsenmix.uv import SmoothObjective


@pytest.fixture(scope="module")
def small_problem():
    return generate(I=12, J=10, F=3, seed=4)


@pytest.fixture(scope="module")
def small_fit(small_problem):
    data, Z, _ = small_problem
    return fit(data, Z, SolverConfig(F=3, eps0=1e-2, max_outer=200, seed=1))


class TestEpsSchedule:
    def test_unit_penalty(self):
        assert eps_schedule(1.0, 0.7, 0.6) == 0.7

    def test_formula(self):
        np.testing.assert_allclose(eps_schedule(8.0, 1.0, 0.6), 8.0**-0.6, rtol=1e-15)

    def test_decreasing(self):
        assert eps_schedule(2.0, 1.0, 0.55) < eps_schedule(1.0, 1.0, 0.55)

    @pytest.mark.parametrize("beta", [0.5, 2 / 3, 0.7])
    def test_beta_range(self, beta):
        with pytest.raises(ValueError):
            eps_schedule(1.0, 1.0, beta)


def make_aux(rng, I=3, J=2):
    U, V = rng.uniform(size=(I, 2)), rng.uniform(size=(J, 2))
    aux = init_aux(U, V, SolverConfig(F=2, rho0=0.5))
    for X in BLOCKS:
        aux.W[X] = rng.normal(size=aux.W[X].shape)
    return aux


class TestPenaltyDualUpdate:
    def test_zero_residual(self, rng):
        aux = make_aux(rng)
        out = penalty_dual_update(aux, dict(aux.A), {X: 1.0 for X in BLOCKS}, 2.0)
        for X in BLOCKS:
            np.testing.assert_array_equal(out.W[X], aux.W[X])
            assert out.rho[X] == aux.rho[X] and out.increases[X] == 0

    def test_increase_branch(self, rng):
        aux = make_aux(rng)
        Ms = {X: aux.A[X] + 1.0 for X in BLOCKS}
        eps = {"UU": 0.1, "UV": 100.0, "VV": 0.1}
        out = penalty_dual_update(aux, Ms, eps, 2.0)
        for X in ("UU", "VV"):
            assert out.rho[X] == 1.0 and out.increases[X] == 1
            np.testing.assert_allclose(out.W[X], (aux.W[X] + 1.0) / 2.0)
            # the unscaled dual takes the usual step H + rho r
            np.testing.assert_allclose(out.H(X), aux.H(X) + aux.rho[X] * 1.0)
        assert out.rho["UV"] == 0.5
        np.testing.assert_allclose(out.W["UV"], aux.W["UV"] + 1.0)

    def test_input_untouched(self, rng):
        aux = make_aux(rng)
        W0 = aux.W["UU"].copy()
        penalty_dual_update(aux, {X: aux.A[X] + 1 for X in BLOCKS}, {X: 0.0 for X in BLOCKS}, 3.0)
        np.testing.assert_array_equal(aux.W["UU"], W0)
        assert aux.rho["UU"] == 0.5

    def test_gamma_must_exceed_one(self, rng):
        with pytest.raises(ValueError):
            penalty_dual_update(make_aux(rng), {}, {}, 1.0)


class TestImputeMissing:
    def test_no_missing_is_identity(self):
        data = CountData(y=np.ones((2, 2, 2), int))
        assert impute_missing(data, np.ones(4), np.ones((2, 1)), np.ones((2, 1))) is data

    def test_zero_detection(self):
        miss = np.zeros((1, 1, 2), bool)
        miss[0, 0, 1] = True
        data = CountData(y=np.array([[[3, 0]]]), missing=miss)
        out = impute_missing(data, np.array([0.0]), np.array([[2.0]]), np.array([[2.0]]))
        assert out.y[0, 0, 1] == 0.0
        assert out.y_sum[0, 0] == 3.0

    def test_single_entry(self):
        miss = np.array([[[True]], [[False]]])
        data = CountData(y=np.array([[[0]], [[1]]]), missing=miss)
        out = impute_missing(data, np.array([0.5, 0.5]), np.array([[2.0], [1.0]]), np.array([[2.0]]))
        assert out.y[0, 0, 0] == 2.0
        assert out.y[1, 0, 0] == 1.0


class TestFitTraces:
    def test_lengths(self, small_fit):
        n = small_fit.n_iter
        for key in ("nll", "objective", "kkt_max", "L_pre", "L_post", "rho_UU", "r_UV"):
            assert len(small_fit.trace[key]) == n

    def test_residual_bound(self, small_fit):
        for X in BLOCKS:
            gap = np.array(small_fit.trace["prox_gap_" + X])
            bound = np.array(small_fit.trace["prox_bound_" + X])
            assert np.all(gap <= bound + 1e-8)

    def test_penalties_monotone(self, small_fit):
        for X in BLOCKS:
            rho = np.array([1e-3] + small_fit.trace["rho_" + X])
            assert np.all(np.diff(rho) >= 0)

    def test_increases_stop(self, small_fit):
        events = small_fit.penalty_increase_events()
        assert 0 < len(events)
        assert max(k for k, _ in events) < 100 <= small_fit.n_iter

    def test_residual_below_tolerance_after_last_increase(self, small_fit):
        tr = small_fit.trace
        for X in BLOCKS:
            ks = [k for k, b in small_fit.penalty_increase_events() if b == X]
            start = max(ks) if ks else 0
            r = np.array(tr["r_" + X][start:])
            eps = np.array(tr["eps_" + X][start:])
            assert np.all(r <= eps)

    def test_block_descent(self, small_fit):
        tr = small_fit.trace
        pre, mid, post = (np.array(tr[k]) for k in ("F_pre_U", "F_post_U", "F_post_V"))
        assert np.all(mid <= pre + 1e-10)
        assert np.all(post <= mid + 1e-10)

    def test_lagrangian_audit(self, small_fit):
        tr = small_fit.trace
        excess = np.array(tr["L_post"]) - np.array(tr["L_pre"]) - np.array(tr["dual_bump"])
        scale = np.maximum(1.0, np.abs(tr["L_pre"]))
        assert np.all(excess <= 1e-9 * scale)

    def test_floor_respected(self, small_fit):
        assert min(small_fit.trace["min_counted_intensity"]) >= 1e-10

    def test_kkt_trend(self, small_fit):
        kkt = small_fit.trace["kkt_max"]
        assert kkt[-1] < 0.1 * kkt[0]

    def test_feasible_detection(self, small_problem, small_fit):
        _, Z, _ = small_problem
        det = small_fit.detection
        assert np.all((det.p >= 0) & (det.p <= 1))
        assert np.linalg.norm(det.p - np.clip(Z @ det.alpha, 0, 1)) == 0.0


class TestFitBehaviour:
    def test_deterministic(self, small_problem):
        data, Z, _ = small_problem
        cfg = SolverConfig(F=3, max_outer=15, seed=3)
        a, b = fit(data, Z, cfg), fit(data, Z, cfg)
        np.testing.assert_array_equal(a.U, b.U)
        np.testing.assert_array_equal(a.V, b.V)
        np.testing.assert_array_equal(a.alpha, b.alpha)
        assert a.trace["nll"] == b.trace["nll"]

    def test_engines_agree(self, small_problem):
        data, Z, _ = small_problem
        cfg = SolverConfig(F=3, max_outer=5, seed=3)
        a = fit(data, Z, cfg)
        b = fit(data, Z, cfg.replace(engine="numpy"))
        np.testing.assert_allclose(a.U, b.U, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(a.alpha, b.alpha, rtol=1e-6, atol=1e-9)

    def test_zero_counts(self):
        rng = np.random.default_rng(0)
        data = CountData(y=np.zeros((6, 5, 1), int))
        Z = rng.uniform(size=(30, 2))
        res = fit(data, Z, SolverConfig(F=2, max_outer=40, eps0=1e-2))
        assert res.detection.p.max() < 1e-3
        assert res.U.sum() + res.V.sum() < 2 * 12 * 1e-2
        tr = res.trace
        excess = np.array(tr["L_post"]) - np.array(tr["L_pre"]) - np.array(tr["dual_bump"])
        assert np.all(excess <= 1e-9)

    def test_callback_sees_start_and_every_iteration(self, small_problem):
        data, Z, _ = small_problem
        seen = []
        res = fit(data, Z, SolverConfig(F=3, max_outer=4), callback=lambda k, U, V, d: seen.append(k), kkt=False)
        assert seen == list(range(res.n_iter + 1))
        assert res.trace["kkt"] == []

    def test_missing_entries_are_imputed(self):
        data, Z, _ = generate(I=8, J=7, F=2, M=2, missing_rate=0.2, seed=2)
        res = fit(data, Z, SolverConfig(F=2, max_outer=5))
        assert np.all(np.isfinite(res.U)) and len(res.trace["nll"]) == 5

    def test_divergence_reports_trace(self, small_problem, monkeypatch):
        import sparsenmix.admm as admm

        data, Z, _ = small_problem

        real = admm.update_V

        def nan_v(U, V, smooth, t, **kw):
            res = real(U, V, smooth, t, **kw)
            res.X = res.X * np.nan
            return res

        monkeypatch.setattr(admm, "update_V", nan_v)
        with pytest.raises(SolverDivergence) as info:
            fit(data, Z, SolverConfig(F=3, max_outer=3), kkt=False)
        assert len(info.value.trace["F_pre_U"]) == 1
        assert info.value.trace["nll"] == []


class TestKkt:
    def test_hand_built_point(self):
        I, J, F = 3, 4, 2
        U, V = np.zeros((I, F)), np.zeros((J, F))
        aux = init_aux(U, V, SolverConfig(F=F))
        Z = np.random.default_rng(0).uniform(size=(I * J, 2))
        det = DetectionState(alpha=np.zeros(2), p=np.zeros(I * J), omega=np.zeros(I * J))
        res = kkt_residuals(U, V, aux, det, Z, np.zeros((I, J)), 1)
        assert res.max() == 0.0
        assert isinstance(res, KktResiduals)

    def test_zero_entry_threshold_band(self):
        U, V = np.zeros((2, 1)), np.zeros((2, 1))
        aux = init_aux(U, V, SolverConfig(F=1, lam=1.0, rho0=1.0))
        aux.W["UU"][:] = 1.4  # |H| = 1.4 < rho * tau = 1.5 keeps zero entries
        det = DetectionState(np.zeros(1), np.zeros(4), np.zeros(4))
        res = kkt_residuals(U, V, aux, det, np.ones((4, 1)), np.zeros((2, 2)), 1)
        assert res.A_gap["UU"] == 0.0
        aux.W["UU"][:] = 1.6
        res = kkt_residuals(U, V, aux, det, np.ones((4, 1)), np.zeros((2, 2)), 1)
        np.testing.assert_allclose(res.A_gap["UU"], 2 * 0.1, rtol=1e-12)

    def test_random_point_is_not_stationary(self, rng):
        data, Z, _ = generate(I=6, J=5, F=2, seed=9)
        U, V = rng.uniform(0.5, 2, (6, 2)), rng.uniform(0.5, 2, (5, 2))
        aux = init_aux(U, V, SolverConfig(F=2))
        for X in BLOCKS:
            aux.A[X] = aux.A[X] + 1.0
        alpha = np.full(Z.shape[1], 0.3)
        det = DetectionState(alpha, np.clip(Z @ alpha, 0, 1), rng.normal(size=30))
        assert kkt_residuals(U, V, aux, det, Z, data.y_sum, 1).max() > 0.1


def test_augmented_lagrangian_matches_smooth_value(rng):
    U, V = rng.uniform(0.5, 1, (4, 2)), rng.uniform(0.5, 1, (3, 2))
    aux = init_aux(U, V, SolverConfig(F=2, rho0=0.3, lam=0.2))
    for X in BLOCKS:
        aux.A[X] = aux.A[X] + rng.normal(scale=0.1, size=aux.A[X].shape)
        aux.W[X] = rng.normal(scale=0.1, size=aux.W[X].shape)
    ys = rng.poisson(2, (4, 3)).astype(float)
    sm = SmoothObjective(ys, np.full((4, 3), 0.5), 1, aux)
    # L = F + sum_X (lam ||A||_1/2 - rho/2 ||W||^2)
    const = sum(
        aux.lam[X] * np.sqrt(np.abs(aux.A[X])).sum() - 0.5 * aux.rho[X] * (aux.W[X] ** 2).sum() for X in BLOCKS
    )
    np.testing.assert_allclose(augmented_lagrangian(sm, U, V, aux), sm.value(U, V) + const, rtol=1e-12)


def test_negative_log_likelihood_value():
    nll = negative_log_likelihood(np.array([[2.0, 0.0]]), np.array([0.5, 0.5]), np.array([[4.0, 1.0]]), 1)
    np.testing.assert_allclose(nll, 0.5 * 5.0 - 2.0 * np.log(2.0))


def test_trace_csv(tmp_path, small_fit):
    path = tmp_path / "trace.csv"
    write_trace_csv(small_fit, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,nll,r_UU,r_UV,r_VV,rho_UU,rho_UV,rho_VV,kkt_max"
    assert len(lines) == small_fit.n_iter + 1
