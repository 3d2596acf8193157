import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from lowrank_lab.dynamics import (
    AdaptiveConfig,
    DeepFactorState,
    IntegratorConfig,
    balanced_init,
    blowup_times,
    deep_diag_closed_form,
    flow_deep,
    flow_depth2,
    flow_kernel_depth,
    gd_deep_factored,
    gd_factored,
    kernel_matrix,
    sigma_closed_form,
)
from lowrank_lab.errors import BlowUp, Diverged, InvalidInput, NotPSD
from lowrank_lab.losses import (
    FullObservationLoss,
    LinearLoss,
    SensingLoss,
    build_counterexample_loss,
    completion_measurement,
)
from lowrank_lab.symmat import frob, symmetrize, top_eigpair

RK4 = IntegratorConfig(scheme="rk4", step=1e-3, max_steps=10**7)


def random_sensing(rng, d, m=8):
    ms = [completion_measurement(d, rng.integers(d), rng.integers(d), rng.standard_normal())
          for _ in range(m)]
    return SensingLoss(ms, dim=d)


def random_psd(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * symmetrize(a @ a.T) / d


class TestFlowDepth2:
    def test_linear_loss_matches_matrix_exponential(self):
        q = np.diag([2.0, 1.0])
        spec = LinearLoss(q=q)
        w0 = 1e-3 * np.eye(2)
        traj = flow_depth2(spec, w0, RK4, horizon=3.0)
        for t, w in zip(traj.times[::500], traj.states[::500]):
            e = expm(t * q)
            assert frob(w - e @ w0 @ e) <= 1e-6

    def test_linear_loss_rank_one_limit(self):
        q = np.diag([2.0, 1.0])
        spec = LinearLoss(q=q)
        w0 = 1e-3 * np.eye(2)
        traj = flow_depth2(spec, w0, RK4, horizon=6.0)
        t, w = traj.final_time, traj.final_state
        limit = w0[0, 0] * np.outer([1, 0], [1, 0])
        assert frob(np.exp(-2 * q[0, 0] * t) * w - limit) <= 1e-5

    def test_full_observation_diagonal_closed_form(self):
        mu = np.array([3.0, 2.0, 1.0])
        alpha = 1e-2
        spec = FullObservationLoss(np.diag(mu))
        traj = flow_depth2(spec, alpha * np.eye(3), RK4, horizon=10.0 / mu.min())
        worst = 0.0
        for t, w in zip(traj.times, traj.states):
            want = np.array([sigma_closed_form(alpha, m, t) for m in mu])
            worst = max(worst, np.max(np.abs(np.diagonal(w) - want)))
        assert worst <= 1e-6

    def test_stationary_point_constant(self):
        spec = FullObservationLoss(np.diag([3.0, 2.0]))
        w0 = np.diag([3.0, 0.0])  # rank-1 critical point
        traj = flow_depth2(spec, w0, RK4, horizon=1.0)
        assert frob(traj.final_state - w0) <= 1e-10

    def test_rejects_indefinite_start(self):
        spec = LinearLoss(q=np.eye(2))
        with pytest.raises(NotPSD):
            flow_depth2(spec, np.diag([1.0, -1.0]), RK4, horizon=1.0)

    def test_divergence_guard(self):
        spec = LinearLoss(q=np.eye(2))  # dW/dt = 2W: doubles every half unit
        cfg = IntegratorConfig(scheme="rk4", step=1e-2, max_steps=10**7)
        with pytest.raises(Diverged) as err:
            flow_depth2(spec, np.eye(2), cfg, horizon=100.0)
        assert err.value.trajectory is not None
        assert len(err.value.trajectory) > 1

    @pytest.mark.parametrize("seed", range(3))
    def test_loss_monotone_and_psd_preserved(self, seed):
        rng = np.random.default_rng(seed)
        spec = random_sensing(rng, 4)
        w0 = random_psd(rng, 4, scale=0.5)
        traj = flow_depth2(spec, w0, RK4, horizon=5.0)
        diffs = np.diff(traj.loss)
        assert np.all(diffs <= 1e-10)
        for row in traj.eigvals:
            assert row[-1] >= -1e-8 * max(abs(row[0]), abs(row[-1]))

    def test_rk4_step_halving_order(self):
        rng = np.random.default_rng(5)
        spec = random_sensing(rng, 3)
        w0 = random_psd(rng, 3)
        ends = {}
        for h in (0.02, 0.01, 0.0025):
            cfg = IntegratorConfig(scheme="rk4", step=h, max_steps=10**6)
            ends[h] = flow_depth2(spec, w0, cfg, horizon=1.0).final_state
        e1 = frob(ends[0.02] - ends[0.0025])
        e2 = frob(ends[0.01] - ends[0.0025])
        order = math.log2(e1 / e2)
        assert order >= 3.5

    def test_critical_point_characterization(self):
        spec = FullObservationLoss(np.diag([3.0, 2.0, 1.0]))
        crit = np.diag([3.0, 0.0, 0.0])
        non_crit = np.diag([1.0, 0.0, 0.0])
        for w, is_crit in ((crit, True), (non_crit, False)):
            g = spec.gradient(w)
            flow_norm = frob(w @ g + g @ w)
            gw_norm = frob(g @ w)
            assert (flow_norm <= 1e-10) == is_crit
            assert (gw_norm <= 1e-10) == is_crit


class TestGdFactored:
    def test_stationary_start_constant(self):
        spec = FullObservationLoss(np.diag([2.0, 1.0]))
        u0 = np.array([[math.sqrt(2.0)], [0.0]])  # exact rank-1 minimizer factor
        cfg = IntegratorConfig(scheme="euler", step=1e-2, max_steps=1000)
        traj = gd_factored(spec, u0, cfg, horizon=math.inf)
        assert frob(traj.final_state - u0 @ u0.T) <= 1e-12

    def test_depth2_consistency_with_flow(self):
        rng = np.random.default_rng(11)
        spec = random_sensing(rng, 4)
        u0 = rng.standard_normal((4, 4)) * 0.3
        cfg = IntegratorConfig(scheme="euler", step=1e-4, max_steps=10**6)
        traj_gd = gd_factored(spec, u0, cfg, horizon=5.0)
        cfg_flow = IntegratorConfig(scheme="rk4", step=1e-2, max_steps=10**6)
        traj_flow = flow_depth2(spec, u0 @ u0.T, cfg_flow, horizon=5.0)
        # compare endpoints at the same continuous time
        assert abs(traj_gd.final_time - traj_flow.final_time) <= 1e-6
        assert frob(traj_gd.final_state - traj_flow.final_state) <= 1e-3

    def test_counterexample_rank1_seed_heads_to_rank_solution(self):
        # the long valley ride to the full rank-1 completion lives in
        # test_glrl; here a bounded budget must show decisive progress
        big_r = 100.0
        spec = build_counterexample_loss(big_r)
        lam, u1, _ = top_eigpair(-spec.gradient(np.zeros((4, 4))))
        u0 = math.sqrt(1e-7) * u1[:, None]
        cfg = IntegratorConfig(scheme="euler", step=1.8, stability_capped=True,
                               max_steps=120_000_000, record_every=10_000_000)
        traj = gd_factored(spec, u0, cfg, horizon=math.inf)
        v = np.array([1.0, big_r, 1.0, big_r])
        m_rank = np.outer(v, v)
        end = traj.final_state
        assert frob(end - m_rank) <= 0.2 * frob(m_rank)
        assert spec.value(end) <= 1e-4 * spec.value(np.zeros((4, 4)))
        # state stays exactly rank one: the factored path cannot leak rank
        vals = np.abs(np.linalg.eigvalsh(end))
        assert vals[-2] <= 1e-10 * vals[-1]

    def test_capped_kernel_matches_numpy_reference(self):
        # the numba fast path must agree with the pure-numpy stepping rule
        from lowrank_lab import _kernels
        from lowrank_lab.dynamics import _capped_numpy
        rng = np.random.default_rng(4)
        spec = random_sensing(rng, 3, m=5)
        hnorm = spec.hessian_norm()
        w0 = random_psd(rng, 3, scale=0.5)
        for capped in (True, False):
            safety = 1.0 if capped else 1e-3
            w_k = w0.copy()
            taken_k, status_k, t_k, _ = _kernels.capped_euler_w(
                w_k, spec._xs, spec._ys, safety, hnorm, 500, 1e24, 0.0, 0.0,
                True, np.inf, capped)
            w_n = w0.copy()
            taken_n, status_n, t_n, _ = _capped_numpy(
                spec, w_n, safety, hnorm, 500, 1e24, 0.0, 0.0, True, np.inf,
                False, capped)
            assert (taken_k, status_k) == (taken_n, status_n)
            assert t_k == pytest.approx(t_n, rel=1e-12)
            assert frob(w_k - w_n) <= 1e-12 * max(1.0, frob(w_n))
            # factored variant
            u0 = rng.standard_normal((3, 2)) * 0.3
            u_k = u0.copy()
            _kernels.capped_gd_u(u_k, spec._xs, spec._ys, safety, hnorm, 300,
                                 0.0, 0.0, True, np.inf, 1e24, capped)
            u_n = u0.copy()
            _capped_numpy(spec, u_n, safety, hnorm, 300, 1e24, 0.0, 0.0, True,
                          np.inf, True, capped)
            assert frob(u_k - u_n) <= 1e-12 * max(1.0, frob(u_n))

    def test_adaptive_first_step_bias_correction(self):
        spec = FullObservationLoss(np.diag([2.0, 1.0]))
        u0 = np.eye(2)
        eta, eps = 1e-2, 1e-3
        cfg = IntegratorConfig(scheme="adaptive_gd", step=eta,
                               adaptive=AdaptiveConfig(alpha=0.99, epsilon=eps),
                               max_steps=1)
        traj = gd_factored(spec, u0, cfg, horizon=math.inf)
        grad0 = spec.gradient(u0 @ u0.T) @ u0
        expected_rate = eta / (frob(grad0) + eps)
        u1 = u0 - expected_rate * grad0
        assert frob(traj.final_state - u1 @ u1.T) <= 1e-12
        assert traj.final_time == pytest.approx(expected_rate)

    def test_adaptive_zero_gradient_stays_put(self):
        spec = SensingLoss([], dim=2)
        cfg = IntegratorConfig(scheme="adaptive_gd", step=1e-2,
                               adaptive=AdaptiveConfig(), max_steps=50)
        traj = gd_factored(spec, np.eye(2), cfg, horizon=math.inf)
        assert frob(traj.final_state - np.eye(2)) == 0.0


class TestFlowDeep:
    def test_rejects_depth_two(self):
        with pytest.raises(InvalidInput):
            flow_deep(LinearLoss(q=np.eye(2)), np.eye(2), 2, RK4, 1.0)

    def test_diagonal_linear_matches_closed_form(self):
        # growth rates mu: minus the gradient of LinearLoss(q) is q itself
        mu = np.array([1.0, 0.8])
        spec = LinearLoss(q=np.diag(mu))
        depth = 4
        m0 = np.array([0.5, 0.3])
        w0 = np.diag(m0**2.0)  # M = W^{1/2} for depth 4
        t_star = blowup_times(m0, mu, depth / 2.0).min()
        cfg = IntegratorConfig(scheme="rk4", step=1e-4, max_steps=10**6)
        traj = flow_deep(spec, w0, depth, cfg, horizon=0.5 * t_star)
        worst = 0.0
        for t, w in zip(traj.times, traj.states):
            want = deep_diag_closed_form(m0, mu, depth / 2.0, t) ** (depth / 2.0)
            worst = max(worst, np.max(np.abs(np.diagonal(w) - want)))
        assert worst <= 1e-6

    def test_deep_escape_instance_guard_hit_by_boosted_index(self):
        rates = np.array([2.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1])
        rng = np.random.default_rng(0)
        alpha = 1e-2
        diag = rng.uniform(0.9, 1.1, 10) * alpha
        diag[1] = 16 * alpha
        spec = LinearLoss(q=np.diag(rates))
        cfg = IntegratorConfig(scheme="euler", step=1e-3, relative_step=True,
                               max_steps=10**6, record_every=100)
        with pytest.raises(Diverged) as err:
            flow_deep(spec, np.diag(diag), 4, cfg, horizon=math.inf)
        final = err.value.trajectory.states[-1]
        assert int(np.argmax(np.diagonal(final))) == 1

    def test_diagonality_preserved(self):
        spec = LinearLoss(q=np.diag([1.0, 0.5, 0.25]))
        w0 = np.diag([0.1, 0.2, 0.05])
        cfg = IntegratorConfig(scheme="rk4", step=1e-3, max_steps=10**5)
        traj = flow_deep(spec, w0, 4, cfg, horizon=1.0)
        for w in traj.states:
            off = w - np.diag(np.diagonal(w))
            assert np.max(np.abs(off)) <= 1e-12

    def test_rank_preserved(self):
        rng = np.random.default_rng(2)
        spec = FullObservationLoss(random_psd(rng, 4))
        u = rng.standard_normal((4, 2))
        w0 = u @ u.T / 4
        cfg = IntegratorConfig(scheme="rk4", step=1e-4, max_steps=10**5)
        traj = flow_deep(spec, w0, 4, cfg, horizon=1.0)
        for row in traj.eigvals:
            scale = max(abs(row[0]), abs(row[-1]))
            assert np.sum(row > 1e-10 * scale) == 2


class TestGdDeepFactored:
    def test_matches_m_dynamics(self):
        rng = np.random.default_rng(3)
        spec = FullObservationLoss(np.diag([2.0, 1.0, 0.5]))
        state = balanced_init(3, 3, scale=0.3, rng=rng)
        w0 = state.product()
        cfg_gd = IntegratorConfig(scheme="euler", step=5e-4, max_steps=10**5)
        cfg_flow = IntegratorConfig(scheme="rk4", step=5e-3, max_steps=10**5)
        traj_gd = gd_deep_factored(spec, state, cfg_gd, horizon=3.0)
        traj_flow = flow_deep(spec, symmetrize(w0), 3, cfg_flow, horizon=3.0)
        assert frob(traj_gd.final_state - traj_flow.final_state) <= 5e-3

    def test_zero_gradient_constant(self):
        spec = SensingLoss([], dim=2)
        state = balanced_init(2, 3, scale=0.5, rng=np.random.default_rng(0))
        cfg = IntegratorConfig(scheme="adaptive_gd", step=1e-2,
                               adaptive=AdaptiveConfig(), max_steps=100)
        traj = gd_deep_factored(spec, state, cfg, horizon=math.inf)
        assert frob(traj.final_state - state.product()) == 0.0

    def test_unbalanced_factors_rejected(self):
        with pytest.raises(InvalidInput):
            DeepFactorState([np.eye(2), 3.0 * np.eye(2)], balanced_tol=1e-8)


class TestBalancedInit:
    def test_identity_profile_depth2(self):
        rng = np.random.default_rng(4)
        d, scale = 3, 0.7
        state = balanced_init(d, 2, scale, rng, diag=np.ones(d))
        w = state.product()
        assert frob(w) == pytest.approx(scale, rel=1e-12)
        # W = V diag(scale/sqrt(d)) V^T has equal eigenvalues
        vals = np.linalg.eigvalsh(symmetrize(w))
        assert np.allclose(vals, scale / math.sqrt(d), atol=1e-12)

    @pytest.mark.parametrize("depth", [2, 3, 4])
    def test_balance_symmetry_and_norm(self, depth):
        rng = np.random.default_rng(depth)
        state = balanced_init(5, depth, scale=0.11, rng=rng)
        assert state.balance_drift() <= 1e-12
        w = state.product()
        assert frob(w - w.T) <= 1e-12
        assert frob(w) == pytest.approx(0.11, rel=1e-10)
        assert np.min(np.linalg.eigvalsh(symmetrize(w))) >= -1e-12

    def test_reproducible(self):
        a = balanced_init(4, 3, 1e-2, np.random.default_rng(9))
        b = balanced_init(4, 3, 1e-2, np.random.default_rng(9))
        for ua, ub in zip(a.factors, b.factors):
            assert np.array_equal(ua, ub)


class TestKernel:
    def test_equal_sigmas_all_ones(self):
        for depth in (1, 2, 7, math.inf):
            k = kernel_matrix(np.array([1.0, 1.0]), depth)
            assert np.allclose(k, np.ones((2, 2)), atol=1e-12)

    def test_depth2_closed_form(self):
        k = kernel_matrix(np.array([3.0, 1.0]), 2)
        assert k[0, 1] == pytest.approx(2.0)
        assert k[0, 0] == pytest.approx(3.0)
        assert k[1, 1] == pytest.approx(1.0)

    def test_infinite_limit_value(self):
        k = kernel_matrix(np.array([math.e, 1.0]), math.inf)
        assert k[0, 1] == pytest.approx((math.e**2 - 1) / 2, rel=1e-12)

    def test_large_depth_approaches_limit(self):
        rng = np.random.default_rng(1)
        s = rng.uniform(0.1, 3.0, size=5)
        gap = np.max(np.abs(kernel_matrix(s, 10**6) - kernel_matrix(s, math.inf)))
        assert gap <= 1e-3

    def test_zero_sigma_against_positive_inf_depth(self):
        k = kernel_matrix(np.array([1.0, 0.0]), math.inf)
        assert k[0, 1] == 0.0
        assert k[1, 1] == 0.0


class TestFlowKernelDepth:
    def test_depth2_matches_flow_depth2(self):
        rng = np.random.default_rng(6)
        spec = random_sensing(rng, 3)
        w0 = random_psd(rng, 3, scale=0.4)
        eta = 1e-4
        cfg_k = IntegratorConfig(scheme="euler", step=eta, max_steps=10**5,
                                 record_every=100)
        traj_k = flow_kernel_depth(spec, w0, 2, cfg_k, horizon=0.5)
        cfg_f = IntegratorConfig(scheme="euler", step=eta / 2, max_steps=10**5,
                                 record_every=100)
        traj_f = flow_depth2(spec, w0, cfg_f, horizon=0.25)
        assert len(traj_k) == len(traj_f)
        worst = max(frob(a - b) for a, b in zip(traj_k.states, traj_f.states))
        assert worst <= 1e-4

    def test_depth_convergence_at_matched_normalized_time(self):
        rng = np.random.default_rng(8)
        spec = random_sensing(rng, 4, m=10)
        z = rng.standard_normal((4, 4))
        w0 = 1e-3 * z / frob(z)
        cfg = IntegratorConfig(scheme="rk4", step=1e-2, max_steps=10**5)
        ends = {}
        for depth in (4, 16, 64, 256):
            ends[depth] = flow_kernel_depth(spec, w0, depth, cfg, horizon=2.0).final_state
        assert frob(ends[64] - ends[256]) < frob(ends[4] - ends[16])


class TestClosedForms:
    def test_sigma_at_zero(self):
        assert sigma_closed_form(0.1, 2.0, 0.0) == pytest.approx(0.1)

    def test_sigma_saturates(self):
        mu = 2.0
        assert sigma_closed_form(1e-4, mu, 50.0 / mu) == pytest.approx(mu, abs=1e-8)

    def test_sigma_against_ivp(self):
        alpha, mu = 1e-3, 2.0
        sol = solve_ivp(lambda _, x: 2 * x * (mu - x), (0, 3), [alpha],
                        rtol=1e-12, atol=1e-14, dense_output=True)
        assert sigma_closed_form(alpha, mu, 3.0) == pytest.approx(
            float(sol.sol(3.0)[0]), abs=1e-8)

    def test_sigma_mu_zero_branch(self):
        alpha = 0.5
        sol = solve_ivp(lambda _, x: -2 * x**2, (0, 4), [alpha],
                        rtol=1e-12, atol=1e-14)
        assert sigma_closed_form(alpha, 0.0, 4.0) == pytest.approx(
            float(sol.y[0, -1]), abs=1e-10)

    def test_deep_diag_zero_stays_zero(self):
        out = deep_diag_closed_form(np.array([0.0, 0.2]), np.array([1.0, 1.0]), 2.0, 1.0)
        assert out[0] == 0.0

    def test_deep_diag_at_zero_time(self):
        m0 = np.array([0.4, 0.2])
        out = deep_diag_closed_form(m0, np.array([1.0, 2.0]), 2.0, 0.0)
        assert np.allclose(out, m0, rtol=1e-14)

    def test_deep_diag_blowup_raises(self):
        m0, mu = np.array([0.5]), np.array([1.0])
        t_star = float(blowup_times(m0, mu, 2.0)[0])
        with pytest.raises(BlowUp) as err:
            deep_diag_closed_form(m0, mu, 2.0, t_star * 1.01)
        assert err.value.index == 0
        assert err.value.time == pytest.approx(t_star)

    def test_deep_diag_against_ivp(self):
        m0 = np.array([0.5, 0.3])
        mu = np.array([1.0, 0.8])
        p = 2.0
        sol = solve_ivp(lambda _, x: 2 * mu * x**p, (0, 0.8), m0,
                        rtol=1e-12, atol=1e-14)
        want = deep_diag_closed_form(m0, mu, p, 0.8)
        assert np.allclose(sol.y[:, -1], want, atol=1e-8)


class TestTrajectoryBookkeeping:
    def test_times_strictly_increasing_and_row_count(self):
        spec = FullObservationLoss(np.diag([1.0, 0.5]))
        cfg = IntegratorConfig(scheme="euler", step=1e-2, max_steps=10**4,
                               record_every=7)
        traj = gd_factored(spec, 0.1 * np.eye(2), cfg, horizon=1.0)
        assert np.all(np.diff(traj.times) > 0)
        steps = 100  # horizon / step
        assert len(traj) == math.ceil(steps / 7) + 1
