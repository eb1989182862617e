"""Gap checks, weighted resolvent, backward fixed point, graph machinery."""

import numpy as np
import pytest

from imlab.errors import ContractionViolationError, InfeasibleResolutionError
from imlab.manifold import (
    GapReport,
    ManifoldGraph,
    PerronConfig,
    build_manifold,
    choose_parameters,
    gap_check_rates,
    graph_distance_series,
    invariance_residual,
    iteration_count_bound,
    linear_backward_flow,
    make_perron_config,
    manifold_graph_eval,
    perron_solve,
    perron_solve_batch,
    resolvent_apply,
    resolvent_matrix,
    resolvent_norm_report,
    spectral_gap_check,
    tracking_verify,
    weighted_norm,
)
from imlab.space import dirichlet_space
from imlab.spectral import BasisKind, get_basis


def linear_op(B, eps):
    """Mode-coupling linear term eps * B v as a batched callable."""
    def op(V):
        return eps * np.einsum("ij,...cj->...ci", B, np.asarray(V, dtype=float))
    return op


def zero_op(V):
    return np.zeros_like(np.asarray(V, dtype=float))


class TestGapCheck:
    def test_zero_lipschitz_passes_everywhere(self):
        for n in (1, 3, 17):
            rep = spectral_gap_check(n, np.pi, 0.0, 0.0)
            assert rep.passed
            assert rep.budget == 0.0

    def test_reference_arithmetic(self):
        rep = spectral_gap_check(5, np.pi, 0.1, 1.0)
        assert rep.gap == pytest.approx(11.0, rel=1e-14)
        assert rep.cond1_lhs == pytest.approx(11.0 / 6.0, rel=1e-14)
        assert rep.cond1  # 1.833 > 0.4
        assert rep.cond2  # 11 > 4
        assert rep.budget == pytest.approx(2 * 6 * 0.1 / 11 + 2 * 1.0 / 11, rel=1e-12)
        assert rep.budget == pytest.approx(0.291, abs=5e-4)

    def test_large_L2_requires_large_n(self):
        # L2 = 10 (after safety 2 -> 20): first n with budget <= 0.5 satisfies
        # gap = 2n+1 >= 4 * 20, i.e. n* = 40
        space = dirichlet_space(np.pi, 256, 1)
        K, n, cfg, rep = choose_parameters(
            lambda K: (0.0, 10.0), space, np.pi, n_max=64)
        assert n == 40
        assert rep.passed

    def test_infeasible_raises(self):
        space = dirichlet_space(np.pi, 64, 1)
        with pytest.raises(InfeasibleResolutionError):
            choose_parameters(lambda K: (0.0, 1e6), space, np.pi)

    def test_choose_zero_nonlinearity(self):
        space = dirichlet_space(np.pi, 64, 1)
        K, n, cfg, rep = choose_parameters(lambda K: (0.0, 0.0), space, np.pi)
        assert (K, n) == (8, 1)
        assert cfg.theta == pytest.approx((1.0 + 4.0) / 2)

    def test_iteration_bound(self):
        assert iteration_count_bound(0.25, 1e-9) == int(np.ceil(np.log(1e-9) / np.log(0.30))) + 2
        assert iteration_count_bound(0.96, 1e-9) == 10**9


class TestPerronConfig:
    def test_invariants(self):
        space = dirichlet_space(np.pi, 32, 1)
        cfg = make_perron_config(space, 3, 8)
        assert cfg.rate_low < cfg.theta < cfg.rate_high
        assert np.exp(-(cfg.rate_high - cfg.theta) * cfg.t_horizon) <= cfg.tol * 1.01
        assert cfg.t_grid[0] == pytest.approx(-cfg.t_horizon)
        assert cfg.t_grid[-1] == 0.0

    def test_bad_horizon_rejected(self):
        space = dirichlet_space(np.pi, 32, 1)
        ok = make_perron_config(space, 3, 8)
        with pytest.raises(ValueError):
            PerronConfig(space, 3, 8, ok.theta, ok.rate_low, ok.rate_high,
                         t_horizon=0.1, dt_p=1e-3, tol=1e-9,
                         low_mask=ok.low_mask)


class TestResolvent:
    def test_zero_forcing(self):
        space = dirichlet_space(np.pi, 8, 1)
        cfg = make_perron_config(space, 2, 4)
        h = np.zeros((cfg.n_samples, 1, 8))
        assert np.max(np.abs(resolvent_apply(h, cfg))) == 0.0

    def test_exponential_forcing_closed_form_fast_mode(self):
        # mode above theta: y(t) = (e^{mu t} - e^{-lam(t+T) - mu T})/(lam+mu)
        space = dirichlet_space(np.pi, 8, 1)
        cfg = make_perron_config(space, 2, 4, dt_p=5e-4)
        t = cfg.t_grid
        mu = 0.7
        k_idx = 3  # mode 4, lam = 16 > theta = 6.5
        lam = space.rates[0, k_idx]
        h = np.zeros((cfg.n_samples, 1, 8))
        h[:, 0, k_idx] = np.exp(mu * t)
        y = resolvent_apply(h, cfg)
        T = cfg.t_horizon
        exact = (np.exp(mu * t) - np.exp(-lam * (t + T) - mu * T)) / (lam + mu)
        assert np.max(np.abs(y[:, 0, k_idx] - exact)) < 1e-8

    def test_exponential_forcing_closed_form_slow_mode(self):
        # mode below theta: y(t) = -(e^{-lam t} - e^{mu t})/(lam + mu)
        space = dirichlet_space(np.pi, 8, 1)
        cfg = make_perron_config(space, 2, 4, dt_p=5e-4)
        t = cfg.t_grid
        mu = 0.5
        k_idx = 0  # mode 1, lam = 1 < theta
        lam = space.rates[0, k_idx]
        h = np.zeros((cfg.n_samples, 1, 8))
        h[:, 0, k_idx] = np.exp(mu * t)
        y = resolvent_apply(h, cfg)
        exact = -(np.exp(-lam * t) - np.exp(mu * t)) / (lam + mu)
        # the solution grows backward like e^{lam |t|}; error scales with it
        rel = np.abs(y[:, 0, k_idx] - exact) / (1.0 + np.abs(exact))
        assert np.max(rel) < 1e-8

    def test_matrix_matches_apply(self):
        space = dirichlet_space(np.pi, 4, 1)
        cfg = make_perron_config(space, 2, 4, dt_p=5e-3, tol=1e-6)
        rng = np.random.default_rng(0)
        series = rng.standard_normal(cfg.n_samples)
        for k_idx in (0, 3):
            h = np.zeros((cfg.n_samples, 1, 4))
            h[:, 0, k_idx] = series
            via_apply = resolvent_apply(h, cfg)[:, 0, k_idx]
            M = resolvent_matrix(space.rates[0, k_idx], cfg)
            assert np.max(np.abs(M @ series - via_apply)) < 1e-12

    def test_norm_bounds_hold(self):
        space = dirichlet_space(np.pi, 24, 1)
        for n in (3, 5, 10):
            cfg = make_perron_config(space, n, 8, dt_p=5e-3, tol=1e-6)
            rep = resolvent_norm_report(cfg)
            assert rep.ok, (n, rep)
            assert rep.norm_phi_phi <= 1.05 * rep.bound_phi_phi
            assert rep.norm_l2_phi <= 1.05 * rep.bound_l2_phi
            # the bound is sharp up to discretization: measured stays close
            assert rep.norm_phi_phi >= 0.5 * rep.bound_phi_phi

    def test_norm_report_resolution_insensitive(self):
        space = dirichlet_space(np.pi, 16, 1)
        cfg_a = make_perron_config(space, 5, 8, dt_p=1e-2, tol=1e-6)
        cfg_b = make_perron_config(space, 5, 8, dt_p=5e-3, tol=1e-6)
        ra = resolvent_norm_report(cfg_a)
        rb = resolvent_norm_report(cfg_b)
        assert ra.norm_phi_phi == pytest.approx(rb.norm_phi_phi, rel=2e-2)
        assert ra.norm_l2_phi == pytest.approx(rb.norm_l2_phi, rel=2e-2)


class TestBackwardFlow:
    def test_low_mode_values(self):
        space = dirichlet_space(np.pi, 8, 1)
        cfg = make_perron_config(space, 2, 4)
        v0 = np.zeros((1, 8))
        v0[0, 0] = 2.0
        w = linear_backward_flow(v0, cfg)
        t = cfg.t_grid
        assert np.allclose(w[:, 0, 0], 2.0 * np.exp(-t), rtol=1e-12)
        assert np.max(np.abs(w[:, 0, 1:])) == 0.0
        assert w[-1, 0, 0] == pytest.approx(2.0)

    def test_weighted_norm_of_single_sample(self):
        space = dirichlet_space(np.pi, 8, 1)
        cfg = make_perron_config(space, 2, 4)
        y = np.zeros((cfg.n_samples, 1, 8))
        y[-1, 0, 0] = 1.0  # t = 0 sample only
        # trapезoid end weight dt/2, weight e^{0} = 1, H1 weight 1 + lam_1 = 2
        expected = np.sqrt(2.0 * cfg.dt_p / 2.0)
        assert weighted_norm(y, cfg) == pytest.approx(expected, rel=1e-12)


class TestPerronFixedPoint:
    def test_zero_nonlinearity_one_iteration(self):
        space = dirichlet_space(np.pi, 16, 1)
        cfg = make_perron_config(space, 2, 8)
        v0 = np.zeros((1, 16))
        v0[0, :2] = [0.5, -0.3]
        res = perron_solve(v0, cfg, zero_op)
        assert res.iterations == 1
        assert np.max(np.abs(res.graph_value)) == 0.0
        assert np.allclose(res.value_at_zero, v0)

    def test_linear_graph_matches_dense_eigensolver(self):
        # 6-mode Galerkin with linear coupling: the fixed-point graph equals the
        # slow spectral subspace of the dense matrix -Lambda + eps B
        n_modes, n_cut, eps = 6, 2, 0.12
        space = dirichlet_space(np.pi, n_modes, 1)
        rng = np.random.default_rng(42)
        B = rng.standard_normal((n_modes, n_modes)) * 0.5
        cfg = make_perron_config(space, n_cut, 4, dt_p=2e-5, tol=1e-12)
        A = np.diag(-space.rates[0]) + eps * B
        eigvals, eigvecs = np.linalg.eig(A)
        order = np.argsort(-eigvals.real)
        slow = eigvecs[:, order[:n_cut]]
        x_low = slow[:n_cut]
        x_high = slow[n_cut:]
        graph_mat = np.real(x_high @ np.linalg.inv(x_low))

        op = linear_op(B, eps)
        for seed in range(3):
            p = np.zeros((1, n_modes))
            p[0, :n_cut] = np.random.default_rng(seed).uniform(-1, 1, n_cut)
            got = manifold_graph_eval(p[None][0], cfg, op)
            expected = graph_mat @ p[0, :n_cut]
            assert np.max(np.abs(got[0, n_cut:] - expected)) < 1e-8

    def test_contraction_budget_respected(self):
        n_modes, n_cut, eps = 6, 2, 0.1
        space = dirichlet_space(np.pi, n_modes, 1)
        rng = np.random.default_rng(1)
        B = rng.standard_normal((n_modes, n_modes)) * 0.4
        cfg = make_perron_config(space, n_cut, 4, dt_p=1e-3, tol=1e-9)
        # H1-metric Lipschitz constant of the coupling as an H1 -> H1 map
        w = np.sqrt(space.h1_weights[0])
        L2 = np.linalg.norm((w[:, None] * (eps * B)) / w[None, :], 2)
        rep = gap_check_rates(cfg.rate_low, cfg.rate_high, 0.0, L2)
        assert rep.passed
        p = np.zeros((1, n_modes))
        p[0, 0] = 1.0
        res = perron_solve(p, cfg, linear_op(B, eps), budget=rep.budget)
        assert res.max_factor <= rep.budget + 0.05
        assert res.iterations <= iteration_count_bound(rep.budget, cfg.tol)

    def test_divergence_detected(self):
        space = dirichlet_space(np.pi, 6, 1)
        cfg = make_perron_config(space, 2, 4, tol=1e-9)
        B = np.eye(6) * 40.0  # way beyond the gap
        p = np.zeros((1, 6))
        p[0, 0] = 1.0
        with pytest.raises(ContractionViolationError):
            perron_solve(p, cfg, linear_op(B, 1.0), max_iter=60)


def make_linear_case(eps=0.12, n_modes=6, n_cut=2, seed=42, dt_p=1e-3, tol=1e-9):
    space = dirichlet_space(np.pi, n_modes, 1)
    B = np.random.default_rng(seed).standard_normal((n_modes, n_modes)) * 0.5
    cfg = make_perron_config(space, n_cut, 4, dt_p=dt_p, tol=tol)
    A = np.diag(-space.rates[0]) + eps * B
    return space, B, cfg, A, linear_op(B, eps)


class TestGraphTabulation:
    def test_empty_base_rejected(self):
        space, B, cfg, A, op = make_linear_case()
        with pytest.raises(ValueError):
            build_manifold(np.zeros((0, 1, 6)), cfg, op)

    def test_affine_interpolation_is_exact_for_linear_graph(self):
        space, B, cfg, A, op = make_linear_case()
        grid = np.linspace(-1.0, 1.0, 5)
        base = []
        for c1 in grid:
            for c2 in grid:
                p = np.zeros((1, 6))
                p[0, :2] = [c1, c2]
                base.append(p)
        graph = build_manifold(np.stack(base), cfg, op)
        q = np.zeros((1, 6))
        q[0, :2] = [0.13, -0.41]
        got, extrap = graph.query(q)
        assert not extrap
        direct = manifold_graph_eval(q, cfg, op)
        assert np.max(np.abs(got - direct)) < 1e-7
        # off the hull: extrapolation is flagged
        q[0, :2] = [5.0, 5.0]
        _, extrap = graph.query(q)
        assert extrap

    def test_graph_contains_origin_and_lipschitz(self):
        space, B, cfg, A, op = make_linear_case()
        base = []
        for c in np.linspace(-1, 1, 9):
            p = np.zeros((1, 6))
            p[0, 0] = c
            p[0, 1] = 0.3 * c
            base.append(p)
        graph = build_manifold(np.stack(base), cfg, op)
        mid = len(graph) // 2
        assert np.max(np.abs(graph.images_high[mid])) < 1e-9  # M(0) = 0
        assert graph.lipschitz_on_base() < 1.0


class TestInvarianceAndTracking:
    def test_linear_invariance_residual(self):
        space, B, cfg, A, op = make_linear_case()
        grid = np.linspace(-1.0, 1.0, 5)
        base = []
        for c1 in grid:
            for c2 in grid:
                p = np.zeros((1, 6))
                p[0, :2] = [c1, c2]
                base.append(p)
        graph = build_manifold(np.stack(base), cfg, op)
        max_scaled, residuals, notice = invariance_residual(graph, op, dt=1e-3)
        assert max_scaled < 1e-6

    def test_zero_case_invariance_exact(self):
        space = dirichlet_space(np.pi, 8, 1)
        cfg = make_perron_config(space, 2, 4)
        base = []
        for c in np.linspace(-1, 1, 5):
            p = np.zeros((1, 8))
            p[0, 0] = c
            base.append(p)
        graph = build_manifold(np.stack(base), cfg, zero_op)
        max_scaled, residuals, _ = invariance_residual(graph, zero_op, dt=1e-2)
        assert max_scaled < 1e-13

    def test_tracking_pure_heat(self):
        # with zero nonlinearity d(t) = ||Q v(t)|| decays at least at rate
        # lam_{n+1}; the fitted slope must clear theta/2 easily
        from imlab.dynamics import evolve_coeffs

        space = dirichlet_space(np.pi, 8, 1)
        cfg = make_perron_config(space, 2, 4)
        base = []
        for c1 in np.linspace(-1, 1, 7):
            for c2 in np.linspace(-1, 1, 7):
                p = np.zeros((1, 8))
                p[0, :2] = [c1, c2]
                base.append(p)
        graph = build_manifold(np.stack(base), cfg, zero_op)
        v0 = np.zeros((1, 8))
        v0[0, :2] = [0.5, 0.2]
        v0[0, 2] = 0.4  # off-manifold content in the first high mode
        traj = evolve_coeffs(v0, space, zero_op, t_end=2.0, dt=1e-3,
                             record_every=10)
        rep = tracking_verify(traj.times, traj.coeffs, graph)
        assert not rep.degenerate
        lam3 = space.rates[0, 2]
        assert rep.fitted_rate >= 0.95 * lam3
        assert rep.ok

    def test_tracking_on_manifold_is_degenerate(self):
        space, B, cfg, A, op = make_linear_case()
        base = []
        for c1 in np.linspace(-1.2, 1.2, 7):
            for c2 in np.linspace(-1.2, 1.2, 7):
                p = np.zeros((1, 6))
                p[0, :2] = [c1, c2]
                base.append(p)
        graph = build_manifold(np.stack(base), cfg, op)
        start = perron_solve(base[30], cfg, op).value_at_zero
        from imlab.dynamics import evolve_coeffs

        traj = evolve_coeffs(start, space, op, t_end=1.0, dt=1e-3,
                             record_every=2)
        d = graph_distance_series(traj.coeffs, graph)
        assert np.max(d) < 5e-4  # stays at the numerical floor
        rep = tracking_verify(traj.times, traj.coeffs, graph)
        assert rep.degenerate or rep.fitted_rate > 0
