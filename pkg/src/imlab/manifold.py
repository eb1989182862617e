"""Spectral-gap parameter selection and the backward fixed-point manifold.

The graph M over the low modes is the value at t = 0 of the fixed point of

    z  |->  R( F(z + w) ),     t in [-T, 0],

where w is the backward linear flow from the low-mode datum, R solves
dy/dt + rate * y = h in the exponentially weighted space (forward from -T
for rates above the weight theta, backward from 0 for rates below), and F is
the globalized transformed nonlinearity.  The weighted norm is

    ||y||^2 = sum_j  w_j  e^{2 theta t_j} ||y(t_j)||_{H1}^2  dt,

so trajectories may grow like e^{-theta t} backward in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import lfilter

from .errors import ContractionViolationError, InfeasibleResolutionError
from .space import ProductSpace
from .spectral import gap_difference

EXP_ARG_CAP = 500.0  # exp argument clamp; far-back samples sit above the cut-off anyway


@dataclass(frozen=True)
class GapReport:
    """Outcome of the combined spectral gap conditions at one (n, K)."""

    n: int
    K: int
    L1: float
    L2: float
    rate_low: float
    rate_high: float
    gap: float
    cond1_lhs: float
    cond1: bool
    cond2: bool
    budget: float
    passed: bool

    def to_json_dict(self) -> dict:
        return {
            "n": self.n, "K": self.K, "L1": self.L1, "L2": self.L2,
            "gap": self.gap, "cond1_lhs": self.cond1_lhs,
            "cond1": self.cond1, "cond2": self.cond2,
            "budget": self.budget, "passed": self.passed,
        }


def gap_check_rates(rate_low: float, rate_high: float, L1: float, L2: float,
                    n: int = 0, K: int = 0) -> GapReport:
    """Gap conditions for straddled linear rates (shift-agnostic)."""
    gap = rate_high - rate_low
    cond1_lhs = gap / math.sqrt(rate_high)
    cond1 = cond1_lhs > 4.0 * L1
    cond2 = gap > 4.0 * L2
    budget = (2.0 * math.sqrt(rate_high) * L1 + 2.0 * L2) / gap
    return GapReport(n, K, L1, L2, rate_low, rate_high, gap, cond1_lhs,
                     cond1, cond2, budget, cond1 and cond2)


def spectral_gap_check(n: int, length: float, L1: float, L2: float,
                       K: int = 0) -> GapReport:
    """Gap conditions for the Dirichlet eigenvalues at cut index n."""
    lam = (np.pi / length) ** 2
    return gap_check_rates(lam * n**2, lam * (n + 1) ** 2, L1, L2, n=n, K=K)


@dataclass(frozen=True)
class PerronConfig:
    """Discretization of the weighted backward problem at one (n, K) cut."""

    space: ProductSpace
    n_cut: int
    K: int
    theta: float
    rate_low: float
    rate_high: float
    t_horizon: float
    dt_p: float
    tol: float
    low_mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.rate_low < self.theta < self.rate_high:
            raise ValueError("theta must strictly separate the straddled rates")
        tail = math.exp(-(self.rate_high - self.theta) * self.t_horizon)
        if tail > self.tol * 1.0000001:
            raise ValueError(
                f"horizon too short: exp(-(rate_high - theta) T) = {tail:.2e} > tol")

    @property
    def n_samples(self) -> int:
        return int(round(self.t_horizon / self.dt_p)) + 1

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(-self.t_horizon, 0.0, self.n_samples)

    @property
    def dim_low(self) -> int:
        return int(np.sum(self.low_mask))


def make_perron_config(space: ProductSpace, n_cut: int, K: int,
                       dt_p: float = 1e-3, tol: float = 1e-9) -> PerronConfig:
    """Config with theta at the midpoint of the n_cut-th distinct rate gap.

    The backward horizon is the shortest T with e^{-(rate_high - theta) T}
    below the fixed-point tolerance, rounded up to a multiple of dt_p.
    """
    low_mask, theta, lo, hi = space.cut(n_cut)
    t_needed = math.log(1.0 / tol) / (hi - theta)
    t_horizon = math.ceil(t_needed / dt_p) * dt_p
    return PerronConfig(space, n_cut, K, theta, lo, hi, t_horizon, dt_p,
                        tol, low_mask)


# -- the weighted-space resolvent -------------------------------------------


def _forward_coeffs(rate: float, dt: float) -> tuple[float, float, float]:
    """(E, c_prev, c_cur): y_{j+1} = E y_j + c_prev h_j + c_cur h_{j+1}.

    Exponential-trapezoid weights, exact for piecewise-linear h on the
    integral int e^{-rate (t-s)} h(s) ds.
    """
    z = rate * dt
    E = math.exp(-z)
    one_minus_E = -math.expm1(-z)
    c_prev = -E / rate + one_minus_E / (rate * rate * dt)
    c_cur = 1.0 / rate - one_minus_E / (rate * rate * dt)
    return E, c_prev, c_cur


def _backward_coeffs(rate: float, dt: float) -> tuple[float, float, float]:
    """(G, c_cur, c_next): y_j = G y_{j+1} - c_cur h_j - c_next h_{j+1}."""
    z = rate * dt
    G = math.exp(z)
    G_minus_one = math.expm1(z)
    c_cur = -1.0 / rate + G_minus_one / (rate * rate * dt)
    c_next = G / rate - G_minus_one / (rate * rate * dt)
    return G, c_cur, c_next


def resolvent_apply(h: np.ndarray, config: PerronConfig) -> np.ndarray:
    """Solve dy/dt + rate * y = h(t) on the grid, mode by mode.

    ``h`` has shape (..., S, m, n) with the time axis third from the end.
    Rates above theta integrate forward from -T (zero tail), rates below
    integrate backward from 0; the weighted-space solution is unique.
    """
    h = np.asarray(h, dtype=float)
    S = config.n_samples
    if h.shape[-3] != S:
        raise ValueError(f"expected {S} time samples, got {h.shape[-3]}")
    rates = config.space.rates
    theta = config.theta
    dt = config.dt_p
    out = np.empty_like(h)
    ht = np.moveaxis(h, -3, -1)          # (..., m, n, S)
    yt = np.moveaxis(out, -3, -1)
    m_tot, n_modes = rates.shape
    for c in range(m_tot):
        for k in range(n_modes):
            rate = rates[c, k]
            series = ht[..., c, k, :]
            if abs(rate - theta) < 1e-12:
                raise ValueError("a linear rate coincides with theta")
            if rate > theta:
                E, c_prev, c_cur = _forward_coeffs(rate, dt)
                x = np.zeros_like(series)
                x[..., 1:] = c_prev * series[..., :-1] + c_cur * series[..., 1:]
                yt[..., c, k, :] = lfilter([1.0], [1.0, -E], x, axis=-1)
            else:
                G, c_cur, c_next = _backward_coeffs(rate, dt)
                rev = series[..., ::-1]
                x = np.zeros_like(rev)
                x[..., 1:] = -(c_next * rev[..., :-1] + c_cur * rev[..., 1:])
                yr = lfilter([1.0], [1.0, -G], x, axis=-1)
                yt[..., c, k, :] = yr[..., ::-1]
    return out


def weighted_norm(y: np.ndarray, config: PerronConfig) -> np.ndarray:
    """Discrete L^2_w(H1) norm over the backward time grid."""
    y = np.asarray(y)
    h1w = config.space.h1_weights
    sq = np.sum(h1w * y * y, axis=(-2, -1))  # (..., S)
    w = np.full(config.n_samples, config.dt_p)
    w[0] *= 0.5
    w[-1] *= 0.5
    w = w * np.exp(2.0 * config.theta * config.t_grid)
    return np.sqrt(np.einsum("...s,s->...", sq, w))


def resolvent_matrix(rate: float, config: PerronConfig) -> np.ndarray:
    """Dense matrix of the per-mode resolvent on the time grid."""
    S = config.n_samples
    dt = config.dt_p
    out = np.zeros((S, S))
    eye = np.eye(S)
    if rate > config.theta:
        E, c_prev, c_cur = _forward_coeffs(rate, dt)
        for j in range(1, S):
            out[j] = E * out[j - 1] + c_prev * eye[j - 1] + c_cur * eye[j]
    else:
        G, c_cur, c_next = _backward_coeffs(rate, dt)
        for j in range(S - 2, -1, -1):
            out[j] = G * out[j + 1] - c_cur * eye[j] - c_next * eye[j + 1]
    return out  # rows index output times, columns forcing samples


@dataclass(frozen=True)
class ResolventNormReport:
    n_cut: int
    theta: float
    norm_phi_phi: float
    bound_phi_phi: float
    norm_l2_phi: float
    bound_l2_phi: float
    ok: bool

    def to_json_dict(self) -> dict:
        return {
            "n": self.n_cut, "theta": self.theta,
            "norm_phi_phi": self.norm_phi_phi,
            "bound_phi_phi": self.bound_phi_phi,
            "norm_l2_phi": self.norm_l2_phi,
            "bound_l2_phi": self.bound_l2_phi, "ok": self.ok,
        }


def resolvent_norm_report(config: PerronConfig, slack: float = 1.05) -> ResolventNormReport:
    """Measured discrete operator norms of R against the closed-form bounds.

    Phi -> Phi: per-mode H1 weights cancel, the norm is the max over modes of
    the weighted 2-norm of the per-mode time matrix.  L2 -> Phi: each mode
    additionally gains sqrt(1 + lambda).  Bounds: 2/gap and 2 sqrt(rate_high)
    / gap.
    """
    w = np.full(config.n_samples, config.dt_p)
    w[0] *= 0.5
    w[-1] *= 0.5
    w = w * np.exp(2.0 * config.theta * config.t_grid)
    sqrt_w = np.sqrt(w)
    rates = config.space.rates
    h1w = config.space.h1_weights
    norm_pp = 0.0
    norm_lp = 0.0
    seen = set()
    for c in range(rates.shape[0]):
        for k in range(rates.shape[1]):
            key = (round(rates[c, k], 9), round(h1w[c, k], 9))
            if key in seen:
                continue
            seen.add(key)
            M = resolvent_matrix(rates[c, k], config)
            B = sqrt_w[:, None] * M / sqrt_w[None, :]
            op = np.linalg.norm(B, 2)
            norm_pp = max(norm_pp, op)
            norm_lp = max(norm_lp, op * math.sqrt(h1w[c, k]))
    gap = config.rate_high - config.rate_low
    bound_pp = 2.0 / gap
    bound_lp = 2.0 * math.sqrt(config.rate_high) / gap
    ok = norm_pp <= slack * bound_pp and norm_lp <= slack * bound_lp
    return ResolventNormReport(config.n_cut, config.theta, norm_pp, bound_pp,
                               norm_lp, bound_lp, ok)


# -- the backward fixed point -------------------------------------------------


def linear_backward_flow(v0_low: np.ndarray, config: PerronConfig) -> np.ndarray:
    """w(t) = e^{-rate t} v0 on the low modes, (S, m, n).

    Exponents are clamped (far-back samples are astronomically large and sit
    far outside the cut-off ball; their nonlinear contribution is zero).
    """
    t = config.t_grid
    expo = -config.space.rates[None] * t[:, None, None]
    w = np.exp(np.minimum(expo, EXP_ARG_CAP)) * v0_low[None]
    return np.where(config.low_mask[None], w, 0.0)


@dataclass(frozen=True)
class PerronResult:
    config: PerronConfig
    v0_low: np.ndarray
    value_at_zero: np.ndarray          # full state at t = 0
    graph_value: np.ndarray            # its high-mode part
    increments: np.ndarray             # weighted-norm increments, (iters,)
    contraction_factors: np.ndarray
    iterations: int
    trajectory: np.ndarray | None = None

    @property
    def max_factor(self) -> float:
        if len(self.contraction_factors) == 0:
            return 0.0
        return float(np.max(self.contraction_factors))


def perron_solve_batch(v0_lows: np.ndarray, config: PerronConfig,
                       nonlinear: Callable[[np.ndarray], np.ndarray],
                       max_iter: int = 200, budget: float | None = None,
                       keep_trajectory: bool = False) -> list[PerronResult]:
    """Iterate z -> R(F(z + w)) for a batch of low-mode data (B, m, n).

    Stops when every batch entry's weighted increment drops below tol.
    If ``budget`` is given, a measured contraction factor above budget + 0.05
    raises ContractionViolationError (the gap check promised better).
    """
    v0_lows = np.asarray(v0_lows, dtype=float)
    B = v0_lows.shape[0]
    w = np.stack([linear_backward_flow(v0_lows[b], config) for b in range(B)])
    z = np.zeros_like(w)
    increments = []
    for it in range(max_iter):
        F = nonlinear(z + w)
        z_new = resolvent_apply(F, config)
        inc = weighted_norm(z_new - z, config)
        increments.append(inc)
        z = z_new
        if np.max(inc) <= config.tol:
            break
    else:
        raise ContractionViolationError(
            f"no convergence to {config.tol:g} in {max_iter} iterations")
    incs = np.stack(increments, axis=-1)  # (B, iters)
    results = []
    for b in range(B):
        seq = incs[b]
        usable = seq[:-1] > 10 * config.tol
        factors = (seq[1:][usable] / seq[:-1][usable]) if np.any(usable) else np.array([])
        if len(factors) and np.max(factors) >= 1.0:
            raise ContractionViolationError(
                f"measured contraction factor {np.max(factors):.3f} >= 1")
        if budget is not None and len(factors) and np.max(factors) > budget + 0.05:
            raise ContractionViolationError(
                f"measured factor {np.max(factors):.3f} exceeds budget "
                f"{budget:.3f} + 0.05")
        v = z[b] + w[b]
        value0 = v[-1]
        high = np.where(config.low_mask, 0.0, value0)
        results.append(PerronResult(
            config, v0_lows[b], value0, high, seq, factors, len(seq),
            trajectory=v if keep_trajectory else None))
    return results


def perron_solve(v0_low: np.ndarray, config: PerronConfig,
                 nonlinear: Callable[[np.ndarray], np.ndarray],
                 **kw) -> PerronResult:
    return perron_solve_batch(v0_low[None], config, nonlinear, **kw)[0]


def manifold_graph_eval(v0_low: np.ndarray, config: PerronConfig,
                        nonlinear: Callable[[np.ndarray], np.ndarray],
                        **kw) -> np.ndarray:
    """The graph value M(v0) = Q_n v(0) of the backward fixed point."""
    return perron_solve(v0_low, config, nonlinear, **kw).graph_value


# -- tabulated graph ----------------------------------------------------------


class ManifoldGraph:
    """Sampled graph over the low modes with a local-linear interpolator."""

    def __init__(self, config: PerronConfig, base_low: np.ndarray,
                 images_high: np.ndarray):
        if len(base_low) == 0:
            raise ValueError("empty base point set")
        self.config = config
        self.base_low = np.asarray(base_low, dtype=float)
        self.images_high = np.asarray(images_high, dtype=float)
        mask = config.low_mask
        scale = np.sqrt(config.space.h1_weights[mask])
        self._coords = self.base_low[:, mask] * scale  # (B, d_low)
        self._scale = scale
        if len(self._coords) > 1:
            d = self._coords[:, None, :] - self._coords[None, :, :]
            dist = np.sqrt(np.sum(d * d, axis=-1))
            np.fill_diagonal(dist, np.inf)
            self.spacing = float(np.max(np.min(dist, axis=1)))
        else:
            self.spacing = np.inf

    def __len__(self):
        return len(self.base_low)

    def query(self, p_low: np.ndarray) -> tuple[np.ndarray, bool]:
        """Interpolated high-mode value at p and an extrapolation flag.

        Local affine model fit to the 2 d_low + 1 nearest base points in the
        weighted low coordinates; exact for affine graphs.
        """
        mask = self.config.low_mask
        q = np.asarray(p_low)[mask] * self._scale
        diff = self._coords - q
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        order = np.argsort(dist)
        d_low = self._coords.shape[1]
        k = min(len(order), 2 * d_low + 1)
        sel = order[:k]
        extrapolating = bool(dist[order[0]] > 1.5 * self.spacing)
        X = np.concatenate([np.ones((k, 1)), diff[sel]], axis=1)
        Y = self.images_high[sel].reshape(k, -1)
        sol, *_ = np.linalg.lstsq(X, Y, rcond=None)
        out = sol[0].reshape(self.images_high.shape[1:])
        return np.where(mask, 0.0, out), extrapolating

    def lipschitz_on_base(self) -> float:
        """Max sampled graph slope in H1 over all base-point pairs."""
        space = self.config.space
        worst = 0.0
        B = len(self)
        for i in range(B):
            dp = space.h1_norm(self.base_low[i + 1:] - self.base_low[i])
            dm = space.h1_norm(self.images_high[i + 1:] - self.images_high[i])
            ok = dp > 1e-14
            if np.any(ok):
                worst = max(worst, float(np.max(dm[ok] / dp[ok])))
        return worst

    def to_json_dict(self) -> dict:
        return {
            "n": self.config.n_cut,
            "K": self.config.K,
            "theta": self.config.theta,
            "base_points": [list(map(float, b.ravel())) for b in self.base_low],
            "images": [list(map(float, v.ravel())) for v in self.images_high],
        }


def build_manifold(base_lows: np.ndarray, config: PerronConfig,
                   nonlinear: Callable[[np.ndarray], np.ndarray],
                   budget: float | None = None,
                   chunk_bytes: int = 100_000_000,
                   chunk_cap: int = 4) -> ManifoldGraph:
    """Map the backward solver over base points (chunked batch) and tabulate.

    Chunks are capped: in one lock-step batch every member iterates until
    the slowest converges, so very wide batches waste the fast ones.
    """
    base_lows = np.asarray(base_lows, dtype=float)
    if base_lows.ndim != 3 or len(base_lows) == 0:
        raise ValueError("need a (B, m, n) stack of low-mode base points")
    per_point = config.n_samples * base_lows.shape[1] * base_lows.shape[2] * 8
    chunk = max(1, min(int(chunk_bytes // max(per_point, 1)), chunk_cap))
    images = []
    for lo in range(0, len(base_lows), chunk):
        res = perron_solve_batch(base_lows[lo:lo + chunk], config, nonlinear,
                                 budget=budget)
        images.extend(r.graph_value for r in res)
    return ManifoldGraph(config, base_lows, np.stack(images))


# -- verification -------------------------------------------------------------


@dataclass(frozen=True)
class TrackingReport:
    fitted_rate: float
    theta: float
    floor: float
    d0: float
    n_fit_points: int
    degenerate: bool

    @property
    def ok(self) -> bool:
        return (not self.degenerate) and self.fitted_rate >= 0.5 * self.theta

    def to_json_dict(self) -> dict:
        return {"fitted_rate": self.fitted_rate, "theta": self.theta,
                "floor": self.floor, "d0": self.d0,
                "n_fit_points": self.n_fit_points,
                "degenerate": self.degenerate, "ok": self.ok}


def graph_distance_series(coeff_traj: np.ndarray, graph: ManifoldGraph) -> np.ndarray:
    """d(t) = ||Q v(t) - M(P v(t))||_{H1} along a recorded trajectory."""
    config = graph.config
    space = config.space
    out = np.empty(len(coeff_traj))
    for i, c in enumerate(coeff_traj):
        low = np.where(config.low_mask, c, 0.0)
        high = c - low
        m_val, _ = graph.query(low)
        out[i] = space.h1_norm(high - m_val)
    return out


def tracking_verify(times: np.ndarray, coeff_traj: np.ndarray,
                    graph: ManifoldGraph) -> TrackingReport:
    """Fit the decay rate of log d(t) on the window clear of the floor."""
    d = graph_distance_series(coeff_traj, graph)
    theta = graph.config.theta
    floor = max(float(np.min(d)), 1e-13)
    d0 = float(d[0])
    if d0 <= 10 * floor:
        return TrackingReport(np.nan, theta, floor, d0, 0, True)
    window = (d >= 10 * floor) & (d <= d0 / 10.0)
    if np.sum(window) < 5:
        return TrackingReport(np.nan, theta, floor, d0, int(np.sum(window)), True)
    slope = np.polyfit(times[window], np.log(d[window]), 1)[0]
    return TrackingReport(float(-slope), theta, floor, d0,
                          int(np.sum(window)), False)


def tracking_verify_direct(times: np.ndarray, coeff_traj: np.ndarray,
                           config: PerronConfig,
                           nonlinear: Callable[[np.ndarray], np.ndarray],
                           n_queries: int = 24, chunk: int = 8) -> TrackingReport:
    """Tracking fit with the graph evaluated by fresh backward solves.

    No interpolation floor: each queried M(P v(t)) is its own fixed point.
    Costlier per query than a tabulated graph, but exact to the solver
    tolerance; used where the low-mode dimension makes tabulation wasteful.
    """
    sel = np.unique(np.linspace(0, len(times) - 1, n_queries).astype(int))
    lows = np.where(config.low_mask[None], coeff_traj[sel], 0.0)
    highs = coeff_traj[sel] - lows
    d = np.empty(len(sel))
    for lo in range(0, len(sel), chunk):
        res = perron_solve_batch(lows[lo:lo + chunk], config, nonlinear)
        for j, r in enumerate(res):
            d[lo + j] = config.space.h1_norm(highs[lo + j] - r.graph_value)
    theta = config.theta
    floor = max(float(np.min(d)), 1e-13)
    d0 = float(d[0])
    if d0 <= 10 * floor:
        return TrackingReport(np.nan, theta, floor, d0, 0, True)
    window = (d >= 10 * floor) & (d <= d0 / 10.0)
    if np.sum(window) < 5:
        return TrackingReport(np.nan, theta, floor, d0, int(np.sum(window)), True)
    slope = np.polyfit(times[sel][window], np.log(d[window]), 1)[0]
    return TrackingReport(float(-slope), theta, floor, d0,
                          int(np.sum(window)), False)


def invariance_residual(graph: ManifoldGraph,
                        nonlinear: Callable[[np.ndarray], np.ndarray],
                        dt: float) -> tuple[float, np.ndarray, bool]:
    """One-step invariance defect at every base point.

    Advances v = p + M(p) by one exponential-Euler step of the globalized
    flow and measures ||Q v(dt) - M(P v(dt))||_{H1}.  Returns (max scaled
    residual, per-point residuals, extrapolation notice).
    """
    from .dynamics import step_exponential

    config = graph.config
    space = config.space
    states = graph.base_low + graph.images_high
    advanced = step_exponential(states, space.rates, dt, nonlinear)
    residuals = np.empty(len(states))
    noticed = False
    for i, c in enumerate(advanced):
        low = np.where(config.low_mask, c, 0.0)
        m_val, extrap = graph.query(low)
        noticed = noticed or extrap
        residuals[i] = space.h1_norm((c - low) - m_val)
    scale = 1.0 + space.h1_norm(graph.base_low)
    return float(np.max(residuals / scale)), residuals, noticed


def iteration_count_bound(budget: float, tol: float) -> int:
    """Ceil(log tol / log(budget + 0.05)) + 2, the promised iteration cap."""
    q = budget + 0.05
    if q >= 1.0:
        return 10**9
    return math.ceil(math.log(tol) / math.log(q)) + 2


def choose_parameters(measure: Callable[[int], tuple[float, float]],
                      space: ProductSpace, length: float,
                      candidates_K: tuple = (8, 16, 32, 64, 128, 256, 512),
                      n_max: int | None = None, safety: float = 2.0,
                      budget_max: float = 0.5, dt_p: float = 1e-3,
                      tol: float = 1e-9) -> tuple[int, int, PerronConfig, GapReport]:
    """Double K until the advection residual passes, then scan the cut index.

    ``measure(K)`` returns sampled (L1, L2); the safety factor widens both
    before the gap conditions.  K must first push 4 L1 under the conservative
    n-independent floor pi / (2 L); then the smallest n with the second
    condition and a contraction budget <= budget_max wins.
    """
    floor = np.pi / (2.0 * length)
    d = space.distinct_rates
    n_max = n_max if n_max is not None else min(len(d) - 1, space.n // 4)
    last_err = "no K candidate tested"
    for K in candidates_K:
        if K > space.n:
            break
        L1, L2 = measure(K)
        L1s, L2s = safety * L1, safety * L2
        if 4.0 * L1s >= floor:
            last_err = f"4*L1 = {4 * L1s:.3g} >= floor {floor:.3g} at K={K}"
            continue
        for n in range(1, n_max + 1):
            lo, hi = d[n - 1], d[n]
            rep = gap_check_rates(lo, hi, L1s, L2s, n=n, K=K)
            if rep.passed and rep.budget <= budget_max:
                cfg = make_perron_config(space, n, K, dt_p=dt_p, tol=tol)
                return K, n, cfg, rep
        last_err = f"no n <= {n_max} passes at K={K} (L2 safe = {L2s:.3g})"
    raise InfeasibleResolutionError(
        f"parameter search exhausted: {last_err}")
