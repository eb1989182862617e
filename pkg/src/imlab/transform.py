"""Assembly of the transformed flow dv/dt - d2v/dx2 = phi * (F1 dv/dx + F2).

After the change of variables u = a(v) v the advection term collapses to the
small residual

    F1(v) = a^{-1} [ f(P_K(a v)) - f(a v) ] a,

and everything else lands in the zero-order term

    F2(v) = [ a^{-1} d2a/dx2 - a^{-1} da/dt - a^{-1} f(a v) da/dx ] v
            - a^{-1} g(a v),

where da/dt is defined through the x-ODE driven by P_K du/dt of the original
flow.  A radial cut-off phi(||v||_{H1}^2) globalizes the right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffeo import propagate, solve_kernel_batch, w1inf_distance
from .dynamics import Trajectory, evolve, evolve_coeffs, rda_nonlinear_coeffs
from .errors import IntegrationBlowupError
from .nonlin import (
    SMOOTHSTEP_DERIV_MAX,
    Nonlinearity,
    bump_profile,
)
from .space import ProductSpace, dirichlet_space
from .spectral import BasisKind, SpectralBasis, SpectralField, get_basis


@dataclass(frozen=True)
class CutoffSpec:
    """Radial H1 cut-off: 1 inside r1, 0 outside r, quintic ramp between."""

    r1: float
    r: float

    def __post_init__(self):
        if not 0 < self.r1 < self.r:
            raise ValueError("need 0 < r1 < r")

    def phi(self, h1_sq: np.ndarray) -> np.ndarray:
        return bump_profile(np.asarray(h1_sq, dtype=float),
                            self.r1**2, self.r**2)

    @property
    def lipschitz_in_z(self) -> float:
        """Closed-form Lipschitz constant of z -> phi(z)."""
        return SMOOTHSTEP_DERIV_MAX / (self.r**2 - self.r1**2)


def _pointwise(values: np.ndarray) -> np.ndarray:
    return np.moveaxis(values, -2, -1)


def _simpson_cumulative(lattice_vals: np.ndarray, h: float) -> np.ndarray:
    """Cumulative integral at nodes from half-step lattice samples."""
    nodes = lattice_vals[..., 0:-1:2]
    mids = lattice_vals[..., 1::2]
    ends = lattice_vals[..., 2::2]
    steps = (h / 6.0) * (nodes + 4.0 * mids + ends)
    zero = np.zeros(steps.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(steps, axis=-1)], axis=-1)


def propagate_inhomogeneous(coeff_fine: np.ndarray, b_fine: np.ndarray,
                            a_nodes: np.ndarray, h: float) -> np.ndarray:
    """Solve dY/dx = A(x) Y + B(x) a(x), Y(0) = 0, at all grid nodes.

    Scalar case: Y = a * int_0^x B (variation of constants); matrix case:
    fundamental solution of the block-triangular augmented system
    [[A, 0], [B, A]] of size 2m, whose lower-left block is Y.
    """
    m = coeff_fine.shape[-1]
    if m == 1:
        integral = _simpson_cumulative(b_fine[..., 0, 0], h)
        return a_nodes * integral[..., None, None]
    batch = coeff_fine.shape[:-3]
    n_lat = coeff_fine.shape[-3]
    aug = np.zeros(batch + (n_lat, 2 * m, 2 * m))
    aug[..., :m, :m] = coeff_fine
    aug[..., m:, m:] = coeff_fine
    aug[..., m:, :m] = b_fine
    z = propagate(aug, h)
    return z[..., m:, :m]


class TransformContext:
    """Everything the transformed right-hand side needs, batched.

    Built once per coefficient stack V (..., m, n): kernel a(v), its inverse
    and derivatives, the grid product u = a v, and the truncated coefficient
    field.  All arrays carry the batch dims of V in front.
    """

    def __init__(self, V: np.ndarray, basis: SpectralBasis, K: int,
                 nl: Nonlinearity, tol: float = 1e-10, max_iter: int = 100,
                 values_init: np.ndarray | None = None,
                 derivs_init: np.ndarray | None = None):
        self.basis = basis
        self.K = K
        self.nl = nl
        V = np.asarray(V, dtype=float)
        self.V = V
        (self.a_values, self.a_derivs, self.coeff_fine, self.proj,
         self.residuals) = solve_kernel_batch(V, basis, K, nl, tol, max_iter,
                                              values_init=values_init,
                                              derivs_init=derivs_init)
        self.a_inv = np.linalg.inv(self.a_values)
        self.v_nodes = basis.synthesize(V)
        self.dv_nodes = basis.synthesize_derivative(V)
        self.u_vals = np.einsum("...xij,...jx->...ix", self.a_values, self.v_nodes)
        self.u_states = _pointwise(self.u_vals)
        self.proj_states = _pointwise(basis.synthesize(self.proj))
        self.coeff_nodes = self.coeff_fine[..., 0::2, :, :]

    # -- operators -----------------------------------------------------------

    def advection_residual(self) -> np.ndarray:
        """F1 on the grid nodes: (..., X, m, m)."""
        f_proj = self.nl.f(self.proj_states)
        f_full = self.nl.f(self.u_states)
        return self.a_inv @ (f_proj - f_full) @ self.a_values

    def d2x_a(self) -> np.ndarray:
        """Second x-derivative of the kernel from the differentiated ODE."""
        dproj_states = _pointwise(self.basis.synthesize_derivative(self.proj))
        dfp = self.nl.df(self.proj_states)
        drive = 0.5 * np.einsum("...xijl,...xl->...xij", dfp, dproj_states)
        return self.coeff_nodes @ self.a_derivs + drive @ self.a_values

    def dt_u_low_coeffs(self) -> np.ndarray:
        """P_K du/dt of the original flow at u = a v (coefficients)."""
        u_coeffs = self.basis.analyze(self.u_vals)
        space = dirichlet_space(self.basis.length, self.basis.n, u_coeffs.shape[-2])
        dtu = -space.rates * u_coeffs + rda_nonlinear_coeffs(u_coeffs, space, self.nl)
        dtu[..., self.K:] = 0.0
        return dtu

    def dt_a(self) -> np.ndarray:
        """Time derivative of the kernel: solves the x-ODE with zero start."""
        dtu = self.dt_u_low_coeffs()
        dtu_fine = _pointwise(self.basis.synthesize(dtu, refine=2))
        proj_fine = _pointwise(self.basis.synthesize(self.proj, refine=2))
        b_fine = 0.5 * np.einsum("...xijl,...xl->...xij",
                                 self.nl.df(proj_fine), dtu_fine)
        return propagate_inhomogeneous(self.coeff_fine, b_fine,
                                       self.a_values, self.basis.grid.h)

    def zero_order_term(self) -> np.ndarray:
        """F2 grid values (..., m, X)."""
        bracket = (self.d2x_a() - self.dt_a()
                   - self.nl.f(self.u_states) @ self.a_derivs)
        core = np.einsum("...xij,...jx->...ix",
                         self.a_inv @ bracket, self.v_nodes)
        reac = np.einsum("...xij,...xj->...ix", self.a_inv,
                         self.nl.g(self.u_states))
        return core - reac

    def full_nonlinearity_values(self) -> np.ndarray:
        """(F1 dv/dx + F2) on the grid, before the cut-off."""
        adv = np.einsum("...xij,...jx->...ix",
                        self.advection_residual(), self.dv_nodes)
        return adv + self.zero_order_term()


def advection_residual(v: SpectralField, K: int, nl: Nonlinearity) -> np.ndarray:
    """F1(v) as an (X, m, m) grid matrix field."""
    ctx = TransformContext(v.coeffs[None], v.basis, K, nl)
    return ctx.advection_residual()[0]


def coeff_time_derivative(v: SpectralField, K: int, nl: Nonlinearity) -> np.ndarray:
    """da/dt at the grid nodes, shape (X, m, m); vanishes at x = 0."""
    ctx = TransformContext(v.coeffs[None], v.basis, K, nl)
    return ctx.dt_a()[0]


def zero_order_term(v: SpectralField, K: int, nl: Nonlinearity) -> SpectralField:
    """F2(v) analyzed back to coefficients."""
    ctx = TransformContext(v.coeffs[None], v.basis, K, nl)
    vals = ctx.zero_order_term()
    return SpectralField(v.basis, v.basis.analyze(vals)[0])


class TransformedSystem:
    """The globalized transformed flow as reusable batched callables."""

    def __init__(self, basis: SpectralBasis, m: int, K: int, nl: Nonlinearity,
                 cutoff: CutoffSpec | None, picard_tol: float = 1e-10,
                 warm_start: bool = True):
        self.basis = basis
        self.m = m
        self.K = K
        self.nl = nl
        self.cutoff = cutoff
        self.space = dirichlet_space(basis.length, basis.n, m)
        self.picard_tol = picard_tol
        # warm start reuses the previous call's kernels as the Picard seed;
        # the converged values agree within picard_tol, call history only
        # shifts round-off
        self.warm_start = warm_start
        self._seed_values = None
        self._seed_derivs = None

    def _phi(self, V: np.ndarray) -> np.ndarray:
        if self.cutoff is None:
            return np.ones(V.shape[:-2])
        h1 = self.space.h1_norm(V)
        return self.cutoff.phi(h1 * h1)

    def nonlinear(self, V: np.ndarray) -> np.ndarray:
        """phi * (F1 dv/dx + F2) as coefficients; batched over leading dims.

        Entries with phi = 0 are skipped entirely (pure heat there), which
        also keeps the kernel solve inside its working ball.
        """
        V = np.asarray(V, dtype=float)
        squeeze = V.ndim == 2
        if squeeze:
            V = V[None]
        flat = V.reshape(-1, V.shape[-2], V.shape[-1])
        phi = self._phi(flat)
        out = np.zeros_like(flat)
        active = phi > 0.0
        if np.any(active):
            ctx = TransformContext(flat[active], self.basis, self.K, self.nl,
                                   tol=self.picard_tol,
                                   values_init=self._take_seed(active),
                                   derivs_init=self._take_seed(active, True))
            self._store_seed(active, ctx.a_values, ctx.a_derivs, flat.shape[0])
            vals = ctx.full_nonlinearity_values()
            out[active] = phi[active, None, None] * self.basis.analyze(vals)
        out = out.reshape(V.shape)
        return out[0] if squeeze else out

    def _take_seed(self, active, derivs: bool = False):
        store = self._seed_derivs if derivs else self._seed_values
        if not self.warm_start or store is None or len(active) != len(store):
            return None
        return store[active]

    def _store_seed(self, active, values, derivs, size):
        if not self.warm_start:
            return
        if self._seed_values is None or len(self._seed_values) != size:
            x = values.shape[-3]
            self._seed_values = np.broadcast_to(
                np.eye(self.m), (size, x, self.m, self.m)).copy()
            self._seed_derivs = np.zeros_like(self._seed_values)
        self._seed_values[active] = values
        self._seed_derivs[active] = derivs

    def rhs(self, V: np.ndarray) -> np.ndarray:
        return -self.space.rates * V + self.nonlinear(V)

    def evolve(self, v0: np.ndarray, t_end: float, dt: float,
               record_every: int = 1) -> Trajectory:
        return evolve_coeffs(np.asarray(v0, dtype=float), self.space,
                             self.nonlinear, t_end, dt, record_every)

    # -- the two Lipschitz-measured operators --------------------------------

    def calF1_values(self, V: np.ndarray) -> np.ndarray:
        """phi * F1 dv/dx on the grid (the H1 -> L2 factor)."""
        V = np.asarray(V, dtype=float)
        phi = self._phi(V)
        out_shape = V.shape[:-1] + (self.basis.grid.n_interior + 2,)
        out = np.zeros(out_shape)
        active = phi > 0.0
        if np.any(active):
            ctx = TransformContext(V[active], self.basis, self.K, self.nl,
                                   tol=self.picard_tol)
            adv = np.einsum("...xij,...jx->...ix",
                            ctx.advection_residual(), ctx.dv_nodes)
            out[active] = phi[active, None, None] * adv
        return out

    def calF2_coeffs(self, V: np.ndarray) -> np.ndarray:
        """phi * F2 as coefficients (the H1 -> H1 factor)."""
        V = np.asarray(V, dtype=float)
        phi = self._phi(V)
        out = np.zeros_like(V)
        active = phi > 0.0
        if np.any(active):
            ctx = TransformContext(V[active], self.basis, self.K, self.nl,
                                   tol=self.picard_tol)
            vals = ctx.zero_order_term()
            out[active] = phi[active, None, None] * self.basis.analyze(vals)
        return out


def transformed_rhs(v: SpectralField, K: int, nl: Nonlinearity,
                    cutoff: CutoffSpec | None) -> SpectralField:
    """d2v/dx2 + phi(||v||_H1^2) [F1(v) dv/dx + F2(v)] as a field."""
    sys = TransformedSystem(v.basis, v.m, K, nl, cutoff)
    return v.replace(sys.rhs(v.coeffs))


@dataclass(frozen=True)
class LipschitzReport:
    """Sampled Lipschitz constant of one operator at one projection cut."""

    K: int
    L: float
    n_samples: int
    argmax_pair: int

    def to_json_dict(self) -> dict:
        return {"K": self.K, "L": self.L, "samples": self.n_samples}


def sample_pairs(basis: SpectralBasis, m: int, rng: np.random.Generator,
                 n_pairs: int, radius: float, decay: float = 2.0,
                 straddle: bool = True) -> np.ndarray:
    """(B, 2, m, n) sample pairs: random pairs plus small perturbation pairs.

    Norms are spread over [0, 1.2 radius] so some pairs straddle the cut-off
    ramp when ``straddle`` is set.
    """
    from .spectral import random_field

    top = 1.2 * radius if straddle else radius
    pairs = np.empty((n_pairs, 2, m, basis.n))
    n_random = n_pairs // 2
    for i in range(n_random):
        for j in range(2):
            norm = rng.uniform(0.05, top)
            pairs[i, j] = random_field(basis, m, rng, decay=decay,
                                       h1_norm=norm).coeffs
    eps_cycle = (1e-2, 1e-4)
    for i in range(n_random, n_pairs):
        norm = rng.uniform(0.05, top)
        base = random_field(basis, m, rng, decay=decay, h1_norm=norm).coeffs
        direction = random_field(basis, m, rng, decay=decay, h1_norm=1.0).coeffs
        eps = eps_cycle[i % len(eps_cycle)]
        pairs[i, 0] = base
        pairs[i, 1] = base + eps * direction
    return pairs


def measure_lipschitz(op: Callable[[np.ndarray], np.ndarray],
                      pairs: np.ndarray,
                      domain_norm: Callable[[np.ndarray], np.ndarray],
                      range_norm: Callable[[np.ndarray], np.ndarray],
                      K: int = 0, chunk: int = 256) -> LipschitzReport:
    """Max sampled ratio range_norm(op(v1)-op(v2)) / domain_norm(v1-v2)."""
    n_pairs = pairs.shape[0]
    best = 0.0
    best_i = -1
    for lo in range(0, n_pairs, chunk):
        sl = pairs[lo:lo + chunk]
        flat = sl.reshape(-1, *sl.shape[2:])
        res = op(flat)
        out = res.reshape(sl.shape[0], 2, *res.shape[1:])
        num = range_norm(out[:, 0] - out[:, 1])
        den = domain_norm(sl[:, 0] - sl[:, 1])
        ok = den > 1e-14
        ratios = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
        i = int(np.argmax(ratios))
        if ratios[i] > best:
            best = float(ratios[i])
            best_i = lo + i
    return LipschitzReport(K, best, n_pairs, best_i)


def measure_system_lipschitz(sys: TransformedSystem, rng: np.random.Generator,
                             n_pairs: int = 500, decay: float = 2.0,
                             chunk: int = 256) -> tuple[LipschitzReport, LipschitzReport]:
    """Sampled L1 (H1 -> L2 of phi F1 dv/dx) and L2 (H1 -> H1 of phi F2)."""
    radius = sys.cutoff.r if sys.cutoff is not None else 1.0
    pairs = sample_pairs(sys.basis, sys.m, rng, n_pairs, radius, decay=decay)
    rep1 = measure_lipschitz(sys.calF1_values, pairs,
                             sys.space.h1_norm, sys.basis.grid_l2,
                             K=sys.K, chunk=chunk)
    rep2 = measure_lipschitz(sys.calF2_coeffs, pairs,
                             sys.space.h1_norm, sys.space.h1_norm,
                             K=sys.K, chunk=chunk)
    return rep1, rep2


def equivalence_check(u0: SpectralField, K: int, nl: Nonlinearity,
                      cutoff: CutoffSpec, t_end: float, dt: float,
                      record_every: int = 10) -> float:
    """Max over t of ||V(u(t)) - v(t)||_{H1} for the two integrated flows."""
    from .diffeo import _solve_from_projection, _truncate

    basis = u0.basis
    m = u0.m
    traj_u = evolve(u0, t_end, dt, nl, record_every=record_every)
    # batched inverse map over all recorded states
    proj = _truncate(traj_u.coeffs, K)
    values, _, _ = _solve_from_projection(proj, basis, nl)
    inv = np.linalg.inv(values)
    u_nodes = basis.synthesize(traj_u.coeffs)
    v_ref = basis.analyze(np.einsum("txij,tjx->tix", inv, u_nodes))

    sys = TransformedSystem(basis, m, K, nl, cutoff)
    traj_v = sys.evolve(v_ref[0], t_end, dt, record_every=record_every)
    if len(traj_v) != len(traj_u):
        raise IntegrationBlowupError("flows recorded different lengths")
    devs = basis.h1_norm(v_ref - traj_v.coeffs)
    return float(np.max(devs))


def calibrate_cutoff(nl: Nonlinearity, basis: SpectralBasis, m: int, K: int,
                     trajectories: list[Trajectory],
                     t_burn: float = 5.0) -> CutoffSpec:
    """r1 = 1.1 x the largest ||V(u)||_{H1} seen on late trajectory samples."""
    from .diffeo import _solve_from_projection, _truncate

    worst = 0.0
    for traj in trajectories:
        sel = traj.times >= t_burn
        coeffs = traj.coeffs[sel]
        proj = _truncate(coeffs, K)
        values, _, _ = _solve_from_projection(proj, basis, nl)
        inv = np.linalg.inv(values)
        u_nodes = basis.synthesize(coeffs)
        v = basis.analyze(np.einsum("txij,tjx->tix", inv, u_nodes))
        worst = max(worst, float(np.max(basis.h1_norm(v))))
    r1 = 1.1 * worst
    return CutoffSpec(r1=r1, r=2.0 * r1)
