"""Reductions of Neumann and gradient-nonlinearity problems to the core flow.

Three layers:

* the damped Neumann problem du/dt + f(u) du/dx + g(u) = d2u/dx2 - u is
  differentiated in x and embedded as the 2m-component mixed system in
  (u, w = du/dx) with Neumann/Dirichlet ends (``ExtendedRdaSystem``);
* only the Dirichlet component w is transformed, w = a(u) v, with the kernel
  projection taken in the Neumann eigenbasis
  (``TransformedExtendedSystem``);
* general f(u, du/dx): the shifted elliptic solve Upsilon and the smoothing
  replacements T1 ~ du/dx, T2 ~ dw/dx let the time-differentiated triple
  (u, du/dt, d2u/dt2) satisfy a nonlocal system whose only unknown-gradient
  term carries a small factor after one more change of variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffeo import _solve_from_projection, propagate
from .dynamics import Trajectory, evolve_coeffs, step_exponential
from .errors import SolverStagnationError
from .nonlin import GradientNonlinearity, Nonlinearity, bump_profile
from .space import Block, ProductSpace
from .spectral import (
    BasisKind,
    SpectralBasis,
    SpectralField,
    derivative_field,
    get_basis,
)
from .transform import CutoffSpec, propagate_inhomogeneous


@dataclass(frozen=True)
class ExtendedState:
    """(u, w) pair with optional second time derivative component.

    u lives in the Neumann basis for the x-differentiated routes and in the
    Dirichlet basis for the time-differentiated route; w and theta_t are
    always Dirichlet.
    """

    u: SpectralField
    w: SpectralField
    theta_t: SpectralField | None = None

    def constraint_defect(self) -> float:
        """||w - du/dx||_{L2} on the embedded set."""
        du = derivative_field(self.u)
        return float(self.w.basis.l2_norm(self.w.coeffs - du.coeffs))


def embed(u: SpectralField) -> ExtendedState:
    """(u, du/dx) with the derivative re-expanded in the Dirichlet basis."""
    if u.basis.kind is not BasisKind.NEUMANN_COSINE:
        raise ValueError("embedding starts from a Neumann-basis field")
    return ExtendedState(u, derivative_field(u))


def _pointwise(values):
    return np.moveaxis(values, -2, -1)


def _restack(states):
    return np.moveaxis(states, -1, -2)


def joint_bump(u_states: np.ndarray, w_states: np.ndarray, radius: float) -> np.ndarray:
    """Compact-support bump in the joint (u, w) variable, 1 near the origin."""
    z = (np.sum(u_states * u_states, axis=-1)
         + np.sum(w_states * w_states, axis=-1)) / radius**2
    return bump_profile(z, 0.25, 1.0)


class ExtendedRdaSystem:
    """The mixed 2m-component system obtained by differentiating in x.

        du/dt = d2u/dx2 - u - f(u) w - g(u)                (Neumann ends)
        dw/dt = d2w/dx2 - w - f'(u)[w]w - g'(u) w - f(u) dw/dx   (Dirichlet)

    The zero-order terms are multiplied by a joint bump in (u, w) so the
    nonlinearity is compactly supported in the full state; the advection
    factor f(u) keeps its own support in u, matching the original template.
    """

    def __init__(self, length: float, n_modes: int, nl: Nonlinearity,
                 joint_radius: float = 8.0):
        m = nl.m
        self.nl = nl
        self.m = m
        self.joint_radius = joint_radius
        self.neu = get_basis(BasisKind.NEUMANN_COSINE, length, n_modes)
        self.dir = get_basis(BasisKind.DIRICHLET_SINE, length, n_modes)
        self.space = ProductSpace(Block(self.neu, m, 1.0), Block(self.dir, m, 1.0))

    def nonlinear(self, C: np.ndarray) -> np.ndarray:
        C = np.asarray(C, dtype=float)
        m = self.m
        u_c, w_c = C[..., :m, :], C[..., m:, :]
        u_states = _pointwise(self.neu.synthesize(u_c))
        w_states = _pointwise(self.dir.synthesize(w_c))
        dw_nodes = self.dir.synthesize_derivative(w_c)
        chi = joint_bump(u_states, w_states, self.joint_radius)[..., None]
        f_u = self.nl.f(u_states)
        fw = np.einsum("...xij,...xj->...xi", f_u, w_states)
        g_u = self.nl.g(u_states)
        quad = np.einsum("...xijl,...xl,...xj->...xi",
                         self.nl.df(u_states), w_states, w_states)
        gw = np.einsum("...xij,...xj->...xi", self.nl.dg(u_states), w_states)
        adv = np.einsum("...xij,...jx->...ix", f_u, dw_nodes)
        u_rhs = -chi * (fw + g_u)
        w_rhs = -chi * (quad + gw)
        out_u = self.neu.analyze(_restack(u_rhs))
        out_w = self.dir.analyze(_restack(w_rhs) - adv)
        return np.concatenate([out_u, out_w], axis=-2)

    def rhs_field(self, state: ExtendedState) -> np.ndarray:
        C = np.concatenate([state.u.coeffs, state.w.coeffs], axis=0)
        return -self.space.rates * C + self.nonlinear(C)

    def evolve(self, state: ExtendedState, t_end: float, dt: float,
               record_every: int = 1) -> Trajectory:
        C = np.concatenate([state.u.coeffs, state.w.coeffs], axis=0)
        return evolve_coeffs(C, self.space, self.nonlinear, t_end, dt,
                             record_every)

    def constraint_drift(self, traj: Trajectory) -> np.ndarray:
        """||w(t) - du/dx(t)||_{L2} along a recorded trajectory."""
        m = self.m
        out = np.empty(len(traj))
        for i in range(len(traj)):
            u_c = traj.coeffs[i, :m]
            w_c = traj.coeffs[i, m:]
            _, du = self.neu.derivative_coeffs(u_c)
            out[i] = float(np.sqrt(np.sum((w_c - du) ** 2)))
        return out


class TransformedExtendedSystem:
    """The (u, v) flow after w = a(u) v with the Neumann-basis projection.

    The kernel solves da/dx = (1/2) f(P_K u) a with P_K truncating Neumann
    coefficients, so only the linear ODE route is ever needed (no Picard),
    and the advection factor of the v-equation collapses to
    a^{-1} [f(P_K u) - f(u)] a.
    """

    def __init__(self, length: float, n_modes: int, nl: Nonlinearity, K: int,
                 cutoff: CutoffSpec | None, joint_radius: float = 8.0):
        m = nl.m
        self.nl = nl
        self.m = m
        self.K = K
        self.cutoff = cutoff
        self.joint_radius = joint_radius
        self.neu = get_basis(BasisKind.NEUMANN_COSINE, length, n_modes)
        self.dir = get_basis(BasisKind.DIRICHLET_SINE, length, n_modes)
        self.space = ProductSpace(Block(self.neu, m, 1.0), Block(self.dir, m, 1.0))

    def _phi(self, C: np.ndarray) -> np.ndarray:
        if self.cutoff is None:
            return np.ones(C.shape[:-2])
        h1 = self.space.h1_norm(C)
        return self.cutoff.phi(h1 * h1)

    def kernel_of_u(self, u_c: np.ndarray):
        proj = u_c.copy()
        proj[..., self.K:] = 0.0
        values, derivs, coeff_fine = _solve_from_projection(proj, self.neu, self.nl)
        return proj, values, derivs, coeff_fine

    def nonlinear(self, C: np.ndarray) -> np.ndarray:
        C = np.asarray(C, dtype=float)
        squeeze = C.ndim == 2
        if squeeze:
            C = C[None]
        flat = C.reshape(-1, C.shape[-2], C.shape[-1])
        phi = self._phi(flat)
        out = np.zeros_like(flat)
        active = phi > 0.0
        if np.any(active):
            out[active] = phi[active, None, None] * self._assemble(flat[active])
        out = out.reshape(C.shape)
        return out[0] if squeeze else out

    def _assemble(self, C: np.ndarray) -> np.ndarray:
        m = self.m
        nl = self.nl
        u_c, v_c = C[..., :m, :], C[..., m:, :]
        proj, a_val, a_der, coeff_fine = self.kernel_of_u(u_c)
        a_inv = np.linalg.inv(a_val)
        coeff_nodes = coeff_fine[..., 0::2, :, :]

        u_nodes = self.neu.synthesize(u_c)
        v_nodes = self.dir.synthesize(v_c)
        dv_nodes = self.dir.synthesize_derivative(v_c)
        u_states = _pointwise(u_nodes)
        proj_states = _pointwise(self.neu.synthesize(proj))
        w_nodes = np.einsum("...xij,...jx->...ix", a_val, v_nodes)
        w_states = _pointwise(w_nodes)

        f_full = nl.f(u_states)
        f_proj = nl.f(proj_states)
        g_u = nl.g(u_states)
        chi = joint_bump(u_states, w_states, self.joint_radius)[..., None]

        # u-equation nonlinearity: -chi (f(u) w + g(u))
        fw = np.einsum("...xij,...xj->...xi", f_full, w_states)
        u_rhs = -chi * (fw + g_u)

        # du/dt of the u-component, projected, drives da/dt
        dtu = (-self.space.rates[:m] * u_c
               + self.neu.analyze(_restack(u_rhs)))
        dtu[..., self.K:] = 0.0
        dtu_fine = _pointwise(self.neu.synthesize(dtu, refine=2))
        proj_fine = _pointwise(self.neu.synthesize(proj, refine=2))
        b_fine = 0.5 * np.einsum("...xijl,...xl->...xij",
                                 nl.df(proj_fine), dtu_fine)
        dt_a = propagate_inhomogeneous(coeff_fine, b_fine, a_val,
                                       self.neu.grid.h)

        dproj_states = _pointwise(self.neu.synthesize_derivative(proj))
        d2a = coeff_nodes @ a_der + 0.5 * np.einsum(
            "...xijl,...xl->...xij", nl.df(proj_states), dproj_states) @ a_val

        # v-equation: advection residual + zero-order bracket - reaction
        adv = np.einsum("...xij,...jx->...ix",
                        a_inv @ (f_proj - f_full) @ a_val, dv_nodes)
        bracket = a_inv @ (d2a - dt_a - f_full @ a_der)
        core = np.einsum("...xij,...jx->...ix", bracket, v_nodes)
        quad = np.einsum("...xijl,...xl,...xj->...xi",
                         nl.df(u_states), w_states, w_states)
        gw = np.einsum("...xij,...xj->...xi", nl.dg(u_states), w_states)
        reac = np.einsum("...xij,...xj->...xi", a_inv, chi * (quad + gw))
        v_rhs = adv + core - _restack(reac)

        out_u = self.neu.analyze(_restack(u_rhs))
        out_v = self.dir.analyze(v_rhs)
        return np.concatenate([out_u, out_v], axis=-2)

    # -- maps between the (u, w) and (u, v) pictures -------------------------

    def from_extended(self, C_ext: np.ndarray) -> np.ndarray:
        """(u, w) -> (u, v = a(u)^{-1} w), batched."""
        C_ext = np.asarray(C_ext, dtype=float)
        m = self.m
        u_c, w_c = C_ext[..., :m, :], C_ext[..., m:, :]
        _, a_val, _, _ = self.kernel_of_u(u_c)
        w_nodes = self.dir.synthesize(w_c)
        v_nodes = np.einsum("...xij,...jx->...ix", np.linalg.inv(a_val), w_nodes)
        return np.concatenate([u_c, self.dir.analyze(v_nodes)], axis=-2)

    def to_extended(self, C: np.ndarray) -> np.ndarray:
        """(u, v) -> (u, w = a(u) v), batched."""
        C = np.asarray(C, dtype=float)
        m = self.m
        u_c, v_c = C[..., :m, :], C[..., m:, :]
        _, a_val, _, _ = self.kernel_of_u(u_c)
        v_nodes = self.dir.synthesize(v_c)
        w_nodes = np.einsum("...xij,...jx->...ix", a_val, v_nodes)
        return np.concatenate([u_c, self.dir.analyze(w_nodes)], axis=-2)

    def evolve(self, C0: np.ndarray, t_end: float, dt: float,
               record_every: int = 1) -> Trajectory:
        return evolve_coeffs(np.asarray(C0, dtype=float), self.space,
                             self.nonlinear, t_end, dt, record_every)


# -- the shifted elliptic solver and smoothing operators ----------------------


@dataclass(frozen=True)
class EllipticConfig:
    """Shift and tolerances for the nonlinear elliptic solve.

    The shift must dominate C_f + (C_f')^2 / 2 + 1/2 (sampled sups of the
    first partials); ``from_bounds`` applies a safety factor 2.
    """

    n_shift: float
    newton_tol: float = 1e-10
    max_iter: int = 20

    @classmethod
    def from_bounds(cls, c_f: float, c_fp: float, safety: float = 2.0,
                    **kw) -> "EllipticConfig":
        return cls(n_shift=safety * (c_f + 0.5 * c_fp**2 + 0.5), **kw)

    def check_against(self, c_f: float, c_fp: float) -> bool:
        return self.n_shift > c_f + 0.5 * c_fp**2 + 0.5


def _grad_terms(gnl: GradientNonlinearity, basis: SpectralBasis,
                u_c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u_states = _pointwise(basis.synthesize(u_c))
    p_states = _pointwise(basis.synthesize_derivative(u_c))
    return u_states, p_states, basis.analyze(
        _restack(gnl.func(u_states, p_states)))


def upsilon_solve(h: SpectralField, cfg: EllipticConfig,
                  gnl: GradientNonlinearity) -> SpectralField:
    """Solve d2u/dx2 - (1 + N) u - f(u, du/dx) = h with Dirichlet ends.

    Newton outer iteration; each linearized problem is solved by a fixed
    point on the diagonal shifted Laplacian with the f' terms treated as a
    perturbation (the shift makes that inner map contract).
    """
    basis = h.basis
    if basis.kind is not BasisKind.DIRICHLET_SINE:
        raise ValueError("the elliptic problem is posed with Dirichlet ends")
    diag = -(basis.eigenvalues + 1.0 + cfg.n_shift)
    u = h.coeffs / diag

    def residual(u_c):
        _, _, f_c = _grad_terms(gnl, basis, u_c)
        return diag * u_c - f_c - h.coeffs

    for it in range(cfg.max_iter):
        res = residual(u)
        res_norm = float(basis.l2_norm(res))
        if res_norm <= cfg.newton_tol:
            return SpectralField(basis, u)
        u_states = _pointwise(basis.synthesize(u))
        p_states = _pointwise(basis.synthesize_derivative(u))
        du = gnl.du(u_states, p_states)
        dp = gnl.dp(u_states, p_states)
        delta = linearized_elliptic_solve(basis, diag, du, dp, -res)
        u = u + delta
    res_norm = float(basis.l2_norm(residual(u)))
    if res_norm <= cfg.newton_tol:
        return SpectralField(basis, u)
    raise SolverStagnationError(
        f"Newton stalled at residual {res_norm:.3e}; raise the shift constant")


def linearized_elliptic_solve(basis: SpectralBasis, diag: np.ndarray,
                              du: np.ndarray, dp: np.ndarray,
                              rhs: np.ndarray, tol: float = 1e-13,
                              max_iter: int = 200) -> np.ndarray:
    """Solve diag(delta) - du delta - dp d(delta)/dx = rhs by inner iteration."""
    delta = rhs / diag
    for _ in range(max_iter):
        d_states = _pointwise(basis.synthesize(delta))
        dd_states = _pointwise(basis.synthesize_derivative(delta))
        pert = (np.einsum("...xij,...xj->...xi", du, d_states)
                + np.einsum("...xij,...xj->...xi", dp, dd_states))
        new = (rhs + basis.analyze(_restack(pert))) / diag
        if float(basis.l2_norm(new - delta)) <= tol:
            return new
        delta = new
    raise SolverStagnationError("inner linearized solve did not converge; raise the shift")


def smoothing_dx_u(u: SpectralField, w: SpectralField, cfg: EllipticConfig,
                   gnl: GradientNonlinearity) -> SpectralField:
    """T1(u, w) = d/dx Upsilon(w - N u): the smoothing stand-in for du/dx."""
    h = SpectralField(u.basis, w.coeffs - cfg.n_shift * u.coeffs)
    sol = upsilon_solve(h, cfg, gnl)
    return derivative_field(sol)


def smoothing_dx_w(u: SpectralField, w: SpectralField, theta_t: SpectralField,
                   cfg: EllipticConfig, gnl: GradientNonlinearity) -> SpectralField:
    """T2(u, w, theta_t) = d/dx [ Upsilon'(w - N u)(theta_t - N w) ].

    One linearized elliptic solve at the base point (no finite differencing
    of the solution operator); linear in theta_t by construction.
    """
    basis = u.basis
    h = SpectralField(basis, w.coeffs - cfg.n_shift * u.coeffs)
    base = upsilon_solve(h, cfg, gnl)
    diag = -(basis.eigenvalues + 1.0 + cfg.n_shift)
    u_states = _pointwise(basis.synthesize(base.coeffs))
    p_states = _pointwise(basis.synthesize_derivative(base.coeffs))
    du = gnl.du(u_states, p_states)
    dp = gnl.dp(u_states, p_states)
    rhs = theta_t.coeffs - cfg.n_shift * w.coeffs
    eta = linearized_elliptic_solve(basis, diag, du, dp, rhs)
    return derivative_field(SpectralField(basis, eta))


# -- assembled systems of the general reductions ------------------------------


def _apply_first(d_mat, vec_states):
    return np.einsum("...xij,...xj->...xi", d_mat, vec_states)


def _apply_second(d2_mat, a_states, b_states):
    return np.einsum("...xijk,...xj,...xk->...xi", d2_mat, a_states, b_states)


def derived_rhs(state: ExtendedState, gnl: GradientNonlinearity) -> np.ndarray:
    """Right-hand sides of the x-differentiated reductions.

    Without theta_t: the Neumann problem route (u Neumann, w Dirichlet),

        du/dt = d2u/dx2 - u - f(u, w)
        dw/dt = d2w/dx2 - w - f_u(u, w)[w] - f_p(u, w)[dw/dx].

    With theta_t: the Dirichlet route under f(0, .) = 0 (u Dirichlet,
    w Neumann, theta Dirichlet), which adds the twice-differentiated
    equation with the second partials of f.
    Returns stacked coefficient derivatives matching the state layout.
    """
    u, w, th = state.u, state.w, state.theta_t
    if th is None:
        if u.basis.kind is not BasisKind.NEUMANN_COSINE:
            raise ValueError("the two-component route expects Neumann u")
        u_states = _pointwise(u.basis.synthesize(u.coeffs))
        w_states = _pointwise(w.basis.synthesize(w.coeffs))
        dw_states = _pointwise(w.basis.synthesize_derivative(w.coeffs))
        f_val = gnl.func(u_states, w_states)
        fu_w = _apply_first(gnl.du(u_states, w_states), w_states)
        fp_dw = _apply_first(gnl.dp(u_states, w_states), dw_states)
        lam_u = u.basis.eigenvalues + 1.0
        lam_w = w.basis.eigenvalues + 1.0
        out_u = -lam_u * u.coeffs - u.basis.analyze(_restack(f_val))
        out_w = -lam_w * w.coeffs - w.basis.analyze(_restack(fu_w + fp_dw))
        return np.concatenate([out_u, out_w], axis=0)

    if not gnl.zero_at_u0:
        raise ValueError(
            "the x-differentiated Dirichlet route needs f(0, .) = 0; "
            "use the time-differentiated nonlocal route instead")
    u_states = _pointwise(u.basis.synthesize(u.coeffs))
    w_states = _pointwise(w.basis.synthesize(w.coeffs))
    th_states = _pointwise(th.basis.synthesize(th.coeffs))
    dth_states = _pointwise(th.basis.synthesize_derivative(th.coeffs))
    du = gnl.du(u_states, w_states)
    dp = gnl.dp(u_states, w_states)
    f_val = gnl.func(u_states, w_states)
    lam_u = u.basis.eigenvalues + 1.0
    lam_w = w.basis.eigenvalues + 1.0
    lam_t = th.basis.eigenvalues + 1.0
    out_u = -lam_u * u.coeffs - u.basis.analyze(_restack(f_val))
    out_w = -lam_w * w.coeffs - w.basis.analyze(
        _restack(_apply_first(du, w_states) + _apply_first(dp, th_states)))
    second = (_apply_second(gnl.d2uu(u_states, w_states), w_states, w_states)
              + 2.0 * _apply_second(gnl.d2up(u_states, w_states), w_states, th_states)
              + _apply_second(gnl.d2pp(u_states, w_states), th_states, th_states)
              + _apply_first(du, th_states))
    out_t = (-lam_t * th.coeffs - th.basis.analyze(_restack(second))
             - th.basis.analyze(_restack(_apply_first(dp, dth_states))))
    return np.concatenate([out_u, out_w, out_t], axis=0)


def nonlocal_rhs(state: ExtendedState, gnl: GradientNonlinearity,
                 cfg: EllipticConfig) -> np.ndarray:
    """The time-differentiated nonlocal system for (u, w=du/dt, theta=dw/dt).

    All three components are Dirichlet; du/dx and dw/dx are replaced by the
    smoothing operators, so the only derivative of an unknown left is
    f_p(u, T1) d(theta)/dx in the third equation.
    """
    u, w, th = state.u, state.w, state.theta_t
    if th is None:
        raise ValueError("the nonlocal route needs the full (u, w, theta_t) triple")
    basis = u.basis
    t1 = smoothing_dx_u(u, w, cfg, gnl)
    t2 = smoothing_dx_w(u, w, th, cfg, gnl)
    u_states = _pointwise(basis.synthesize(u.coeffs))
    w_states = _pointwise(basis.synthesize(w.coeffs))
    th_states = _pointwise(basis.synthesize(th.coeffs))
    dth_states = _pointwise(basis.synthesize_derivative(th.coeffs))
    t1_states = _pointwise(t1.basis.synthesize(t1.coeffs))
    t2_states = _pointwise(t2.basis.synthesize(t2.coeffs))
    du = gnl.du(u_states, t1_states)
    dp = gnl.dp(u_states, t1_states)
    lam = basis.eigenvalues + 1.0
    out_u = -lam * u.coeffs - basis.analyze(
        _restack(gnl.func(u_states, t1_states)))
    out_w = -lam * w.coeffs - basis.analyze(
        _restack(_apply_first(du, w_states) + _apply_first(dp, t2_states)))
    second = (_apply_second(gnl.d2uu(u_states, t1_states), w_states, w_states)
              + 2.0 * _apply_second(gnl.d2up(u_states, t1_states), w_states, t2_states)
              + _apply_second(gnl.d2pp(u_states, t1_states), t2_states, t2_states)
              + _apply_first(du, th_states)
              + _apply_first(dp, dth_states))
    out_t = -lam * th.coeffs - basis.analyze(_restack(second))
    return np.concatenate([out_u, out_w, out_t], axis=0)
