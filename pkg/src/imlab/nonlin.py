"""Nonlinearity containers, the compact-support cut-off, and built-in presets.

Conventions (pointwise-last): a state value array ``u`` has shape (..., m);

* matrix nonlinearity    f(u)  -> (..., m, m)
* its derivative        df(u)  -> (..., m, m, l) with d f_ij / d u_l
* vector nonlinearity    g(u)  -> (..., m)
* its derivative        dg(u)  -> (..., m, j) with d g_i / d u_j

Gradient-dependent nonlinearities f(u, p) (p standing for du/dx) are vector
valued with first and second partials in both slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def smoothstep(s: np.ndarray) -> np.ndarray:
    """C2 quintic ramp 6s^5 - 15s^4 + 10s^3, clipped to [0, 1]."""
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (6.0 * s**2 - 15.0 * s + 10.0)


def smoothstep_deriv(s: np.ndarray) -> np.ndarray:
    """Derivative 30 s^2 (1-s)^2 of :func:`smoothstep` inside [0, 1]."""
    inside = (s > 0.0) & (s < 1.0)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 30.0 * s**2 * (1.0 - s) ** 2, 0.0)


SMOOTHSTEP_DERIV_MAX = 15.0 / 8.0  # attained at s = 1/2


def bump_profile(z: np.ndarray, z_plateau: float, z_zero: float) -> np.ndarray:
    """1 on z <= z_plateau, 0 on z >= z_zero, quintic ramp in between."""
    return 1.0 - smoothstep((z - z_plateau) / (z_zero - z_plateau))


def bump_profile_deriv(z: np.ndarray, z_plateau: float, z_zero: float) -> np.ndarray:
    width = z_zero - z_plateau
    return -smoothstep_deriv((z - z_plateau) / width) / width


@dataclass(frozen=True)
class Nonlinearity:
    """The pair (f, g): matrix advection factor and vector reaction term."""

    m: int
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray], np.ndarray]
    support_radius: float = np.inf
    g_zero_at_origin: bool = True
    name: str = "custom"

    def validate(self, rng: np.random.Generator, n_samples: int = 100,
                 fd_tol: float = 1e-6) -> None:
        """Check compact support and derivative consistency by sampling.

        Derivatives are compared against central finite differences at
        ``n_samples`` random points inside the support box.
        """
        if np.isfinite(self.support_radius):
            radius = self.support_radius
            pts = rng.standard_normal((64, self.m))
            mag = np.linalg.norm(pts, axis=-1, keepdims=True)
            mag = np.where(mag > 0, mag, 1.0)
            pts = pts / mag * (radius * (1.0 + rng.random((64, 1))))
            if np.max(np.abs(self.f(pts))) > 0 or np.max(np.abs(self.g(pts))) > 0:
                raise ValueError("f or g does not vanish outside the support radius")
        scale = min(self.support_radius, 1.0)
        u = rng.uniform(-0.8 * scale, 0.8 * scale, size=(n_samples, self.m))
        eps = 1e-5 * scale
        for j in range(self.m):
            step = np.zeros(self.m)
            step[j] = eps
            fd_f = (self.f(u + step) - self.f(u - step)) / (2 * eps)
            fd_g = (self.g(u + step) - self.g(u - step)) / (2 * eps)
            ref_f = self.df(u)[..., j]
            ref_g = self.dg(u)[..., j]
            denom = 1.0 + np.max(np.abs(ref_f))
            if np.max(np.abs(fd_f - ref_f)) / denom > fd_tol:
                raise ValueError(f"df mismatch vs finite differences in slot {j}")
            denom = 1.0 + np.max(np.abs(ref_g))
            if np.max(np.abs(fd_g - ref_g)) / denom > fd_tol:
                raise ValueError(f"dg mismatch vs finite differences in slot {j}")

    def g_at_zero(self) -> np.ndarray:
        return self.g(np.zeros(self.m))


def zero_nonlinearity(m: int = 1) -> Nonlinearity:
    """f = 0, g = 0 (pure heat dynamics)."""
    def f(u):
        u = np.asarray(u)
        return np.zeros(u.shape[:-1] + (m, m))

    def df(u):
        u = np.asarray(u)
        return np.zeros(u.shape[:-1] + (m, m, m))

    def g(u):
        return np.zeros_like(np.asarray(u))

    def dg(u):
        u = np.asarray(u)
        return np.zeros(u.shape[:-1] + (m, m))

    return Nonlinearity(m, f, df, g, dg, support_radius=np.inf,
                        g_zero_at_origin=True, name="zero")


def make_cutoff_nonlinearity(f_raw: Callable, df_raw: Callable,
                             g_raw: Callable, dg_raw: Callable,
                             radius: float, m: int,
                             name: str = "cutoff") -> Nonlinearity:
    """Multiply (f_raw, g_raw) by the radial bump chi(|u|^2 / radius^2).

    chi is identically 1 for |u| <= radius/2 and 0 for |u| >= radius, with
    the quintic ramp in between, so the result is C2 with compact support
    and agrees with the raw pair on the inner plateau.
    """
    if radius <= 0:
        raise ValueError("cut-off radius must be positive")
    z_pl, z_zero = 0.25, 1.0
    r2 = radius * radius

    def chi_and_dchi(u):
        z = np.sum(u * u, axis=-1) / r2
        chi = bump_profile(z, z_pl, z_zero)
        dchi_du = bump_profile_deriv(z, z_pl, z_zero)[..., None] * (2.0 * u / r2)
        return chi, dchi_du

    def f(u):
        u = np.asarray(u, dtype=float)
        chi, _ = chi_and_dchi(u)
        return chi[..., None, None] * f_raw(u)

    def df(u):
        u = np.asarray(u, dtype=float)
        chi, dchi = chi_and_dchi(u)
        base = f_raw(u)
        return (chi[..., None, None, None] * df_raw(u)
                + base[..., :, :, None] * dchi[..., None, None, :])

    def g(u):
        u = np.asarray(u, dtype=float)
        chi, _ = chi_and_dchi(u)
        return chi[..., None] * g_raw(u)

    def dg(u):
        u = np.asarray(u, dtype=float)
        chi, dchi = chi_and_dchi(u)
        return (chi[..., None, None] * dg_raw(u)
                + g_raw(u)[..., :, None] * dchi[..., None, :])

    g0 = np.asarray(g_raw(np.zeros(m)))
    return Nonlinearity(m, f, df, g, dg, support_radius=radius,
                        g_zero_at_origin=bool(np.all(g0 == 0.0)), name=name)


def burgers_cutoff(radius: float = 1.5, f_amp: float = 0.08,
                   g_amp: float = 0.15) -> Nonlinearity:
    """Scalar Burgers-type advection with a bistable reaction, cut off.

    f_raw(u) = f_amp * u (as a 1x1 matrix), g_raw(u) = g_amp * u (1 - u^2).
    """
    def f_raw(u):
        return f_amp * u[..., None]

    def df_raw(u):
        u = np.asarray(u)
        out = np.zeros(u.shape[:-1] + (1, 1, 1))
        out[..., 0, 0, 0] = f_amp
        return out

    def g_raw(u):
        return g_amp * u * (1.0 - u**2)

    def dg_raw(u):
        return (g_amp * (1.0 - 3.0 * u**2))[..., None]

    return make_cutoff_nonlinearity(f_raw, df_raw, g_raw, dg_raw,
                                    radius, m=1, name="burgers-cutoff")


def coupled_2d(radius: float = 1.5, f_amp: float = 0.06,
               g_amp: float = 0.12) -> Nonlinearity:
    """Two-component system with rotational coupling, cut off.

    f_raw(u) = f_amp * [[u1, u2], [-u2, u1]], g_raw(u) = g_amp * (u2, -u1).
    """
    def f_raw(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + (2, 2))
        out[..., 0, 0] = u[..., 0]
        out[..., 0, 1] = u[..., 1]
        out[..., 1, 0] = -u[..., 1]
        out[..., 1, 1] = u[..., 0]
        return f_amp * out

    def df_raw(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = 1.0
        out[..., 0, 1, 1] = 1.0
        out[..., 1, 0, 1] = -1.0
        out[..., 1, 1, 0] = 1.0
        return f_amp * out

    def g_raw(u):
        u = np.asarray(u, dtype=float)
        return g_amp * np.stack([u[..., 1], -u[..., 0]], axis=-1)

    def dg_raw(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + (2, 2))
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -1.0
        return g_amp * out

    return make_cutoff_nonlinearity(f_raw, df_raw, g_raw, dg_raw,
                                    radius, m=2, name="coupled-2d-system")


def constant_matrix_nonlinearity(A: np.ndarray, radius: float = 4.0) -> Nonlinearity:
    """f_raw(u) = A (constant) cut off at |u| = radius; g = 0.

    Inside the plateau (|u| <= radius/2) the advection factor is exactly A,
    which makes the change-of-variables ODE solvable in closed form.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[0]

    def f_raw(u):
        u = np.asarray(u)
        return np.broadcast_to(A, u.shape[:-1] + (m, m)).copy()

    def df_raw(u):
        u = np.asarray(u)
        return np.zeros(u.shape[:-1] + (m, m, m))

    def g_raw(u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def dg_raw(u):
        u = np.asarray(u)
        return np.zeros(u.shape[:-1] + (m, m))

    return make_cutoff_nonlinearity(f_raw, df_raw, g_raw, dg_raw,
                                    radius, m=m, name="constant-matrix")


@dataclass(frozen=True)
class GradientNonlinearity:
    """Vector nonlinearity f(u, p) of the state and its x-derivative.

    First partials ``du``/``dp`` map to (..., m, m); second partials
    ``d2uu``/``d2up``/``d2pp`` map to (..., m, m, m) with
    d2up[..., i, j, k] = d^2 f_i / (d u_j d p_k).
    """

    m: int
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    du: Callable
    dp: Callable
    d2uu: Callable
    d2up: Callable
    d2pp: Callable
    support_radius: float = np.inf
    zero_at_u0: bool = False  # f(0, p) == 0 for all p
    name: str = "custom-grad"

    def bounds(self, n_samples: int = 4000,
               rng: np.random.Generator | None = None) -> tuple[float, float]:
        """Sampled sup |df/du| and sup |df/dp| over the support box."""
        rng = rng or np.random.default_rng(0)
        r = self.support_radius if np.isfinite(self.support_radius) else 2.0
        u = rng.uniform(-r, r, size=(n_samples, self.m))
        p = rng.uniform(-r, r, size=(n_samples, self.m))
        cu = np.max(np.sum(np.abs(self.du(u, p)), axis=-1))
        cp = np.max(np.sum(np.abs(self.dp(u, p)), axis=-1))
        return float(cu), float(cp)


def gradient_product(radius: float = 1.5, amp: float = 0.12) -> GradientNonlinearity:
    """Scalar f(u, p) = amp * u * p, cut off in the joint variable (u, p).

    Satisfies f(0, p) = 0, so both the space-differentiated and the
    time-differentiated reduction routes apply to it.
    """
    z_pl, z_zero = 0.25, 1.0
    r2 = radius * radius

    def parts(u, p):
        u = np.asarray(u, dtype=float)[..., 0]
        p = np.asarray(p, dtype=float)[..., 0]
        z = (u * u + p * p) / r2
        chi = bump_profile(z, z_pl, z_zero)
        dchi = bump_profile_deriv(z, z_pl, z_zero)
        return u, p, chi, dchi

    def func(u, p):
        u, p, chi, _ = parts(u, p)
        return (amp * u * p * chi)[..., None]

    def du(u, p):
        u, p, chi, dchi = parts(u, p)
        return (amp * (p * chi + u * p * dchi * 2.0 * u / r2))[..., None, None]

    def dp(u, p):
        u, p, chi, dchi = parts(u, p)
        return (amp * (u * chi + u * p * dchi * 2.0 * p / r2))[..., None, None]

    # second partials via finite differences of the analytic first partials;
    # the quintic profile is C2 so these are honest continuous functions
    eps = 1e-6 * radius

    def _fd(first, wrt_u):
        def second(u, p):
            u = np.asarray(u, dtype=float)
            p = np.asarray(p, dtype=float)
            if wrt_u:
                hi = first(u + eps, p)
                lo = first(u - eps, p)
            else:
                hi = first(u, p + eps)
                lo = first(u, p - eps)
            return ((hi - lo) / (2 * eps))[..., None]
        return second

    return GradientNonlinearity(
        m=1, func=func, du=du, dp=dp,
        d2uu=_fd(du, True), d2up=_fd(du, False), d2pp=_fd(dp, False),
        support_radius=radius, zero_at_u0=True, name="general-f(u,ux)")


def zero_gradient_nonlinearity(m: int = 1) -> GradientNonlinearity:
    def func(u, p):
        return np.zeros_like(np.asarray(u, dtype=float))

    def first(u, p):
        u = np.asarray(u)
        return np.zeros(u.shape[:-1] + (m, m))

    def second(u, p):
        u = np.asarray(u)
        return np.zeros(u.shape[:-1] + (m, m, m))

    return GradientNonlinearity(m, func, first, first, second, second, second,
                                support_radius=np.inf, zero_at_u0=True,
                                name="zero-grad")
