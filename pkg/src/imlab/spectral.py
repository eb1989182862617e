"""Eigenbasis arithmetic for -d2/dx2 on (0, L) with Dirichlet or Neumann ends.

All heavy operations work on plain ndarrays so that batches of fields can be
processed in one call:

* coefficient arrays have shape ``(..., m, n_modes)``,
* grid value arrays have shape ``(..., m, n_points)`` on the full grid
  (both endpoints included),
* transforms run along the last axis via fast DST-I / DCT-I.

The collocation grid has ``2*n_modes + 1`` interior points, which makes the
trapezoid rule exact for products of the first ``2*n_modes`` eigenfunctions,
i.e. quadratic products of resolved fields do not alias.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as _fft


class BasisKind(enum.Enum):
    """Eigenbasis selector for -d2/dx2 on (0, L)."""

    DIRICHLET_SINE = "dirichlet"
    NEUMANN_COSINE = "neumann"


@dataclass(frozen=True)
class Grid:
    """Uniform collocation grid on [0, L] with trapezoid quadrature.

    ``x`` are the interior collocation abscissae (open interval), ``x_full``
    includes both endpoints; ``weights`` are trapezoid weights for ``x_full``.
    """

    length: float
    n_interior: int
    h: float
    x: np.ndarray
    x_full: np.ndarray
    weights: np.ndarray

    @classmethod
    def make(cls, length: float, n_interior: int) -> "Grid":
        h = length / (n_interior + 1)
        x_full = np.linspace(0.0, length, n_interior + 2)
        w = np.full(n_interior + 2, h)
        w[0] = w[-1] = h / 2
        return cls(length, n_interior, h, x_full[1:-1], x_full, w)

    def fine_points(self, refine: int) -> np.ndarray:
        """All points at spacing h/refine, endpoints included."""
        n = refine * (self.n_interior + 1)
        return np.linspace(0.0, self.length, n + 1)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid quadrature of values sampled on ``x_full`` (last axis)."""
        return values @ self.weights


def eigenvalue(k: int, length: float, basis: BasisKind) -> float:
    """Eigenvalue (pi/L)^2 k^2 of mode k; k >= 1 Dirichlet, k >= 0 Neumann."""
    if length <= 0:
        raise ValueError(f"domain length must be positive, got {length}")
    kmin = 1 if basis is BasisKind.DIRICHLET_SINE else 0
    if k < kmin:
        raise ValueError(f"mode index {k} invalid for {basis.value} basis")
    return (np.pi / length) ** 2 * k**2


def gap_ratio(n: int, length: float) -> float:
    """(lam_{n+1} - lam_n) / (lam_n^{1/2} + lam_{n+1}^{1/2}); equals pi/L.

    The numerator uses the exact integer identity (n+1)^2 - n^2 = 2n+1;
    subtracting the rounded eigenvalues instead would lose ~n^2 eps of
    relative accuracy.
    """
    num = gap_difference(n, length)
    den = np.sqrt(eigenvalue(n, length, BasisKind.DIRICHLET_SINE)) + np.sqrt(
        eigenvalue(n + 1, length, BasisKind.DIRICHLET_SINE))
    return num / den


def gap_difference(n: int, length: float) -> float:
    """Consecutive eigenvalue gap lam_{n+1} - lam_n = (pi/L)^2 (2n+1)."""
    if n < 1:
        raise ValueError("cut index must be >= 1")
    return (np.pi / length) ** 2 * ((n + 1) ** 2 - n**2)


class SpectralBasis:
    """A concrete eigenbasis: kind, domain length and retained mode count.

    Dirichlet keeps modes 1..n, Neumann keeps modes 0..n-1; either way a
    field stores exactly ``n`` coefficients per component and the stored
    index i maps to mode ``i + offset`` with offset 1 (Dirichlet) or 0
    (Neumann).  Instances are interned: use :func:`get_basis`.
    """

    def __init__(self, kind: BasisKind, length: float, n_modes: int):
        if n_modes < 1:
            raise ValueError("need at least one mode")
        if length <= 0:
            raise ValueError("domain length must be positive")
        self.kind = kind
        self.length = float(length)
        self.n = int(n_modes)
        self.grid = Grid.make(self.length, 2 * self.n + 1)
        self.mode_offset = 1 if kind is BasisKind.DIRICHLET_SINE else 0
        modes = np.arange(self.n) + self.mode_offset
        self.modes = modes
        self.eigenvalues = (np.pi / self.length) ** 2 * modes.astype(float) ** 2
        self.h1_weights = 1.0 + self.eigenvalues

    def __repr__(self):
        return f"SpectralBasis({self.kind.value}, L={self.length}, n={self.n})"

    # -- transforms -------------------------------------------------------

    def _n_intervals(self, refine: int) -> int:
        return refine * (self.grid.n_interior + 1)

    def synthesize(self, coeffs: np.ndarray, refine: int = 1) -> np.ndarray:
        """Grid values on the (possibly refined) full grid, endpoints included.

        coeffs: (..., n) -> values: (..., refine*(2n+2) + 1)
        """
        coeffs = np.asarray(coeffs, dtype=float)
        nseg = self._n_intervals(refine)
        if self.kind is BasisKind.DIRICHLET_SINE:
            pad = np.zeros(coeffs.shape[:-1] + (nseg - 1,))
            pad[..., : self.n] = coeffs
            interior = np.sqrt(2.0 / self.length) * 0.5 * _fft.dst(pad, type=1)
            out = np.zeros(coeffs.shape[:-1] + (nseg + 1,))
            out[..., 1:-1] = interior
            return out
        pad = np.zeros(coeffs.shape[:-1] + (nseg + 1,))
        pad[..., 0] = coeffs[..., 0] * np.sqrt(1.0 / self.length)
        pad[..., 1 : self.n] = coeffs[..., 1:] * (0.5 * np.sqrt(2.0 / self.length))
        return _fft.dct(pad, type=1)

    def analyze(self, values: np.ndarray, n_out: int | None = None) -> np.ndarray:
        """Coefficients from full-grid values (projection onto the basis).

        Up to ``2n+1`` modes are resolvable on the standard grid; by default
        the result is truncated to the stored band ``n``.
        """
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.grid.n_interior + 2:
            raise ValueError(
                f"expected {self.grid.n_interior + 2} grid values, got {values.shape[-1]}"
            )
        n_out = self.n if n_out is None else n_out
        h = self.grid.h
        if self.kind is BasisKind.DIRICHLET_SINE:
            if n_out > self.grid.n_interior:
                raise ValueError("requested band exceeds grid resolution")
            spec = _fft.dst(values[..., 1:-1], type=1)
            return np.sqrt(2.0 / self.length) * (h / 2.0) * spec[..., :n_out]
        if n_out > self.grid.n_interior + 1:
            raise ValueError("requested band exceeds grid resolution")
        spec = _fft.dct(values, type=1)
        out = (h / 2.0) * np.sqrt(2.0 / self.length) * spec[..., :n_out]
        out[..., 0] = (h / 2.0) * np.sqrt(1.0 / self.length) * spec[..., 0]
        return out

    def synthesize_derivative(self, coeffs: np.ndarray, refine: int = 1) -> np.ndarray:
        """Values of d/dx of the expansion on the full grid (exact, full band)."""
        coeffs = np.asarray(coeffs, dtype=float)
        nseg = self._n_intervals(refine)
        factors = self.modes * np.pi / self.length
        if self.kind is BasisKind.DIRICHLET_SINE:
            # sum v_k (k pi / L) sqrt(2/L) cos(k pi x / L): DCT-I synthesis
            pad = np.zeros(coeffs.shape[:-1] + (nseg + 1,))
            pad[..., 1 : self.n + 1] = (
                coeffs * factors * (0.5 * np.sqrt(2.0 / self.length))
            )
            return _fft.dct(pad, type=1)
        # -sum v_k (k pi / L) sqrt(2/L) sin(k pi x / L): DST-I synthesis
        pad = np.zeros(coeffs.shape[:-1] + (nseg - 1,))
        pad[..., : self.n - 1] = -coeffs[..., 1:] * factors[1:]
        interior = np.sqrt(2.0 / self.length) * 0.5 * _fft.dst(pad, type=1)
        out = np.zeros(coeffs.shape[:-1] + (nseg + 1,))
        out[..., 1:-1] = interior
        return out

    def derivative_coeffs(self, coeffs: np.ndarray) -> tuple["SpectralBasis", np.ndarray]:
        """Spectral derivative as coefficients in the complementary basis.

        Dirichlet -> Neumann drops the top mode (mode n has no slot in the
        0..n-1 cosine storage); Neumann -> Dirichlet is exact.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        out = np.zeros_like(coeffs)
        factors = self.modes * np.pi / self.length
        if self.kind is BasisKind.DIRICHLET_SINE:
            other = get_basis(BasisKind.NEUMANN_COSINE, self.length, self.n)
            out[..., 1:] = coeffs[..., : self.n - 1] * factors[: self.n - 1]
            return other, out
        other = get_basis(BasisKind.DIRICHLET_SINE, self.length, self.n)
        out[..., : self.n - 1] = -coeffs[..., 1:] * factors[1:]
        return other, out

    # -- norms ------------------------------------------------------------

    def l2_norm(self, coeffs: np.ndarray) -> np.ndarray:
        """Parseval L2 norm, summed over components (axes -2, -1)."""
        c = np.asarray(coeffs)
        return np.sqrt(np.sum(c * c, axis=(-2, -1)))

    def h1_norm(self, coeffs: np.ndarray) -> np.ndarray:
        """sqrt(sum (1 + lam_k) |v_k|^2) over components and modes."""
        c = np.asarray(coeffs)
        return np.sqrt(np.sum(self.h1_weights * c * c, axis=(-2, -1)))

    def linf_norm(self, coeffs: np.ndarray, oversample: int = 8) -> np.ndarray:
        """Max of |u(x)| (Euclidean in components) on an oversampled grid."""
        vals = self.synthesize(coeffs, refine=oversample)
        mag = np.sqrt(np.sum(vals * vals, axis=-2))
        return np.max(mag, axis=-1)

    def grid_l2(self, values: np.ndarray) -> np.ndarray:
        """Quadrature L2 norm of full-grid values (components on axis -2)."""
        v = np.asarray(values)
        return np.sqrt(np.sum((v * v) @ self.grid.weights, axis=-1))


@lru_cache(maxsize=None)
def get_basis(kind: BasisKind, length: float, n_modes: int) -> SpectralBasis:
    """Interned basis constructor; equal arguments give the same object."""
    return SpectralBasis(kind, length, n_modes)


@dataclass(frozen=True)
class SpectralField:
    """An m-component field stored as spectral coefficients.

    ``coeffs`` has shape (m, n_modes) and is treated as immutable.
    """

    basis: SpectralBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.shape[-1] != self.basis.n:
            raise ValueError(
                f"coefficient count {c.shape[-1]} != basis modes {self.basis.n}"
            )
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, basis: SpectralBasis, m: int) -> "SpectralField":
        return cls(basis, np.zeros((m, basis.n)))

    @classmethod
    def single_mode(cls, basis: SpectralBasis, m: int, k: int,
                    amplitude: float = 1.0, component: int = 0) -> "SpectralField":
        """Field equal to amplitude * e_k in one component."""
        c = np.zeros((m, basis.n))
        c[component, k - basis.mode_offset] = amplitude
        return cls(basis, c)

    def replace(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.basis, coeffs)

    def values(self, refine: int = 1) -> np.ndarray:
        return self.basis.synthesize(self.coeffs, refine=refine)

    def to_record(self) -> dict:
        """Flat serialization record used by the harness."""
        return {
            "basis": self.basis.kind.value,
            "L": self.basis.length,
            "m": self.m,
            "N_total": self.basis.n,
            "coeffs": [float(x) for x in self.coeffs.ravel()],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SpectralField":
        basis = get_basis(BasisKind(rec["basis"]), float(rec["L"]), int(rec["N_total"]))
        c = np.asarray(rec["coeffs"], dtype=float).reshape(int(rec["m"]), basis.n)
        return cls(basis, c)


def project_low(v: SpectralField, K: int) -> SpectralField:
    """Keep the first K eigenvalues' coefficients, zero the rest."""
    if not 1 <= K <= v.basis.n:
        raise ValueError(f"cut K={K} out of range [1, {v.basis.n}]")
    c = v.coeffs.copy()
    c[..., K:] = 0.0
    return v.replace(c)


def project_high(v: SpectralField, K: int) -> SpectralField:
    """Complement of :func:`project_low`; project_low + project_high = id."""
    if not 1 <= K <= v.basis.n:
        raise ValueError(f"cut K={K} out of range [1, {v.basis.n}]")
    c = v.coeffs.copy()
    c[..., :K] = 0.0
    return v.replace(c)


def synthesize(v: SpectralField, refine: int = 1) -> np.ndarray:
    """Full-grid values of the field (endpoints included)."""
    return v.basis.synthesize(v.coeffs, refine=refine)


def analyze(values: np.ndarray, basis: SpectralBasis) -> SpectralField:
    """Field from full-grid values, truncated to the stored band."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return SpectralField(basis, basis.analyze(values))


@dataclass(frozen=True)
class NormTriple:
    l2: float
    h1: float
    linf: float


def norms(v: SpectralField, oversample: int = 8) -> NormTriple:
    """(L2, H1, Linf) of a field; Linf on an oversampled grid."""
    b = v.basis
    return NormTriple(
        float(b.l2_norm(v.coeffs)),
        float(b.h1_norm(v.coeffs)),
        float(b.linf_norm(v.coeffs, oversample=oversample)),
    )


def derivative_field(v: SpectralField) -> SpectralField:
    """Spectral derivative of v in the complementary basis."""
    other, c = v.basis.derivative_coeffs(v.coeffs)
    return SpectralField(other, c)


def random_field(basis: SpectralBasis, m: int, rng: np.random.Generator,
                 decay: float = 2.0, h1_norm: float | None = 1.0) -> SpectralField:
    """Random smooth field with coefficients ~ N(0,1) * (1+k)^-decay.

    If ``h1_norm`` is given the field is rescaled to that H1 norm.
    """
    k = np.arange(basis.n) + 1.0
    c = rng.standard_normal((m, basis.n)) * k ** (-decay)
    if h1_norm is not None:
        cur = basis.h1_norm(c)
        if cur > 0:
            c *= h1_norm / cur
    return SpectralField(basis, c)
