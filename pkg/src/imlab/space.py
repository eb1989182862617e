"""Product phase spaces: stacked component blocks over one collocation grid.

A block is (basis, m, shift): m components expanded in one eigenbasis whose
linear decay rates are eigenvalue + shift (shift = 1 for the damped systems
that carry an extra -u term).  Stacked coefficient arrays have shape
(..., m_total, n_modes) with rows grouped block by block, so the plain
Dirichlet problem is simply a one-block space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .spectral import BasisKind, SpectralBasis, SpectralField, get_basis


@dataclass(frozen=True)
class Block:
    basis: SpectralBasis
    m: int
    shift: float = 0.0


class ProductSpace:
    """Direct product of component blocks sharing L and the mode count."""

    def __init__(self, *blocks: Block):
        if not blocks:
            raise ValueError("need at least one block")
        b0 = blocks[0].basis
        for b in blocks:
            if b.basis.length != b0.length or b.basis.n != b0.n:
                raise ValueError("all blocks must share domain length and mode count")
        self.blocks = tuple(blocks)
        self.n = b0.n
        self.length = b0.length
        self.grid = b0.grid
        self.m_total = sum(b.m for b in blocks)
        rows = []
        offsets = []
        at = 0
        for b in blocks:
            offsets.append(at)
            rows.extend([b] * b.m)
            at += b.m
        self._row_blocks = rows
        self._offsets = offsets

    @classmethod
    def single(cls, basis: SpectralBasis, m: int, shift: float = 0.0) -> "ProductSpace":
        return cls(Block(basis, m, shift))

    def block_rows(self, i: int) -> slice:
        b = self.blocks[i]
        start = self._offsets[i]
        return slice(start, start + b.m)

    @cached_property
    def rates(self) -> np.ndarray:
        """Linear decay rate per (row, mode): eigenvalue + block shift."""
        return np.stack([b.basis.eigenvalues + b.shift for b in self._row_blocks])

    @cached_property
    def h1_weights(self) -> np.ndarray:
        """H1 weights 1 + eigenvalue per (row, mode), shift excluded."""
        return np.stack([1.0 + b.basis.eigenvalues for b in self._row_blocks])

    # -- transforms over stacked arrays ------------------------------------

    def synthesize(self, coeffs: np.ndarray, refine: int = 1) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        pieces = []
        for i, b in enumerate(self.blocks):
            rows = self.block_rows(i)
            pieces.append(b.basis.synthesize(coeffs[..., rows, :], refine=refine))
        return np.concatenate(pieces, axis=-2)

    def synthesize_derivative(self, coeffs: np.ndarray, refine: int = 1) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        pieces = []
        for i, b in enumerate(self.blocks):
            rows = self.block_rows(i)
            pieces.append(b.basis.synthesize_derivative(coeffs[..., rows, :], refine=refine))
        return np.concatenate(pieces, axis=-2)

    def analyze(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        pieces = []
        for i, b in enumerate(self.blocks):
            rows = self.block_rows(i)
            pieces.append(b.basis.analyze(values[..., rows, :]))
        return np.concatenate(pieces, axis=-2)

    # -- norms --------------------------------------------------------------

    def l2_norm(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.asarray(coeffs)
        return np.sqrt(np.sum(c * c, axis=(-2, -1)))

    def h1_norm(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.asarray(coeffs)
        return np.sqrt(np.sum(self.h1_weights * c * c, axis=(-2, -1)))

    # -- spectral cuts --------------------------------------------------------

    @cached_property
    def distinct_rates(self) -> np.ndarray:
        """Sorted distinct linear rates (multiplicities collapsed)."""
        r = np.unique(np.round(self.rates.ravel(), 9))
        return r

    def cut(self, n_cut: int) -> tuple[np.ndarray, float, float, float]:
        """Split at the n_cut-th distinct rate (1-based).

        Returns (low_mask, theta, rate_low, rate_high) where theta is the
        midpoint of the straddled rates and low_mask flags coefficients with
        rate <= rate_low.
        """
        d = self.distinct_rates
        if not 1 <= n_cut < len(d):
            raise ValueError(f"cut index {n_cut} out of range [1, {len(d) - 1}]")
        lo, hi = d[n_cut - 1], d[n_cut]
        theta = 0.5 * (lo + hi)
        return self.rates <= theta, float(theta), float(lo), float(hi)

    # -- conversions ----------------------------------------------------------

    def field(self, coeffs: np.ndarray, block: int = 0) -> SpectralField:
        rows = self.block_rows(block)
        return SpectralField(self.blocks[block].basis, np.asarray(coeffs)[rows, :])


def dirichlet_space(length: float, n_modes: int, m: int = 1,
                    shift: float = 0.0) -> ProductSpace:
    basis = get_basis(BasisKind.DIRICHLET_SINE, length, n_modes)
    return ProductSpace.single(basis, m, shift)


def neumann_space(length: float, n_modes: int, m: int = 1,
                  shift: float = 1.0) -> ProductSpace:
    basis = get_basis(BasisKind.NEUMANN_COSINE, length, n_modes)
    return ProductSpace.single(basis, m, shift)
