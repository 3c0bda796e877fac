"""Spatial grid, field states and the analytic Born probabilities.

Fields live on a finite uniform grid of cells with common volume ``dV``.
A continuum integral ``int |psi(x)|^2 dx`` becomes ``sum_i |psi_i|^2 dV``.
Sums are compensated (``math.fsum``) so that normalisation checks hold to
1e-12 on large grids.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class FieldError(ValueError):
    """Invalid grid, field state or region."""


def _fsum_complex(values: np.ndarray) -> complex:
    return complex(math.fsum(values.real), math.fsum(values.imag))


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable cell-centred grid.

    ``points`` has shape (N, dim) and is strictly increasing in
    lexicographic order.
    """

    dim: int
    points: np.ndarray
    cell_volume: float

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if self.dim not in (1, 2, 3):
            raise FieldError(f"grid dim must be 1, 2 or 3, got {self.dim}")
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise FieldError(f"points must have shape (N, {self.dim}), got {pts.shape}")
        if pts.shape[0] < 1:
            raise FieldError("grid needs at least one cell")
        if not (self.cell_volume > 0 and math.isfinite(self.cell_volume)):
            raise FieldError(f"cell_volume must be finite and > 0, got {self.cell_volume}")
        for a, b in zip(pts[:-1], pts[1:]):
            if tuple(a) >= tuple(b):
                raise FieldError(
                    f"grid points must be strictly increasing (lexicographic); {tuple(a)} >= {tuple(b)}"
                )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cell_volume", float(self.cell_volume))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dV(self) -> float:
        return self.cell_volume

    @classmethod
    def uniform(
        cls,
        cells: Sequence[int],
        extents: Sequence[tuple[float, float]] | None = None,
    ) -> "Grid":
        """Regular grid with ``cells[k]`` cells along axis k.

        ``extents`` defaults to the unit interval on every axis.
        """
        cells = [int(c) for c in cells]
        if extents is None:
            extents = [(0.0, 1.0)] * len(cells)
        if len(extents) != len(cells):
            raise FieldError("cells and extents must have the same length")
        axes = []
        dV = 1.0
        for c, (lo, hi) in zip(cells, extents):
            if c < 1:
                raise FieldError(f"cell count must be >= 1, got {c}")
            if not hi > lo:
                raise FieldError(f"extent upper bound must exceed lower bound: ({lo}, {hi})")
            h = (hi - lo) / c
            axes.append(lo + h * (np.arange(c) + 0.5))
            dV *= h
        pts = np.array(list(itertools.product(*axes)), dtype=float)
        return cls(dim=len(cells), points=pts, cell_volume=dV)

    def check_region(self, region: Iterable[int]) -> tuple[int, ...]:
        idx = tuple(sorted({int(i) for i in region}))
        if not idx:
            raise FieldError("region must be nonempty")
        bad = [i for i in idx if i < 0 or i >= self.n]
        if bad:
            raise FieldError(f"region indices out of range [0, {self.n}): {bad}")
        return idx


@dataclass(frozen=True, eq=False)
class FieldState:
    """Complex amplitudes psi(x_i), one per grid cell."""

    grid: Grid
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        amp = np.array(self.amplitudes, dtype=complex).ravel()
        if amp.shape[0] != self.grid.n:
            raise FieldError(
                f"amplitudes length {amp.shape[0]} does not match grid size {self.grid.n}"
            )
        if not np.all(np.isfinite(amp)):
            raise FieldError("amplitudes must be finite")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    def __getitem__(self, i: int) -> complex:
        return complex(self.amplitudes[i])

    def scaled(self, c: complex) -> "FieldState":
        return FieldState(self.grid, c * self.amplitudes)


@dataclass(frozen=True, eq=False)
class WaveFunction(FieldState):
    """A field state normalised so that sum |Psi|^2 dV = 1."""

    def __post_init__(self) -> None:
        super().__post_init__()
        nrm = norm_squared(self)
        if abs(nrm - 1.0) > 1e-12:
            raise FieldError(f"wave function is not normalised: norm^2 = {nrm!r}")

    @property
    def as_field(self) -> FieldState:
        return FieldState(self.grid, self.amplitudes)


def norm_squared(psi: FieldState) -> float:
    """Total energy sum_i |psi_i|^2 dV."""
    a = psi.amplitudes
    return math.fsum((a.real * a.real + a.imag * a.imag) * psi.grid.dV)


def normalize(psi: FieldState) -> WaveFunction:
    nrm = norm_squared(psi)
    if not nrm > 0:
        raise FieldError("degenerate field state: zero norm")
    return WaveFunction(psi.grid, psi.amplitudes / math.sqrt(nrm))


def region_energy(psi: FieldState, region: Iterable[int]) -> float:
    """sum_{i in region} |psi_i|^2 dV."""
    idx = np.array(psi.grid.check_region(region))
    a = psi.amplitudes[idx]
    return math.fsum((a.real * a.real + a.imag * a.imag) * psi.grid.dV)


def born_probability(Psi: FieldState, region: Iterable[int]) -> float:
    """Probability of detection in ``region`` for a normalised wave function.

    An unnormalised state is accepted and normalised first.
    """
    if not isinstance(Psi, WaveFunction):
        Psi = normalize(Psi)
    return min(1.0, region_energy(Psi, region))


def inner_product(phi: FieldState, e: FieldState) -> complex:
    """<phi, e> = sum_i phi_i conj(e_i) dV (linear in the first slot)."""
    if not same_grid(phi.grid, e.grid):
        raise FieldError("grid mismatch in inner product")
    return _fsum_complex(phi.amplitudes * np.conj(e.amplitudes) * phi.grid.dV)


def _same_grid(a: Grid, b: Grid) -> bool:
    return (
        a.dim == b.dim
        and a.cell_volume == b.cell_volume
        and a.points.shape == b.points.shape
        and bool(np.array_equal(a.points, b.points))
    )


def delta_state(grid: Grid, cell: int, *, normalized: bool = True) -> FieldState:
    """Discrete delta at ``cell``.

    ``normalized=True`` gives the unit vector 1/sqrt(dV); ``False`` gives the
    sifting kernel 1/dV with <phi, e> = phi(x_cell).
    """
    grid.check_region([cell])
    amp = np.zeros(grid.n, dtype=complex)
    amp[cell] = 1.0 / math.sqrt(grid.dV) if normalized else 1.0 / grid.dV
    return FieldState(grid, amp)


def delta_basis(grid: Grid) -> list[FieldState]:
    return [delta_state(grid, i) for i in range(grid.n)]


def gram_matrix(basis: Sequence[FieldState]) -> np.ndarray:
    m = len(basis)
    g = np.empty((m, m), dtype=complex)
    for i in range(m):
        for j in range(m):
            g[i, j] = inner_product(basis[i], basis[j])
    return g


def same_grid(a: Grid, b: Grid) -> bool:
    return a is b or _same_grid(a, b)
