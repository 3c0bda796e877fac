"""Quadratic functionals of fields, and time versus ensemble averages.

A functional is any callable ``FieldState -> float``.  Functionals with a
true ``quadratic`` attribute promise f(c phi) = |c|^2 f(phi); for the rank-1
signal phi(s) = eta(s) psi this lets time averages run on the driver
trajectory alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable, Sequence

import numpy as np

from pcsft.field_space import FieldError, FieldState, Grid, norm_squared
from pcsft.signal_gen import ProcessParams, SignalDriver, init_driver, sample_etas

Functional = Callable[[FieldState], float]

MIN_WINDOW_TAUS = 100
# batch length for the time-average standard error, in correlation times
BATCH_TAUS = 50
MIN_BATCHES = 10


class ErgodicWindowError(ValueError):
    pass


class QuadraticObservable:
    """f_A(phi) = <A phi, phi> for a Hermitian kernel A on the grid.

    The kernel acts as (A phi)_i = sum_j A_ij phi_j dV, so
    f_A(phi) = sum_ij A_ij phi_j conj(phi_i) dV^2.
    """

    quadratic = True

    def __init__(self, matrix, grid: Grid):
        m = np.array(matrix, dtype=complex)
        if m.shape != (grid.n, grid.n):
            raise FieldError(f"observable matrix must be {grid.n}x{grid.n}, got {m.shape}")
        dev = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
        if dev > 1e-12:
            raise FieldError(f"observable matrix is not Hermitian (max |A - A^H| = {dev:.3e})")
        m.setflags(write=False)
        self.matrix = m
        self.grid = grid

    @classmethod
    def identity(cls, grid: Grid) -> "QuadraticObservable":
        """Total energy ||phi||^2."""
        return cls(np.eye(grid.n) / grid.dV, grid)

    @classmethod
    def projector(cls, e: FieldState) -> "QuadraticObservable":
        """|e><e|, so f(phi) = |<phi, e>|^2."""
        return cls(np.outer(e.amplitudes, e.amplitudes.conj()), e.grid)

    @classmethod
    def position(cls, grid: Grid, cell: int) -> "QuadraticObservable":
        """Projector on the unit delta at ``cell``: f(phi) = |phi(x)|^2 dV."""
        m = np.zeros((grid.n, grid.n))
        m[cell, cell] = 1.0 / grid.dV
        return cls(m, grid)

    def __add__(self, other: "QuadraticObservable") -> "QuadraticObservable":
        return QuadraticObservable(self.matrix + other.matrix, self.grid)

    def __call__(self, phi: FieldState) -> float:
        return evaluate_quadratic(self, phi)


def evaluate_quadratic(A: QuadraticObservable, phi: FieldState) -> float:
    if phi.grid.n != A.grid.n:
        raise FieldError(f"dimension mismatch: observable {A.grid.n}, field {phi.grid.n}")
    v = phi.amplitudes
    dV = phi.grid.dV
    val = complex(np.vdot(v, A.matrix @ v)) * dV * dV
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise FieldError(f"quadratic form not real: imaginary residue {val.imag:.3e}")
    return val.real


def position_density(phi: FieldState, cell: int) -> float:
    """|phi(x_cell)|^2, an energy density."""
    z = phi.amplitudes[cell]
    return float(z.real * z.real + z.imag * z.imag)


class PositionDensity:
    quadratic = True

    def __init__(self, cell: int):
        self.cell = int(cell)

    def __call__(self, phi: FieldState) -> float:
        return position_density(phi, self.cell)

    def __repr__(self) -> str:
        return f"PositionDensity({self.cell})"


class TotalEnergy:
    quadratic = True

    def __call__(self, phi: FieldState) -> float:
        return norm_squared(phi)

    def __repr__(self) -> str:
        return "TotalEnergy()"


class Constant:
    quadratic = False

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, phi: FieldState) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"Constant({self.value})"


def _is_quadratic(f: Functional) -> bool:
    return bool(getattr(f, "quadratic", False))


def functional_series(f: Functional, etas: np.ndarray, psi: FieldState) -> np.ndarray:
    """f(eta_k psi) for every driver value."""
    if _is_quadratic(f):
        return (etas.real ** 2 + etas.imag ** 2) * f(psi)
    return np.array([f(FieldState(psi.grid, e * psi.amplitudes)) for e in etas])


def _window_steps(Delta: float, params: ProcessParams) -> int:
    n = int(round(Delta / params.dt))
    if n < 1:
        raise ErgodicWindowError(f"averaging window {Delta} shorter than one step {params.dt}")
    return n


def time_average(f: Functional, driver: SignalDriver, psi: FieldState, Delta: float) -> float:
    """Rectangle-rule (1/Delta) int_0^Delta f(phi(s)) ds along one realisation.

    The window is rounded to a whole number of steps; the driver is advanced
    past it.
    """
    p = driver.params
    # a frozen driver has no fine time scale to resolve
    if not p.frozen and not Delta >= MIN_WINDOW_TAUS * p.tau_pq:
        raise ErgodicWindowError(
            f"ergodic window too short: Delta={Delta} < {MIN_WINDOW_TAUS} tau_pq"
        )
    n = _window_steps(Delta, p)
    vals = functional_series(f, driver.trajectory(n), psi)
    return math.fsum(vals) / n


@dataclass
class Moments:
    """Count, mean and centred sum of squares; merges exactly in any order up to rounding."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values) -> "Moments":
        x = np.asarray(values, dtype=float)
        n = x.size
        if n == 0:
            return cls()
        mean = math.fsum(x) / n
        return cls(n, mean, math.fsum((x - mean) ** 2))

    def merge(self, other: "Moments") -> "Moments":
        if self.n == 0:
            return Moments(other.n, other.mean, other.m2)
        if other.n == 0:
            return Moments(self.n, self.mean, self.m2)
        n = self.n + other.n
        d = other.mean - self.mean
        mean = self.mean + d * other.n / n
        m2 = self.m2 + other.m2 + d * d * self.n * other.n / n
        return Moments(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else math.nan


@dataclass
class Average:
    value: float
    stderr: float
    n: int


def ensemble_average(f: Functional, samples: Sequence[FieldState]) -> Average:
    if len(samples) == 0:
        raise ValueError("ensemble average needs at least one sample")
    m = Moments.of([f(phi) for phi in samples])
    return Average(m.mean, m.stderr, m.n)


def sample_covariance(samples: Sequence[FieldState]) -> np.ndarray:
    """Zero-mean sample covariance kernel D_ij = mean phi_i conj(phi_j)."""
    x = np.array([phi.amplitudes for phi in samples])
    return x.T @ x.conj() / x.shape[0]


def operator_trace(D: np.ndarray, grid: Grid) -> float:
    """Tr D = sum_i D_ii dV for a kernel on the grid."""
    return math.fsum(np.real(np.diag(D)) * grid.dV)


def batch_means_stderr(values: np.ndarray, batch: int) -> tuple[float, int]:
    """Standard error of the mean of a correlated series from batch means."""
    nb = values.size // batch
    if nb < 2:
        return math.nan, nb
    means = values[: nb * batch].reshape(nb, batch).mean(axis=1)
    return math.sqrt(means.var(ddof=1) / nb), nb


@dataclass
class ErgodicityReport:
    functional: str
    Delta: float
    n_ensemble: int
    time_average: float
    time_stderr: float
    ensemble_average: float
    ensemble_stderr: float
    difference: float
    combined_error: float
    batches: int
    converged: bool
    violation: bool

    @property
    def flagged(self) -> bool:
        return self.violation or not self.converged

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flagged"] = self.flagged
        return d


def ergodicity_report(
    f: Functional,
    psi: FieldState,
    params: ProcessParams,
    Delta: float,
    n: int,
    replica_id: int = 0,
) -> ErgodicityReport:
    """Time average along one realisation against an ensemble of ``n`` draws.

    Windows shorter than 100 tau_pq are allowed here but reported as not
    converged.  A violation is |difference| > 3 x combined standard error.
    """
    if n < 1:
        raise ValueError("ensemble size must be >= 1")
    steps = _window_steps(Delta, params)
    driver = init_driver(params, replica_id)
    series = functional_series(f, driver.trajectory(steps), psi)
    t_avg = math.fsum(series) / steps
    batch = max(1, int(round(BATCH_TAUS * params.tau_pq / params.dt))) if not params.frozen else steps
    t_err, nb = batch_means_stderr(series, batch)

    etas = sample_etas(n, params.seed + replica_id)
    ens = Moments.of(functional_series(f, etas, psi))
    e_err = ens.stderr if n > 1 else math.nan

    diff = t_avg - ens.mean
    comb = math.hypot(t_err, e_err) if math.isfinite(t_err) and math.isfinite(e_err) else math.nan
    converged = Delta >= MIN_WINDOW_TAUS * params.tau_pq and nb >= MIN_BATCHES and math.isfinite(comb)
    violation = bool(math.isfinite(comb) and abs(diff) > 3 * comb)
    return ErgodicityReport(
        functional=repr(f),
        Delta=Delta,
        n_ensemble=n,
        time_average=t_avg,
        time_stderr=t_err,
        ensemble_average=ens.mean,
        ensemble_stderr=e_err,
        difference=diff,
        combined_error=comb,
        batches=nb,
        converged=converged,
        violation=violation,
    )


@dataclass
class DecaySweep:
    deltas: list[float]
    rms_errors: list[float]
    slope: float


def time_average_error_sweep(
    f: Functional,
    psi: FieldState,
    params: ProcessParams,
    deltas: Sequence[float],
    replicas: int,
    reference: float | None = None,
) -> DecaySweep:
    """RMS error of time averages against ``reference`` for each window.

    ``reference`` defaults to f(psi), the exact ensemble mean of a quadratic
    functional.  The slope is a least-squares fit of log rms on log Delta;
    ergodic averaging predicts -1/2.
    """
    if reference is None:
        if not _is_quadratic(f):
            raise ValueError("reference value required for a non-quadratic functional")
        reference = f(psi)
    rms = []
    for Delta in deltas:
        errs = []
        for r in range(replicas):
            d = init_driver(params, replica_id=r)
            errs.append(time_average(f, d, psi, Delta) - reference)
        rms.append(math.sqrt(math.fsum(e * e for e in errs) / replicas))
    slope = float(np.polyfit(np.log(deltas), np.log(rms), 1)[0])
    return DecaySweep(list(map(float, deltas)), rms, slope)
