"""Ergodic rank-1 random signal phi(s, x) = eta(s) psi(x).

The driver eta is a complex stationary Ornstein-Uhlenbeck process with unit
second moment, advanced with its exact discrete-time update

    eta' = a eta + sqrt(1 - a^2) xi,   a = exp(-dt / tau_pq),

so the stationary law (circular complex Gaussian, E|eta|^2 = 1) is kept
exactly at any step size.  ``tau_pq = inf`` freezes the driver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pcsft import _kernels
from pcsft.field_space import FieldState

DEFAULT_TAU_PQ = 1e-4
DEFAULT_DT = 1e-5
DEFAULT_GAMMA = 1.0

# normals drawn per kernel call
CHUNK = 1 << 16


class ProcessError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessParams:
    """Time scales of the driver.

    tau_pq: correlation time of eta (s); ``math.inf`` gives a frozen driver.
    dt: integration step (s), at most tau_pq / 10.
    gamma: time unit converting energy density x time into energy (s).
    seed: 64-bit base seed; replicas derive their streams from (seed, id).
    eta0: optional fixed initial driver value instead of a stationary draw.
    """

    tau_pq: float = DEFAULT_TAU_PQ
    dt: float = DEFAULT_DT
    gamma: float = DEFAULT_GAMMA
    seed: int = 0
    eta0: complex | None = None

    def __post_init__(self) -> None:
        problems = []
        if not self.tau_pq > 0:
            problems.append(f"tau_pq must be > 0 (got {self.tau_pq})")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            problems.append(f"dt must be finite and > 0 (got {self.dt})")
        elif self.tau_pq > 0 and self.dt > self.tau_pq / 10:
            problems.append(f"dt <= tau_pq/10 violated (dt={self.dt}, tau_pq={self.tau_pq})")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            problems.append(f"gamma must be finite and > 0 (got {self.gamma})")
        if not 0 <= int(self.seed) < 2**64:
            problems.append(f"seed must be an unsigned 64-bit integer (got {self.seed})")
        if problems:
            raise ProcessError("invalid process parameters: " + "; ".join(problems))

    @property
    def frozen(self) -> bool:
        return math.isinf(self.tau_pq)

    def coefficients(self) -> tuple[float, float]:
        """(a, c) of the per-component update x' = a x + c n, n ~ N(0, 1)."""
        if self.frozen:
            return 1.0, 0.0
        r = self.dt / self.tau_pq
        # c^2 = (1 - a^2) / 2 per real component of a unit-variance complex process
        return math.exp(-r), math.sqrt(-math.expm1(-2.0 * r) / 2.0)


def make_rng(seed: int, replica_id: int = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox stream keyed by (seed, replica_id, stream)."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(replica_id), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def circular_normal(rng: np.random.Generator, size=None) -> complex | np.ndarray:
    """Complex circular Gaussian with E|z|^2 = 1."""
    if size is None:
        x, y = rng.standard_normal(2)
        return complex(x, y) / math.sqrt(2.0)
    xy = rng.standard_normal((*np.atleast_1d(size), 2))
    return (xy[..., 0] + 1j * xy[..., 1]) / math.sqrt(2.0)


@dataclass
class SignalDriver:
    """Scalar driver eta(s); mutated in place as time advances."""

    params: ProcessParams
    rng: np.random.Generator = field(repr=False)
    eta_re: float = 0.0
    eta_im: float = 0.0
    step_index: int = 0

    @property
    def eta(self) -> complex:
        return complex(self.eta_re, self.eta_im)

    @property
    def s(self) -> float:
        return self.step_index * self.params.dt

    def step(self) -> "SignalDriver":
        a, c = self.params.coefficients()
        x, y = self.rng.standard_normal(2)
        self.eta_re = a * self.eta_re + c * x
        self.eta_im = a * self.eta_im + c * y
        self.step_index += 1
        return self

    def trajectory(self, n_steps: int) -> np.ndarray:
        """Driver values at the start of each of the next ``n_steps`` steps.

        Advances the driver by ``n_steps``; equivalent to calling ``step``
        that many times.
        """
        a, c = self.params.coefficients()
        out = np.empty(n_steps, dtype=complex)
        done = 0
        while done < n_steps:
            m = min(CHUNK, n_steps - done)
            noise = self.rng.standard_normal((m, 2))
            re = np.empty(m)
            im = np.empty(m)
            self.eta_re, self.eta_im = _kernels.ou_path(self.eta_re, self.eta_im, a, c, noise, re, im)
            out.real[done:done + m] = re
            out.imag[done:done + m] = im
            done += m
        self.step_index += n_steps
        return out


def init_driver(params: ProcessParams, replica_id: int = 0) -> SignalDriver:
    """Driver at s = 0 with eta(0) from the stationary law (or ``params.eta0``)."""
    rng = make_rng(params.seed, replica_id)
    if params.eta0 is not None:
        eta0 = complex(params.eta0)
    else:
        eta0 = circular_normal(rng)
    return SignalDriver(params=params, rng=rng, eta_re=eta0.real, eta_im=eta0.imag)


def step_driver(d: SignalDriver) -> SignalDriver:
    return d.step()


def field_at(d: SignalDriver, psi: FieldState, cell: int) -> complex:
    return d.eta * psi[cell]


def field_state(d: SignalDriver, psi: FieldState) -> FieldState:
    """The whole field phi(s, .) = eta(s) psi."""
    return FieldState(psi.grid, d.eta * psi.amplitudes)


def sample_ensemble(psi: FieldState, n: int, seed: int) -> list[FieldState]:
    """``n`` independent draws eta_k psi with eta_k i.i.d. circular normal."""
    if n < 1:
        raise ValueError("ensemble size must be >= 1")
    etas = sample_etas(n, seed)
    return [FieldState(psi.grid, e * psi.amplitudes) for e in etas]


def sample_etas(n: int, seed: int) -> np.ndarray:
    """Stationary driver draws backing ``sample_ensemble``."""
    return circular_normal(make_rng(seed, stream=1), n)
