"""Threshold detectors that integrate signal energy over their aperture.

A detector collects (dt / gamma) sum_{x in region} |phi(s, x)|^2 dV per step
and clicks at the end of the step in which the collected energy reaches the
threshold epsilon.  The overshoot is discarded at the click and there is no
dead time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pcsft.field_space import FieldError, FieldState, norm_squared, region_energy


@dataclass(frozen=True)
class DetectorConfig:
    """Aperture and threshold of one detector.

    Give exactly one of ``epsilon`` (absolute threshold energy) or ``C``
    (calibration constant, epsilon = C ||psi||^2).
    """

    id: str
    region: tuple[int, ...]
    epsilon: float | None = None
    C: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "region", tuple(sorted({int(i) for i in self.region})))
        if not self.region:
            raise FieldError(f"detector {self.id!r}: region must be nonempty")
        if (self.epsilon is None) == (self.C is None):
            raise ValueError(f"detector {self.id!r}: give exactly one of epsilon or C")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"detector {self.id!r}: epsilon must be > 0")
        if self.C is not None and not self.C > 0:
            raise ValueError(f"detector {self.id!r}: C must be > 0")

    def resolve_epsilon(self, psi: FieldState) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        return calibrate(self.C, psi)


def calibrate(C: float, psi: FieldState) -> float:
    """Threshold epsilon = C ||psi||^2."""
    if not C > 0:
        raise ValueError(f"calibration constant must be > 0, got {C}")
    nrm = norm_squared(psi)
    if not nrm > 0:
        raise FieldError("degenerate field state: cannot calibrate against zero energy")
    return C * nrm


@dataclass
class DetectorState:
    accumulated: float = 0.0
    clicks: list[float] = field(default_factory=list)


def accumulate(
    state: DetectorState,
    phi_values: Sequence[complex],
    dt: float,
    gamma: float,
    dV: float,
) -> DetectorState:
    """Add one step of collected energy from the field values on the aperture."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    v = np.asarray(phi_values, dtype=complex)
    state.accumulated += (dt / gamma) * math.fsum((v.real * v.real + v.imag * v.imag) * dV)
    return state


def poll_click(state: DetectorState, epsilon: float, now: float) -> float | None:
    if state.accumulated >= epsilon:
        state.clicks.append(now)
        state.accumulated = 0.0
        return now
    return None


def mean_click_interval(epsilon: float, density: float, dV: float, gamma: float = 1.0) -> float:
    """Interval Delta solving (Delta / gamma) |psi(x0)|^2 dV = epsilon."""
    return epsilon * gamma / (density * dV)


def click_rate(energy: float, epsilon: float) -> float:
    """Mean clicks per unit gamma for aperture energy sum |psi|^2 dV."""
    return energy / epsilon


def aperture_gain(psi: FieldState, region: Sequence[int]) -> float:
    """Energy per unit |eta|^2 collected by an aperture: sum_region |psi|^2 dV."""
    return region_energy(psi, region)
