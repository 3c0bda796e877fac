"""Detection runs: drive the signal, feed detectors, aggregate click statistics.

Because phi(s, x) = eta(s) psi(x), the energy an aperture collects in one
step is (dt / gamma) |eta(s)|^2 g with the fixed gain
g = sum_{x in region} |psi(x)|^2 dV.  Runs therefore integrate the driver
once per step and scale by each detector's gain; basis measurements use
g_j = |<psi, e_j>|^2 in the same loop.

Replicas draw from independent Philox streams keyed by (seed, replica_id)
and are merged in replica order, so results do not depend on the thread
count.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from pcsft import _kernels
from pcsft.detector import DetectorConfig, aperture_gain
from pcsft.field_space import (
    FieldError,
    FieldState,
    gram_matrix,
    inner_product,
    normalize,
    same_grid,
)
from pcsft.signal_gen import CHUNK, ProcessParams, init_driver

MIN_RUN_TAUS = 1e4
DEFAULT_WINDOW_STEPS = 10


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    psi: FieldState
    detectors: tuple[DetectorConfig, ...]
    T: float
    process: ProcessParams = ProcessParams()
    coincidence_window: float | None = None
    replicas: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "detectors", tuple(self.detectors))
        if self.coincidence_window is None:
            object.__setattr__(self, "coincidence_window", DEFAULT_WINDOW_STEPS * self.process.dt)
        self.validate()

    def validate(self) -> None:
        p = self.process
        if not self.detectors:
            raise ConfigError("at least one detector is required")
        ids = [d.id for d in self.detectors]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"detector ids must be unique: {ids}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError(f"T must be finite and > 0, got {self.T}")
        if not p.frozen and self.T < MIN_RUN_TAUS * p.tau_pq:
            raise ConfigError(
                f"T={self.T} s is below the ergodic regime T >= 1e4 tau_pq = {MIN_RUN_TAUS * p.tau_pq} s"
            )
        if self.T < p.dt:
            raise ConfigError("T must cover at least one step")
        if not self.coincidence_window >= p.dt:
            raise ConfigError(
                f"coincidence window w={self.coincidence_window} must be >= dt={p.dt}"
            )
        if int(self.replicas) < 1:
            raise ConfigError("replicas must be >= 1")
        seen: dict[int, str] = {}
        for d in self.detectors:
            try:
                self.psi.grid.check_region(d.region)
            except FieldError as exc:
                raise ConfigError(f"detector {d.id!r}: {exc}") from None
            for i in d.region:
                if i in seen:
                    raise ConfigError(
                        f"regions must be disjoint: cell {i} in detectors {seen[i]!r} and {d.id!r}"
                    )
                seen[i] = d.id
            d.resolve_epsilon(self.psi)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.process.dt))

    @property
    def window_steps(self) -> int:
        # w/dt rounds to the nearest step count when w is a whole multiple of dt
        r = self.coincidence_window / self.process.dt
        k = round(r)
        return int(k) if abs(r - k) <= 1e-9 * max(1.0, r) else int(math.floor(r))

    def epsilons(self) -> np.ndarray:
        return np.array([d.resolve_epsilon(self.psi) for d in self.detectors])

    def gains(self) -> np.ndarray:
        return np.array([aperture_gain(self.psi, d.region) for d in self.detectors])

    def with_detectors(self, detectors: Iterable[DetectorConfig]) -> "ExperimentConfig":
        return dataclasses.replace(self, detectors=tuple(detectors))


@dataclass(frozen=True)
class ClickRecord:
    detector_id: str
    time: float
    replica_id: int = 0


@dataclass
class ClickLog:
    """Clicks of one replica, ordered by step then detector index."""

    replica_id: int
    detector: np.ndarray
    step: np.ndarray

    def times(self, dt: float) -> np.ndarray:
        return self.step * dt

    def records(self, ids: Sequence[str], dt: float) -> list[ClickRecord]:
        return [
            ClickRecord(ids[j], s * dt, self.replica_id)
            for j, s in zip(self.detector.tolist(), self.step.tolist())
        ]


def simulate_clicks(
    gains: np.ndarray,
    epsilons: np.ndarray,
    process: ProcessParams,
    n_steps: int,
    replica_id: int = 0,
) -> ClickLog:
    """Run one replica of threshold detectors with the given aperture gains."""
    gains = np.ascontiguousarray(gains, dtype=float)
    eps = np.ascontiguousarray(epsilons, dtype=float)
    nd = gains.shape[0]
    driver = init_driver(process, replica_id)
    a, c = process.coefficients()
    scale = process.dt / process.gamma
    acc = np.zeros(nd)
    buf_det = np.empty(CHUNK * nd, dtype=np.int64)
    buf_step = np.empty(CHUNK * nd, dtype=np.int64)
    dets, steps = [], []
    eta_re, eta_im = driver.eta_re, driver.eta_im
    done = 0
    while done < n_steps:
        m = min(CHUNK, n_steps - done)
        noise = driver.rng.standard_normal((m, 2))
        eta_re, eta_im, k = _kernels.detect_chunk(
            eta_re, eta_im, a, c, noise, gains, eps, scale, acc, done, buf_det, buf_step
        )
        if k:
            dets.append(buf_det[:k].copy())
            steps.append(buf_step[:k].copy())
        done += m
    if dets:
        return ClickLog(replica_id, np.concatenate(dets), np.concatenate(steps))
    return ClickLog(replica_id, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def greedy_coincidences(times: Sequence, dets: Sequence, w) -> int:
    """Pairs of clicks from distinct detectors within ``w``, earliest first, no reuse."""
    t = list(times)
    d = list(dets)
    used = [False] * len(t)
    pairs = 0
    for i in range(len(t)):
        if used[i]:
            continue
        j = i + 1
        while j < len(t) and t[j] - t[i] <= w:
            if not used[j] and d[j] != d[i]:
                used[i] = used[j] = True
                pairs += 1
                break
            j += 1
    return pairs


def count_coincidences(clicks: Sequence[ClickRecord], w: float) -> int:
    """Double clicks among time-sorted records; replicas are counted separately."""
    by_rep: dict[int, list[ClickRecord]] = {}
    for c in clicks:
        by_rep.setdefault(c.replica_id, []).append(c)
    total = 0
    for recs in by_rep.values():
        total += greedy_coincidences([c.time for c in recs], [c.detector_id for c in recs], w)
    return total


def double_click_bound(T: float, C: float, gamma: float = 1.0) -> float:
    """Upper bound T / (2 C gamma) on double clicks over a run of length T."""
    if not C > 0:
        raise ValueError("calibration constant must be > 0")
    return T / (2.0 * C * gamma)


@dataclass
class RunStatistics:
    """Click statistics summed over replicas.

    ``per_replica_counts`` has shape (replicas, detectors); the per-replica
    split backs the between-replica standard errors.
    """

    detector_ids: list[str]
    epsilons: np.ndarray
    gains: np.ndarray
    T: float
    gamma: float
    dt: float
    per_replica_counts: np.ndarray
    per_replica_doubles: np.ndarray
    window: float
    logs: list[ClickLog] = field(default_factory=list, repr=False)

    @property
    def replicas(self) -> int:
        return self.per_replica_counts.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return self.per_replica_counts.sum(axis=0)

    @property
    def total_clicks(self) -> int:
        return int(self.counts.sum())

    @property
    def n_double(self) -> int:
        return int(self.per_replica_doubles.sum())

    @property
    def lambdas(self) -> np.ndarray:
        return self.gamma * self.counts / (self.T * self.replicas)

    @property
    def probabilities(self) -> np.ndarray:
        tot = self.total_clicks
        if tot == 0:
            raise ValueError("run too short: no clicks recorded")
        return self.counts / tot

    @property
    def oracle_probabilities(self) -> np.ndarray:
        """Analytic probabilities renormalised over the detectors present."""
        return self.gains / math.fsum(self.gains) if math.fsum(self.gains) > 0 else np.zeros_like(self.gains)

    @property
    def oracle_lambdas(self) -> np.ndarray:
        return self.gains / self.epsilons

    def _between(self, per_rep: np.ndarray) -> np.ndarray:
        return per_rep.std(axis=0, ddof=1) / math.sqrt(self.replicas)

    @property
    def probability_stderr(self) -> np.ndarray:
        if self.replicas > 1:
            tot = self.per_replica_counts.sum(axis=1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                p = self.per_replica_counts / tot
            return self._between(p)
        p = self.probabilities
        return np.sqrt(p * (1 - p) / self.total_clicks)

    @property
    def lambda_stderr(self) -> np.ndarray:
        if self.replicas > 1:
            return self._between(self.gamma * self.per_replica_counts / self.T)
        return self.gamma * np.sqrt(self.counts) / self.T

    @property
    def n_double_stderr(self) -> float:
        if self.replicas > 1:
            return float(self._between(self.per_replica_doubles.astype(float)) * self.replicas)
        return math.sqrt(self.n_double)

    def index(self, detector_id: str) -> int:
        try:
            return self.detector_ids.index(detector_id)
        except ValueError:
            raise KeyError(f"unknown detector id {detector_id!r}") from None

    def merge(self, other: "RunStatistics") -> "RunStatistics":
        """Pool replicas of two runs of the same set-up."""
        if (
            self.detector_ids != other.detector_ids
            or self.T != other.T
            or self.gamma != other.gamma
            or self.dt != other.dt
            or self.window != other.window
        ):
            raise ValueError("cannot merge statistics from different set-ups")
        return RunStatistics(
            detector_ids=list(self.detector_ids),
            epsilons=self.epsilons,
            gains=self.gains,
            T=self.T,
            gamma=self.gamma,
            dt=self.dt,
            per_replica_counts=np.vstack([self.per_replica_counts, other.per_replica_counts]),
            per_replica_doubles=np.concatenate([self.per_replica_doubles, other.per_replica_doubles]),
            window=self.window,
            logs=self.logs + other.logs,
        )

    def to_dict(self) -> dict:
        have_clicks = self.total_clicks > 0
        P = self.probabilities if have_clicks else np.full(len(self.detector_ids), math.nan)
        P_se = self.probability_stderr if have_clicks else P
        lam, lam_se = self.lambdas, self.lambda_stderr
        P_or, lam_or = self.oracle_probabilities, self.oracle_lambdas
        dets = []
        for j, did in enumerate(self.detector_ids):
            dets.append(
                {
                    "id": did,
                    "epsilon": float(self.epsilons[j]),
                    "gain": float(self.gains[j]),
                    "count": int(self.counts[j]),
                    "per_replica_counts": self.per_replica_counts[:, j].tolist(),
                    "lambda": float(lam[j]),
                    "lambda_stderr": float(lam_se[j]),
                    "lambda_oracle": float(lam_or[j]),
                    "P": float(P[j]),
                    "P_stderr": float(P_se[j]),
                    "P_oracle": float(P_or[j]),
                }
            )
        return {
            "T": self.T,
            "gamma": self.gamma,
            "dt": self.dt,
            "replicas": self.replicas,
            "total_clicks": self.total_clicks,
            "coincidence_window": self.window,
            "n_double": self.n_double,
            "n_double_stderr": self.n_double_stderr,
            "detectors": dets,
        }


def _run(
    ids: list[str],
    gains: np.ndarray,
    eps: np.ndarray,
    cfg: ExperimentConfig,
    threads: int,
    keep_logs: bool,
) -> RunStatistics:
    n_steps = cfg.n_steps
    wsteps = cfg.window_steps

    def one(r: int) -> tuple[np.ndarray, int, ClickLog]:
        log = simulate_clicks(gains, eps, cfg.process, n_steps, r)
        counts = np.bincount(log.detector, minlength=len(ids)).astype(np.int64)
        doubles = greedy_coincidences(log.step.tolist(), log.detector.tolist(), wsteps)
        return counts, doubles, log

    reps = range(int(cfg.replicas))
    if threads > 1 and cfg.replicas > 1:
        _kernels.warmup()
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, reps))
    else:
        results = [one(r) for r in reps]
    return RunStatistics(
        detector_ids=ids,
        epsilons=eps,
        gains=gains,
        T=cfg.T,
        gamma=cfg.process.gamma,
        dt=cfg.process.dt,
        per_replica_counts=np.array([r[0] for r in results], dtype=np.int64),
        per_replica_doubles=np.array([r[1] for r in results], dtype=np.int64),
        window=cfg.coincidence_window,
        logs=[r[2] for r in results] if keep_logs else [],
    )


def run_detection(cfg: ExperimentConfig, threads: int = 1, keep_logs: bool = True) -> RunStatistics:
    """Simulate every replica over [0, T] and aggregate click statistics."""
    cfg.validate()
    ids = [d.id for d in cfg.detectors]
    return _run(ids, cfg.gains(), cfg.epsilons(), cfg, threads, keep_logs)


def click_frequency(stats: RunStatistics, detector_id: str) -> float:
    """Clicks per unit gamma: gamma * count / T."""
    return float(stats.lambdas[stats.index(detector_id)])


def detection_probability(stats: RunStatistics) -> dict[str, float]:
    P = stats.probabilities
    return {did: float(p) for did, p in zip(stats.detector_ids, P)}


def binomial_stderr(p: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(np.asarray(p) * (1 - np.asarray(p)) / n)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class EpsilonScan:
    epsilons: list[float]
    runs: list[RunStatistics]
    slopes: dict[str, float]
    max_pairwise_deviation: float
    pairwise_within_band: bool
    max_oracle_deviation: float
    oracle_within_band: bool

    @property
    def slope(self) -> float:
        """Fit of log total click rate against log epsilon."""
        return loglog_slope(self.epsilons, [r.lambdas.sum() for r in self.runs])

    def rows(self) -> list[dict]:
        out = []
        for eps, st in zip(self.epsilons, self.runs):
            d = st.to_dict()
            for rec in d["detectors"]:
                out.append(
                    {
                        "epsilon": eps,
                        "detector_id": rec["id"],
                        "P": rec["P"],
                        "P_oracle": rec["P_oracle"],
                        "lambda": rec["lambda"],
                        "stderr": rec["P_stderr"],
                    }
                )
        return out


def epsilon_invariance_scan(
    cfg: ExperimentConfig, epsilons: Sequence[float], threads: int = 1
) -> EpsilonScan:
    """Rerun ``cfg`` with every detector at each threshold, sharing the seed."""
    eps = [float(e) for e in epsilons]
    if len(eps) < 2:
        raise ValueError("epsilon scan needs at least two thresholds")
    if min(eps) <= 0:
        raise ValueError("thresholds must be > 0")
    if max(eps) / min(eps) < 10 * (1 - 1e-9):
        raise ValueError("epsilon scan must span at least one decade")
    runs = []
    for e in eps:
        dets = [dataclasses.replace(d, epsilon=e, C=None) for d in cfg.detectors]
        runs.append(run_detection(cfg.with_detectors(dets), threads=threads, keep_logs=False))
    ids = runs[0].detector_ids
    slopes = {did: loglog_slope(eps, [r.lambdas[j] for r in runs]) if all(r.counts[j] > 0 for r in runs) else math.nan
              for j, did in enumerate(ids)}

    max_pair, pair_ok = 0.0, True
    for a in range(len(runs)):
        for b in range(a + 1, len(runs)):
            dev = np.abs(runs[a].probabilities - runs[b].probabilities)
            band = 3 * np.hypot(runs[a].probability_stderr, runs[b].probability_stderr)
            max_pair = max(max_pair, float(dev.max()))
            pair_ok &= bool(np.all(dev <= band))
    max_or, or_ok = 0.0, True
    for r in runs:
        P_or = r.oracle_probabilities
        dev = np.abs(r.probabilities - P_or)
        max_or = max(max_or, float(dev.max()))
        or_ok &= bool(np.all(dev <= 3 * binomial_stderr(P_or, r.total_clicks)))
    return EpsilonScan(eps, runs, slopes, max_pair, pair_ok, max_or, or_ok)


@dataclass
class CoincidenceScan:
    rows: list[dict]

    def n_double(self, C: float, w: float) -> int:
        for r in self.rows:
            if r["C"] == C and r["w"] == w:
                return r["n_double"]
        raise KeyError((C, w))


def coincidence_scan(
    cfg: ExperimentConfig,
    Cs: Sequence[float],
    windows: Sequence[float],
    threads: int = 1,
) -> CoincidenceScan:
    """Double clicks for each calibration constant and coincidence window.

    One run per C; every window is counted on the same click logs.
    """
    rows = []
    p = cfg.process
    for C in Cs:
        dets = [dataclasses.replace(d, epsilon=None, C=float(C)) for d in cfg.detectors]
        c_cfg = cfg.with_detectors(dets)
        st = run_detection(c_cfg, threads=threads, keep_logs=True)
        bound = double_click_bound(cfg.T * st.replicas, float(C), p.gamma)
        for w in windows:
            w_cfg = dataclasses.replace(c_cfg, coincidence_window=float(w))
            ws = w_cfg.window_steps
            n = sum(greedy_coincidences(l.step.tolist(), l.detector.tolist(), ws) for l in st.logs)
            rows.append(
                {
                    "C": float(C),
                    "w": float(w),
                    "n_double": int(n),
                    "bound_T_over_2C": bound,
                    "total_clicks": st.total_clicks,
                }
            )
    return CoincidenceScan(rows)


def check_orthonormal(basis: Sequence[FieldState], tol: float = 1e-10) -> None:
    if not basis:
        raise FieldError("basis must be nonempty")
    g = gram_matrix(basis)
    bad = [
        (i, j, complex(g[i, j]))
        for i in range(len(basis))
        for j in range(len(basis))
        if abs(g[i, j] - (1.0 if i == j else 0.0)) > tol
    ]
    if bad:
        listing = ", ".join(f"G[{i},{j}]={v:.3g}" for i, j, v in bad[:10])
        raise FieldError(f"basis is not orthonormal: {listing}")


def run_basis_measurement(
    cfg: ExperimentConfig,
    basis: Sequence[FieldState],
    epsilon: float | None = None,
    threads: int = 1,
    keep_logs: bool = True,
) -> RunStatistics:
    """One virtual detector per basis vector, fed |<phi(s), e_j>|^2 per step.

    ``epsilon`` defaults to the resolved threshold of the first configured
    detector; the configured apertures are otherwise ignored.
    """
    cfg.validate()
    check_orthonormal(basis)
    for e in basis:
        if not same_grid(e.grid, cfg.psi.grid):
            raise FieldError("basis vectors must live on the field's grid")
    if epsilon is None:
        epsilon = cfg.detectors[0].resolve_epsilon(cfg.psi)
    gains = np.array([abs(inner_product(cfg.psi, e)) ** 2 for e in basis])
    eps = np.full(len(basis), float(epsilon))
    ids = [f"e{j}" for j in range(len(basis))]
    return _run(ids, gains, eps, cfg, threads, keep_logs)


def basis_oracle(psi: FieldState, basis: Sequence[FieldState]) -> np.ndarray:
    """|<Psi, e_j>|^2 for the normalised state."""
    Psi = normalize(psi)
    return np.array([abs(inner_product(Psi, e)) ** 2 for e in basis])


def hadamard_basis(grid, cells: tuple[int, int] = (0, 1)) -> list[FieldState]:
    """(e_a +/- e_b)/sqrt(2 dV) on two cells of ``grid``."""
    i, k = cells
    s = 1.0 / math.sqrt(2.0 * grid.dV)
    plus = np.zeros(grid.n, dtype=complex)
    minus = np.zeros(grid.n, dtype=complex)
    plus[i], plus[k] = s, s
    minus[i], minus[k] = s, -s
    return [FieldState(grid, plus), FieldState(grid, minus)]
