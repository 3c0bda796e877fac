"""Scenario files, field-state files and the named presets.

A scenario is a JSON object::

    {
      "grid":     {"dim": 1, "cells": [64], "extents": [[0, 1]], "dV": ...},
      "psi":      {"preset": "two_peak", ...} | {"amplitudes": [...]} | {"file": "psi.field"},
      "detectors": [{"id": "A", "region": [8, 9, ...] | {"start": 8, "stop": 24},
                     "C": 0.01 | "epsilon": 0.05}, ...],
      "process":  {"tau_pq": 1e-4, "dt": 1e-5, "gamma": 1.0},
      "run":      {"T": 200, "replicas": 1, "seed": 0},
      "coincidence_window": 1e-4,
      "scan":     {"epsilon": [...], "C": [...], "w": [...]},
      "basis":    "delta" | "hadamard" | {"cells": [i, k]} | {"vectors": [[...], ...]},
      "ergodicity": {"cell": 16, "Delta": 1.0, "n": 10000, "sweep": [...], "replicas": 64}
    }

Every key except ``psi`` is optional.  Omitted values fall back to the
documented defaults, which are listed in ``Scenario.resolved`` together with
the values that were given.  Amplitudes are numbers or [re, im] pairs.

Field-state files are whitespace-separated text: ``dim D`` and ``dV V``
header lines, then one ``x_1 .. x_D re im`` record per cell in
lexicographic coordinate order.  ``#`` starts a comment.
"""
from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from pcsft.detector import DetectorConfig
from pcsft.experiment import (
    DEFAULT_WINDOW_STEPS,
    ConfigError,
    ExperimentConfig,
    hadamard_basis,
)
from pcsft.field_space import FieldError, FieldState, Grid, delta_basis, norm_squared
from pcsft.signal_gen import DEFAULT_GAMMA, DEFAULT_TAU_PQ, ProcessError, ProcessParams

DEFAULT_T = 100.0
DEFAULT_GRID = {"dim": 1, "cells": [64], "extents": [[0.0, 1.0]]}
TIME_UNITS = ("s",)


class ScenarioError(ValueError):
    """Scenario problem, addressed by field name and (when known) line."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__((": ".join([", ".join(where), message])) if where else message)


# ---------------------------------------------------------------- presets


def _gauss(grid: Grid, center, width: float) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    r2 = ((grid.points - c) ** 2).sum(axis=1)
    return np.exp(-r2 / (4.0 * width * width))


def _default_center(grid: Grid, x0: float) -> list[float]:
    mid = 0.5 * (grid.points.min(axis=0) + grid.points.max(axis=0))
    mid[0] = x0
    return mid.tolist()


def _cells_within(grid: Grid, lo: float, hi: float) -> list[int]:
    x = grid.points[:, 0]
    return np.nonzero((x >= lo) & (x < hi))[0].tolist()


def _scale_to(grid: Grid, amp: np.ndarray, energy: float) -> np.ndarray:
    e = norm_squared(FieldState(grid, amp))
    if not e > 0:
        raise FieldError("preset bump has no support on this grid")
    return amp * math.sqrt(energy / e)


def preset_two_peak(grid: Grid, centers=(0.25, 0.75), width=0.04, halfwidth=0.125,
                    weights=(0.2, 0.8)) -> tuple[FieldState, list[dict]]:
    """Two disjoint Gaussian bumps carrying the given fractions of the energy.

    Each bump is cut off outside the slab |x_0 - c| < halfwidth, and one
    detector covers each slab, so the detector oracle equals ``weights``.
    """
    total = float(sum(weights))
    amp = np.zeros(grid.n, dtype=complex)
    dets = []
    for k, (c, wgt) in enumerate(zip(centers, weights)):
        cells = _cells_within(grid, c - halfwidth, c + halfwidth)
        bump = np.zeros(grid.n)
        bump[cells] = _gauss(grid, _default_center(grid, c), width)[cells]
        amp += _scale_to(grid, bump, wgt / total)
        dets.append({"id": "AB"[k] if len(centers) == 2 else f"D{k}", "region": cells})
    return FieldState(grid, amp), dets


def preset_gaussian_packet(grid: Grid, center=0.5, width=0.1) -> tuple[FieldState, list[dict]]:
    """One Gaussian bump; detectors on its core and on its right flank."""
    amp = _scale_to(grid, _gauss(grid, _default_center(grid, center), width).astype(complex), 1.0)
    lo, hi = grid.points[:, 0].min(), grid.points[:, 0].max()
    span = hi - lo
    core = _cells_within(grid, center - 0.125 * span, center + 0.125 * span)
    flank = _cells_within(grid, center + 0.125 * span, hi + 1.0)
    dets = [{"id": "core", "region": core}]
    if flank:
        dets.append({"id": "flank", "region": flank})
    return FieldState(grid, amp), dets


def preset_uniform(grid: Grid) -> tuple[FieldState, list[dict]]:
    """Constant amplitude, unit energy; two detectors splitting the grid in half."""
    amp = _scale_to(grid, np.ones(grid.n, dtype=complex), 1.0)
    half = grid.n // 2
    if half == 0:
        dets = [{"id": "L", "region": [0]}]
    else:
        dets = [{"id": "L", "region": list(range(half))}, {"id": "R", "region": list(range(half, grid.n))}]
    return FieldState(grid, amp), dets


PSI_PRESETS = {
    "two_peak": preset_two_peak,
    "gaussian_packet": preset_gaussian_packet,
    "uniform": preset_uniform,
}

PRESET_SCENARIOS: dict[str, dict] = {
    "two_peak": {
        "description": "two disjoint bumps, Born oracle (0.2, 0.8); Born rule and epsilon scans",
        "grid": {"dim": 1, "cells": [64], "extents": [[0.0, 1.0]]},
        "psi": {"preset": "two_peak"},
        "detectors": [{"id": "A", "region": {"start": 8, "stop": 24}, "C": 0.01},
                      {"id": "B", "region": {"start": 40, "stop": 56}, "C": 0.01}],
        "run": {"T": 200.0, "replicas": 1, "seed": 42},
        "scan": {"epsilon": [0.01, 0.03162277660168379, 0.1], "C": [1.0, 5.0, 25.0],
                 "w": [1e-4, 1e-3, 1e-2]},
        "ergodicity": {"cell": 16, "Delta": 1.0, "n": 10000},
    },
    "gaussian_packet": {
        "description": "single bump; click frequency against threshold",
        "grid": {"dim": 1, "cells": [64], "extents": [[0.0, 1.0]]},
        "psi": {"preset": "gaussian_packet"},
        "run": {"T": 100.0, "replicas": 1, "seed": 7},
        "detectors_C": 0.01,
        "scan": {"epsilon": [0.005, 0.0158113883008419, 0.05], "C": [1.0, 5.0, 25.0],
                 "w": [1e-4, 1e-3, 1e-2]},
        "ergodicity": {"cell": 32, "Delta": 1.0, "n": 10000},
    },
    "uniform": {
        "description": "flat amplitude split between two equal detectors; symmetry check",
        "grid": {"dim": 1, "cells": [64], "extents": [[0.0, 1.0]]},
        "psi": {"preset": "uniform"},
        "run": {"T": 100.0, "replicas": 1, "seed": 1},
        "detectors_C": 0.01,
        "basis": "hadamard",
    },
}


def preset_scenario(name: str) -> dict:
    try:
        d = copy.deepcopy(PRESET_SCENARIOS[name])
    except KeyError:
        raise ScenarioError(f"unknown preset {name!r}; choose from {sorted(PRESET_SCENARIOS)}",
                            field="preset") from None
    d.pop("description", None)
    return d


# ---------------------------------------------------------------- field files


def read_field_file(path: str | Path) -> FieldState:
    dim = None
    dV = None
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] in ("dim", "dV"):
            if len(tok) != 2:
                raise ScenarioError(f"expected '{tok[0]} <value>'", line=lineno)
            try:
                if tok[0] == "dim":
                    dim = int(tok[1])
                else:
                    dV = float(tok[1])
            except ValueError:
                raise ScenarioError(f"bad {tok[0]} value {tok[1]!r}", line=lineno) from None
            continue
        if dim is None:
            dim = len(tok) - 2
        if len(tok) != dim + 2:
            raise ScenarioError(f"expected {dim + 2} columns, got {len(tok)}", line=lineno)
        try:
            rows.append([float(t) for t in tok])
        except ValueError:
            raise ScenarioError(f"non-numeric record {line!r}", line=lineno) from None
    if dV is None:
        raise ScenarioError("missing 'dV' header", field="dV")
    if not rows:
        raise ScenarioError("no field records")
    data = np.array(rows)
    try:
        grid = Grid(dim, data[:, :dim], dV)
        return FieldState(grid, data[:, dim] + 1j * data[:, dim + 1])
    except FieldError as exc:
        raise ScenarioError(str(exc)) from None


def write_field_file(psi: FieldState, path: str | Path) -> None:
    g = psi.grid
    lines = [f"dim {g.dim}", f"dV {float(g.dV)!r}", "# " + " ".join(f"x{k}" for k in range(g.dim)) + " re im"]
    for x, a in zip(g.points, psi.amplitudes):
        lines.append(" ".join(repr(float(v)) for v in x) + f" {float(a.real)!r} {float(a.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- parsing


@dataclass
class Scenario:
    config: ExperimentConfig
    scan_epsilon: list[float] = field(default_factory=list)
    scan_C: list[float] = field(default_factory=list)
    scan_w: list[float] = field(default_factory=list)
    basis: list[FieldState] | None = None
    ergodicity: dict = field(default_factory=dict)
    resolved: dict = field(default_factory=dict)
    source: str | None = None


class _Locator:
    def __init__(self, text: str | None):
        self.lines = text.splitlines() if text else []

    def line_of(self, key: str | None) -> int | None:
        if not key or not self.lines:
            return None
        leaf = key.split(".")[-1].split("[")[0]
        pat = re.compile(r'"%s"\s*:' % re.escape(leaf))
        for i, ln in enumerate(self.lines, start=1):
            if pat.search(ln):
                return i
        return None

    def error(self, message: str, key: str | None) -> ScenarioError:
        return ScenarioError(message, field=key, line=self.line_of(key))


def _num(loc: _Locator, d: dict, key: str, path: str, default=None, *, positive=True, integer=False):
    if key not in d:
        if default is None:
            raise loc.error("missing required value", path)
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise loc.error(f"expected a number, got {v!r}", path)
    if integer and int(v) != v:
        raise loc.error(f"expected an integer, got {v!r}", path)
    if not math.isfinite(v) and not (key == "tau_pq" and v == math.inf):
        raise loc.error(f"expected a finite number, got {v!r}", path)
    if positive and not v > 0:
        raise loc.error(f"must be > 0, got {v!r}", path)
    return int(v) if integer else float(v)


def _numlist(loc: _Locator, v, path: str) -> list[float]:
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise loc.error("expected a list of numbers", path)
    if any(not x > 0 for x in v):
        raise loc.error("values must be > 0", path)
    return [float(x) for x in v]


def _grid(loc: _Locator, spec: dict) -> Grid:
    if not isinstance(spec, dict):
        raise loc.error("expected an object", "grid")
    dim = _num(loc, spec, "dim", "grid.dim", 1, integer=True)
    if dim not in (1, 2, 3):
        raise loc.error(f"dim must be 1, 2 or 3, got {dim}", "grid.dim")
    cells = spec.get("cells", [64] * dim)
    if isinstance(cells, int):
        cells = [cells] * dim
    if not isinstance(cells, list) or len(cells) != dim or not all(isinstance(c, int) and c >= 1 for c in cells):
        raise loc.error(f"expected {dim} positive integer cell counts", "grid.cells")
    extents = spec.get("extents", [[0.0, 1.0]] * dim)
    if (not isinstance(extents, list) or len(extents) != dim
            or not all(isinstance(e, list) and len(e) == 2 and e[1] > e[0] for e in extents)):
        raise loc.error(f"expected {dim} [lo, hi] pairs with hi > lo", "grid.extents")
    grid = Grid.uniform(cells, [tuple(map(float, e)) for e in extents])
    if "dV" in spec:
        dV = _num(loc, spec, "dV", "grid.dV")
        if not math.isclose(dV, grid.dV, rel_tol=1e-9):
            raise loc.error(
                f"inconsistent units: dV={dV} but extents/cells give {grid.dV}", "grid.dV"
            )
    return grid


def _amplitudes(loc: _Locator, vals, grid: Grid) -> np.ndarray:
    if not isinstance(vals, list) or len(vals) != grid.n:
        raise loc.error(f"expected {grid.n} amplitudes", "psi.amplitudes")
    out = np.empty(grid.n, dtype=complex)
    for i, v in enumerate(vals):
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            out[i] = v
        elif isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
            out[i] = complex(v[0], v[1])
        else:
            raise loc.error(f"amplitude {i}: expected number or [re, im], got {v!r}", "psi.amplitudes")
    return out


def _region(loc: _Locator, r, path: str) -> list[int]:
    if isinstance(r, dict):
        if set(r) - {"start", "stop"} or "start" not in r or "stop" not in r:
            raise loc.error("region object needs exactly 'start' and 'stop'", path)
        return list(range(int(r["start"]), int(r["stop"])))
    if isinstance(r, list) and all(isinstance(i, int) and not isinstance(i, bool) for i in r):
        return list(r)
    raise loc.error("region must be a list of cell indices or {start, stop}", path)


def parse_scenario_dict(data: dict, text: str | None = None, base_dir: Path | None = None,
                        seed: int | None = None) -> Scenario:
    """Validate a scenario mapping into an ``ExperimentConfig`` plus scan specs."""
    loc = _Locator(text)
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    known = {"grid", "psi", "detectors", "detectors_C", "process", "run", "coincidence_window",
             "scan", "basis", "ergodicity", "units", "description", "preset"}
    for k in data:
        if k not in known:
            raise loc.error("unknown key", k)
    if "preset" in data:
        base = preset_scenario(data["preset"])
        merged = {**base, **{k: v for k, v in data.items() if k != "preset"}}
        return parse_scenario_dict(merged, text, base_dir, seed)

    units = data.get("units", {})
    if not isinstance(units, dict):
        raise loc.error("expected an object", "units")
    if units.get("time", "s") not in TIME_UNITS:
        raise loc.error(f"inconsistent units: time must be seconds ('s'), got {units.get('time')!r}",
                        "units.time")

    defaults_applied = []
    grid = _grid(loc, data.get("grid", DEFAULT_GRID))
    if "grid" not in data:
        defaults_applied.append("grid")

    psi_spec = data.get("psi")
    if not isinstance(psi_spec, dict):
        raise loc.error("missing or invalid psi specification", "psi")
    preset_dets: list[dict] = []
    try:
        if "preset" in psi_spec:
            name = psi_spec["preset"]
            if name not in PSI_PRESETS:
                raise loc.error(f"unknown psi preset {name!r}; choose from {sorted(PSI_PRESETS)}",
                                "psi.preset")
            kwargs = {k: v for k, v in psi_spec.items() if k != "preset"}
            try:
                psi, preset_dets = PSI_PRESETS[name](grid, **kwargs)
            except TypeError as exc:
                raise loc.error(f"bad preset parameters: {exc}", "psi.preset") from None
        elif "amplitudes" in psi_spec:
            psi = FieldState(grid, _amplitudes(loc, psi_spec["amplitudes"], grid))
        elif "file" in psi_spec:
            p = Path(psi_spec["file"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            psi = read_field_file(p)
            grid = psi.grid
        else:
            raise loc.error("psi needs one of 'preset', 'amplitudes' or 'file'", "psi")
    except FieldError as exc:
        raise loc.error(str(exc), "psi") from None
    if not norm_squared(psi) > 0:
        raise loc.error("degenerate field state: zero norm", "psi")

    proc = data.get("process", {})
    if not isinstance(proc, dict):
        raise loc.error("expected an object", "process")
    tau = _num(loc, proc, "tau_pq", "process.tau_pq", DEFAULT_TAU_PQ)
    if "tau_pq" not in proc:
        defaults_applied.append("process.tau_pq")
    if "dt" in proc:
        dt = _num(loc, proc, "dt", "process.dt")
    else:
        if math.isinf(tau):
            raise loc.error("dt is required when tau_pq is infinite", "process.dt")
        dt = tau / 10
        defaults_applied.append("process.dt")
    gamma = _num(loc, proc, "gamma", "process.gamma", DEFAULT_GAMMA)
    if "gamma" not in proc:
        defaults_applied.append("process.gamma")
    eta0 = proc.get("eta0")
    if eta0 is not None:
        if isinstance(eta0, list) and len(eta0) == 2:
            eta0 = complex(eta0[0], eta0[1])
        elif isinstance(eta0, (int, float)):
            eta0 = complex(eta0)
        else:
            raise loc.error("eta0 must be a number or [re, im]", "process.eta0")

    run = data.get("run", {})
    if not isinstance(run, dict):
        raise loc.error("expected an object", "run")
    T = _num(loc, run, "T", "run.T", DEFAULT_T)
    if "T" not in run:
        defaults_applied.append("run.T")
    replicas = _num(loc, run, "replicas", "run.replicas", 1, integer=True)
    if seed is None:
        seed = _num(loc, run, "seed", "run.seed", 0, positive=False, integer=True)
        if seed < 0:
            raise loc.error("seed must be >= 0", "run.seed")
    try:
        process = ProcessParams(tau_pq=tau, dt=dt, gamma=gamma, seed=int(seed), eta0=eta0)
    except ProcessError as exc:
        raise loc.error(str(exc), "process") from None

    det_specs = data.get("detectors")
    if det_specs is None:
        if not preset_dets:
            raise loc.error("missing detector list", "detectors")
        C_default = data.get("detectors_C", 0.01)
        det_specs = [{**d, "C": C_default} for d in preset_dets]
        defaults_applied.append("detectors")
    if not isinstance(det_specs, list) or not det_specs:
        raise loc.error("expected a nonempty list", "detectors")
    detectors = []
    for k, d in enumerate(det_specs):
        path = f"detectors[{k}]"
        if not isinstance(d, dict):
            raise loc.error("expected an object", path)
        did = str(d.get("id", f"D{k}"))
        region = _region(loc, d.get("region"), f"{path}.region")
        if ("epsilon" in d) == ("C" in d):
            raise loc.error("give exactly one of 'epsilon' or 'C'", path)
        try:
            if "epsilon" in d:
                detectors.append(DetectorConfig(did, tuple(region), epsilon=_num(loc, d, "epsilon", f"{path}.epsilon")))
            else:
                detectors.append(DetectorConfig(did, tuple(region), C=_num(loc, d, "C", f"{path}.C")))
        except (FieldError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise loc.error(str(exc), path) from None

    if "coincidence_window" in data:
        w = _num(loc, data, "coincidence_window", "coincidence_window")
    else:
        w = DEFAULT_WINDOW_STEPS * dt
        defaults_applied.append("coincidence_window")

    try:
        cfg = ExperimentConfig(psi=psi, detectors=tuple(detectors), T=T, process=process,
                               coincidence_window=w, replicas=replicas)
    except ConfigError as exc:
        msg = str(exc)
        key = "detectors" if "region" in msg or "detector" in msg else (
            "coincidence_window" if "window" in msg else "run.T")
        raise loc.error(msg, key) from None

    scan = data.get("scan", {})
    if not isinstance(scan, dict):
        raise loc.error("expected an object", "scan")
    scan_eps = _numlist(loc, scan.get("epsilon", []), "scan.epsilon")
    scan_C = _numlist(loc, scan.get("C", []), "scan.C")
    scan_w = _numlist(loc, scan.get("w", []), "scan.w")

    basis = None
    bspec = data.get("basis")
    if bspec is not None:
        basis = _basis(loc, bspec, grid)

    erg = data.get("ergodicity", {})
    if not isinstance(erg, dict):
        raise loc.error("expected an object", "ergodicity")
    erg_res = {
        "cell": int(erg.get("cell", int(np.argmax(np.abs(psi.amplitudes))))),
        "Delta": float(erg.get("Delta", 1e4 * tau if math.isfinite(tau) else 1.0)),
        "n": int(erg.get("n", 10_000)),
        "sweep": [float(x) for x in erg.get("sweep", [])],
        "replicas": int(erg.get("replicas", 64)),
    }
    if not 0 <= erg_res["cell"] < grid.n:
        raise loc.error(f"cell out of range [0, {grid.n})", "ergodicity.cell")

    resolved = {
        "grid": {"dim": grid.dim, "n_cells": grid.n, "dV": grid.dV, "points": grid.points.tolist()},
        "psi": {
            **({"preset": psi_spec["preset"]} if "preset" in psi_spec else {}),
            "norm_squared": norm_squared(psi),
            "amplitudes": [[a.real, a.imag] for a in psi.amplitudes.tolist()],
        },
        "process": {"tau_pq": tau, "dt": dt, "gamma": gamma, "seed": int(seed),
                    "eta0": None if eta0 is None else [eta0.real, eta0.imag]},
        "run": {"T": T, "replicas": replicas, "n_steps": cfg.n_steps},
        "coincidence_window": w,
        "detectors": [
            {"id": d.id, "region": list(d.region), "epsilon": d.epsilon, "C": d.C,
             "epsilon_resolved": d.resolve_epsilon(psi)}
            for d in detectors
        ],
        "scan": {"epsilon": scan_eps, "C": scan_C, "w": scan_w},
        "ergodicity": erg_res,
        "defaults_applied": defaults_applied,
    }
    return Scenario(cfg, scan_eps, scan_C, scan_w, basis, erg_res, resolved)


def _basis(loc: _Locator, spec, grid: Grid) -> list[FieldState]:
    if spec == "delta":
        return delta_basis(grid)
    if spec == "hadamard":
        return hadamard_basis(grid, (0, 1)) if grid.n == 2 else _hadamard_cover(grid)
    if isinstance(spec, dict) and "cells" in spec:
        cells = spec["cells"]
        if not (isinstance(cells, list) and len(cells) == 2):
            raise loc.error("expected two cell indices", "basis.cells")
        return hadamard_basis(grid, (int(cells[0]), int(cells[1])))
    if isinstance(spec, dict) and "vectors" in spec:
        vecs = spec["vectors"]
        if not isinstance(vecs, list) or not vecs:
            raise loc.error("expected a nonempty list of vectors", "basis.vectors")
        return [FieldState(grid, _amplitudes(loc, v, grid)) for v in vecs]
    raise loc.error("basis must be 'delta', 'hadamard', {cells} or {vectors}", "basis")


def _hadamard_cover(grid: Grid) -> list[FieldState]:
    """Pairwise Hadamard vectors on cells (0,1), (2,3), ...; odd tail cell as a delta."""
    out = []
    for i in range(0, grid.n - 1, 2):
        out.extend(hadamard_basis(grid, (i, i + 1)))
    if grid.n % 2:
        out.append(delta_basis(grid)[-1])
    return out


def parse_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    sc = parse_scenario_dict(data, text, path.parent, seed)
    sc.source = str(path)
    return sc


def load_preset(name: str, seed: int | None = None) -> Scenario:
    sc = parse_scenario_dict(preset_scenario(name), None, None, seed)
    sc.source = f"preset:{name}"
    return sc
