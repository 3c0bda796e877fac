"""Threshold-detector click statistics for ergodic rank-1 random signals."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("pcsft-clicks")
except PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.1.0"

from pcsft.field_space import (  # noqa: E402
    FieldState,
    Grid,
    WaveFunction,
    born_probability,
    inner_product,
    norm_squared,
    normalize,
)
from pcsft.signal_gen import ProcessParams, init_driver, sample_ensemble  # noqa: E402
from pcsft.detector import DetectorConfig, calibrate  # noqa: E402
from pcsft.experiment import ExperimentConfig, RunStatistics, run_detection  # noqa: E402

__all__ = [
    "FieldState",
    "Grid",
    "WaveFunction",
    "born_probability",
    "inner_product",
    "norm_squared",
    "normalize",
    "ProcessParams",
    "init_driver",
    "sample_ensemble",
    "DetectorConfig",
    "calibrate",
    "ExperimentConfig",
    "RunStatistics",
    "run_detection",
]
