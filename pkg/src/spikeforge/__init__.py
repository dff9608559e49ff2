"""spikeforge: ANN-to-SNN conversion and clock-driven spiking simulation.

The pipeline: load an interchange bundle, fuse batchnorm into the preceding
convolutions, collect percentile activation statistics on a calibration set,
rescale weights so activations map onto firing rates, then simulate the
spiking network with burst-capable integrate-and-fire stages and one of
three pooling behaviors.  Diagnostics quantify the conversion error sources
(residual membrane charge, spikes of inactivated neurons, pooling error) and
estimate energy relative to the dense network.
"""

__version__ = "0.1.0"

from .bundle import CalibrationSet, load_bundle, load_calibration, save_bundle, save_calibration
from .convert import (
    NormalizationStats,
    SnnNetwork,
    build_snn,
    collect_activation_stats,
    convert_pipeline,
    fuse_batchnorm,
    normalize_weights,
)
from .diagnostics import (
    DiagnosticsReport,
    build_report,
    energy_estimate,
    firing_stats,
    pooling_error,
    rate_error,
    reference_activations,
    residual_report,
    sin_count,
)
from .model import (
    AnnModel,
    Layer,
    avgpool2d,
    batchnorm2d,
    conv2d,
    flatten,
    forward_ann,
    forward_batch,
    linear,
    maxpool2d,
    relu,
    validate_shapes,
)
from .sim import (
    NeuronState,
    PoolState,
    SimTrace,
    decode,
    pool_average,
    pool_lip,
    pool_max_rate,
    simulate,
    simulate_batch,
    step_if_burst,
    step_if_soft_reset,
)

__all__ = [
    "__version__",
    "AnnModel", "Layer", "CalibrationSet", "NormalizationStats", "SnnNetwork",
    "NeuronState", "PoolState", "SimTrace", "DiagnosticsReport",
    "conv2d", "linear", "relu", "batchnorm2d", "maxpool2d", "avgpool2d", "flatten",
    "forward_ann", "forward_batch", "validate_shapes",
    "load_bundle", "save_bundle", "load_calibration", "save_calibration",
    "fuse_batchnorm", "collect_activation_stats", "normalize_weights",
    "build_snn", "convert_pipeline",
    "step_if_burst", "step_if_soft_reset",
    "pool_average", "pool_max_rate", "pool_lip",
    "simulate", "simulate_batch", "decode",
    "residual_report", "sin_count", "pooling_error", "firing_stats",
    "rate_error", "energy_estimate", "build_report", "reference_activations",
]
