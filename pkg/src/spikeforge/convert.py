"""ANN-to-SNN conversion: batchnorm fusion, activation statistics,
weight normalization, and network assembly.

Conversion relies on the rate/activation correspondence: after scaling each
weighted layer by the ratio of its input and output activation scales, the
ReLU activations of the scaled model lie (mostly) in [0, 1] and an
integrate-and-fire stage firing at most once per step can represent them as
firing rates.  Scales come from the p-th percentile of activations observed
on a calibration set; p < 100 trades clipping error for faster integration.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import model as m
from .bundle import CalibrationSet
from .errors import ConversionError, MissingScaleError, StructureError

POOLING_MODES = ("average", "max_rate", "lip")

LAMBDA_FLOOR = 1e-6  # dead layers clamp here instead of dividing by zero

WEIGHTED_KINDS = ("conv2d", "linear")


@dataclass(frozen=True)
class NormalizationStats:
    """Per-activation-layer scale factors from one calibration run.

    ``lambda_per_layer`` maps each relu layer index to its activation scale;
    ``lambda_input`` is the scale of the raw input stage.
    """

    p: float
    lambda_per_layer: dict[int, float]
    lambda_input: float


@dataclass(frozen=True)
class SnnNetwork:
    """A converted spiking network; immutable after build.

    Layer list mirrors the source model with relu layers replaced by
    ``spike`` stages.  ``v_thresholds`` carries one firing threshold per
    spike stage, in stage order.  ``gamma_cap`` bounds how many spikes one
    neuron may emit within a single step (1 = plain integrate-and-fire).
    ``input_scale`` divides the raw input before injection as constant
    analog current.
    """

    layers: tuple[m.Layer, ...]
    input_shape: tuple[int, ...]
    v_thresholds: tuple[float, ...]
    gamma_cap: int
    pooling_mode: str
    input_scale: float = 1.0
    default_horizon: int = 64

    @property
    def v_threshold(self) -> float:
        return self.v_thresholds[0] if self.v_thresholds else 1.0


def fuse_batchnorm(model: m.AnnModel) -> m.AnnModel:
    """Fold every batchnorm2d into the conv2d directly before it.

    With per-channel scale g = gamma / sqrt(running_var + eps):
    fused weight = g * w, fused bias = g * (b - running_mean) + beta.
    The returned model has no batchnorm layers and matches the unfused
    forward within float tolerance.
    """
    m.validate_shapes(model)
    out: list[m.Layer] = []
    for i, layer in enumerate(model.layers):
        if layer.kind != "batchnorm2d":
            out.append(replace(layer))
            continue
        if not out or out[-1].kind != "conv2d":
            raise StructureError(
                f"layer {i} (batchnorm2d): must directly follow a conv2d layer")
        conv = out.pop()
        g = layer.gamma.astype(np.float64)
        theta = np.sqrt(layer.running_var.astype(np.float64) + layer.epsilon)
        scale = g / theta
        w = conv.weight.astype(np.float64) * scale[:, None, None, None]
        b = scale * (conv.bias.astype(np.float64) - layer.running_mean.astype(np.float64)) \
            + layer.beta.astype(np.float64)
        out.append(m.conv2d(w, b, stride=conv.stride, padding=conv.padding))
    return m.AnnModel(out, model.input_shape)


def _require_bn_free(model: m.AnnModel, op: str) -> None:
    for i, layer in enumerate(model.layers):
        if layer.kind == "batchnorm2d":
            raise StructureError(
                f"{op}: layer {i} is batchnorm2d; fuse_batchnorm must run first")


def nearest_rank_percentile(values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    flat = np.asarray(values).ravel()
    n = flat.size
    if n == 0:
        raise ConversionError("percentile of an empty sample")
    k = math.ceil(p / 100.0 * n)
    k = min(max(k, 1), n)
    return float(np.partition(flat, k - 1)[k - 1])


def _clamped_scale(value: float, what: str) -> float:
    if value <= 0.0:
        warnings.warn(
            f"{what} has non-positive activation scale {value}; clamping to "
            f"{LAMBDA_FLOOR}", RuntimeWarning, stacklevel=3)
        return LAMBDA_FLOOR
    return value


def collect_activation_stats(model: m.AnnModel, calib: CalibrationSet,
                             p: float = 99.9, chunk: int = 256) -> NormalizationStats:
    """Record the p-th percentile of every relu layer's activations (and of
    the raw input) over the whole calibration set."""
    if not 0.0 < p <= 100.0:
        raise ConversionError(f"percentile must lie in (0, 100], got {p}")
    _require_bn_free(model, "collect_activation_stats")
    if calib.count < 1:
        raise ConversionError("calibration set is empty")
    relu_indices = [i for i, l in enumerate(model.layers) if l.kind == "relu"]
    samples: dict[int, list[np.ndarray]] = {i: [] for i in relu_indices}
    for start in range(0, calib.count, chunk):
        outputs = m.forward_batch(model, calib.inputs[start:start + chunk])
        for i in relu_indices:
            samples[i].append(outputs[i].ravel())
    lam = {
        i: _clamped_scale(nearest_rank_percentile(np.concatenate(samples[i]), p),
                          f"relu layer {i}")
        for i in relu_indices
    }
    lam0 = _clamped_scale(nearest_rank_percentile(calib.inputs, p), "input stage")
    return NormalizationStats(p=float(p), lambda_per_layer=lam, lambda_input=lam0)


def _output_scale_index(model: m.AnnModel, i: int) -> int | None:
    """Index of the relu that consumes weighted layer i's output, or None.

    Pooling and flatten commute with positive scaling, so the relu may sit a
    few layers downstream; the search stops at the next weighted layer.
    """
    for j in range(i + 1, len(model.layers)):
        kind = model.layers[j].kind
        if kind == "relu":
            return j
        if kind in WEIGHTED_KINDS:
            return None
    return None


def normalize_weights(model: m.AnnModel, stats: NormalizationStats) -> m.AnnModel:
    """Rescale weights and biases by activation-scale ratios.

    Each weighted layer becomes w * (scale_in / scale_out), b / scale_out,
    where scale_in is the activation scale flowing into the layer (the input
    scale for the first one) and scale_out is the scale of the relu fed by
    the layer.  A trailing weighted layer with no relu keeps scale_out = 1,
    so the scaled network's final outputs equal the original ones when
    p = 100.
    """
    _require_bn_free(model, "normalize_weights")
    out: list[m.Layer] = []
    scale_in = stats.lambda_input
    for i, layer in enumerate(model.layers):
        if layer.kind not in WEIGHTED_KINDS:
            out.append(replace(layer))
            continue
        j = _output_scale_index(model, i)
        if j is None:
            scale_out = 1.0
        elif j in stats.lambda_per_layer:
            scale_out = stats.lambda_per_layer[j]
        else:
            raise MissingScaleError(
                f"layer {i} ({layer.kind}): no activation scale recorded for "
                f"relu layer {j}")
        w = layer.weight.astype(np.float64) * (scale_in / scale_out)
        b = layer.bias.astype(np.float64) / scale_out
        if layer.kind == "conv2d":
            out.append(m.conv2d(w, b, stride=layer.stride, padding=layer.padding))
        else:
            out.append(m.linear(w, b))
        scale_in = scale_out
    return m.AnnModel(out, model.input_shape)


def build_snn(model: m.AnnModel, gamma: int, pooling: str = "lip",
              v_th: float = 1.0, input_scale: float = 1.0,
              default_horizon: int = 64) -> SnnNetwork:
    """Assemble a spiking network from a BN-free, normalized model.

    ``gamma`` caps per-step spike emission (1 reproduces plain IF);
    ``pooling`` selects the behavior of every maxpool stage.
    """
    if int(gamma) < 1:
        raise ConversionError(f"gamma must be >= 1, got {gamma}")
    if pooling not in POOLING_MODES:
        raise ConversionError(f"pooling must be one of {POOLING_MODES}, got {pooling!r}")
    if v_th <= 0:
        raise ConversionError(f"v_th must be > 0, got {v_th}")
    if input_scale <= 0:
        raise ConversionError(f"input_scale must be > 0, got {input_scale}")
    _require_bn_free(model, "build_snn")
    m.validate_shapes(model)
    layers: list[m.Layer] = []
    thresholds: list[float] = []
    for layer in model.layers:
        if layer.kind == "relu":
            layers.append(m.Layer(kind="spike"))
            thresholds.append(float(v_th))
        elif layer.kind in ("conv2d", "linear", "maxpool2d", "avgpool2d", "flatten"):
            layers.append(replace(layer))
        else:
            raise ConversionError(f"unsupported layer kind for conversion: {layer.kind!r}")
    return SnnNetwork(
        layers=tuple(layers),
        input_shape=tuple(model.input_shape),
        v_thresholds=tuple(thresholds),
        gamma_cap=int(gamma),
        pooling_mode=pooling,
        input_scale=float(input_scale),
        default_horizon=int(default_horizon),
    )


def convert_pipeline(model: m.AnnModel, calib: CalibrationSet, p: float = 99.9,
                     gamma: int = 1, pooling: str = "lip", v_th: float = 1.0,
                     default_horizon: int = 64):
    """Fuse, calibrate, normalize, and build in one call.

    Returns ``(net, normalized_model, stats)``; ``normalized_model`` is the
    rate-reference the simulator's firing rates are compared against.
    """
    fused = fuse_batchnorm(model)
    stats = collect_activation_stats(fused, calib, p)
    normalized = normalize_weights(fused, stats)
    net = build_snn(normalized, gamma=gamma, pooling=pooling, v_th=v_th,
                    input_scale=stats.lambda_input, default_horizon=default_horizon)
    return net, normalized, stats
