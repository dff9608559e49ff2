"""Clock-driven simulation of converted spiking networks.

Semantics, per time step:

* the raw input, divided by the network's input scale, is injected into the
  first weighted layer as a constant analog current;
* layers advance in order within the step, so counts emitted by a spike
  stage at step t drive the next stage's update for the same t (each stage
  sees its predecessor's freshest emission, the clocked analogue of spikes
  being consumed one step downstream);
* biases inject as constant current every step;
* a spike stage adds its input current to the membrane potential and emits
  an integer count k = min(gamma, floor(v / v_th)) when v >= v_th, then
  soft-resets by subtracting k * v_th.  Negative potentials are allowed and
  simply accumulate;
* the final layer's output is accumulated over steps without firing; the
  class prediction is the argmax of that accumulator.

State arrays use float64 for potentials/current sums and int64 for counts,
keeping the bookkeeping identities (count * v_th + v == total current) at
machine precision for desk-scale runs.  Everything is vectorized over a
leading sample axis; ``simulate`` is the single-sample surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as m
from .convert import SnnNetwork
from .errors import ShapeError, SpikeForgeError


@dataclass
class NeuronState:
    """Membrane potential and cumulative emitted spikes, any shared shape."""

    v: np.ndarray
    cum_spikes: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "NeuronState":
        return cls(v=np.zeros(shape, dtype=np.float64),
                   cum_spikes=np.zeros(shape, dtype=np.int64))


def step_if_burst(state: NeuronState, current: np.ndarray, gamma: int,
                  v_th: float = 1.0) -> np.ndarray:
    """One update of the burst integrate-and-fire dynamics.

    Integrates ``current``, emits up to ``gamma`` spikes by repeated
    soft reset (computed in closed form), and returns the per-neuron
    count.  ``gamma=1`` is plain soft-reset IF.
    """
    if gamma < 1:
        raise SpikeForgeError(f"gamma must be >= 1, got {gamma}")
    if v_th <= 0:
        raise SpikeForgeError(f"v_th must be > 0, got {v_th}")
    state.v += current
    k = np.floor(state.v if v_th == 1.0 else state.v / v_th)
    np.clip(k, 0.0, float(gamma), out=k)
    state.v -= k if v_th == 1.0 else k * v_th
    k = k.astype(np.int64)
    state.cum_spikes += k
    return k


def step_if_soft_reset(state: NeuronState, current: np.ndarray,
                       v_th: float = 1.0) -> np.ndarray:
    """Plain IF with soft reset: at most one spike per step.

    Kept as an independent reference for the gamma=1 equivalence check.
    """
    state.v += current
    s = (state.v >= v_th).astype(np.int64)
    state.v -= s * float(v_th)
    state.cum_spikes += s
    return s


@dataclass
class PoolState:
    """Cumulative bookkeeping for one bank of pooling windows.

    ``cum_in`` has the window members on the last axis; ``cum_out`` and
    ``running_max`` drop that axis.
    """

    cum_in: np.ndarray
    cum_out: np.ndarray
    running_max: np.ndarray

    @classmethod
    def zeros(cls, window_shape) -> "PoolState":
        window_shape = tuple(window_shape)
        return cls(cum_in=np.zeros(window_shape, dtype=np.float64),
                   cum_out=np.zeros(window_shape[:-1], dtype=np.float64),
                   running_max=np.zeros(window_shape[:-1], dtype=np.float64))


def pool_average(counts: np.ndarray, size: int | None = None) -> np.ndarray:
    """Mean of the window members, forwarded as fractional current."""
    counts = np.asarray(counts)
    return np.sum(counts, axis=-1) / float(size or counts.shape[-1])


def pool_max_rate(state: PoolState, counts: np.ndarray) -> np.ndarray:
    """Forward the current-step count of the window's max-cumulative neuron.

    The selection uses cumulative counts including the current step; ties
    break toward the lowest index.  The selected neuron can change between
    steps, which is what lets this baseline over- or under-shoot the true
    windowed maximum.
    """
    state.cum_in += counts
    sel = np.argmax(state.cum_in, axis=-1)
    out = np.take_along_axis(np.asarray(counts, dtype=np.float64),
                             sel[..., None], axis=-1)[..., 0]
    state.cum_out += out
    return out


def pool_lip(state: PoolState, counts: np.ndarray) -> np.ndarray:
    """Lateral-inhibition pooling: emit the increment of the running maximum
    of cumulative window inputs.

    By construction the cumulative output equals the maximum cumulative
    input after every step, which is the whole point of the mechanism: late
    leader changes retroactively cancel earlier over-counts instead of
    stacking on top of them.
    """
    state.cum_in += counts
    peak = np.max(state.cum_in, axis=-1)
    out = peak - state.running_max
    state.running_max = peak
    state.cum_out += out
    return out


def lip_reference_literal(trains: np.ndarray, v_th: float = 1.0) -> np.ndarray:
    """Hidden-neuron formulation of lateral-inhibition pooling, for
    cross-checking on binary spike trains.

    One hidden IF neuron per window source receives its source one-to-one
    (weight +1) and inhibition -1 from every *other* hidden neuron's spike
    of the previous step; the stage output is the sum of hidden spikes.
    The one-step inhibition delay means simultaneous ties can transiently
    over-count relative to the cumulative-max form; with at most one input
    spike per step the two agree exactly.

    ``trains``: int array [sources, T] of 0/1 inputs. Returns output[T].
    """
    trains = np.asarray(trains)
    n, horizon = trains.shape
    v = np.zeros(n, dtype=np.float64)
    prev_h = np.zeros(n, dtype=np.float64)
    out = np.zeros(horizon, dtype=np.int64)
    for t in range(horizon):
        inhibition = prev_h.sum() - prev_h  # spikes of the other neurons
        v += trains[:, t] - inhibition
        h = (v >= v_th).astype(np.float64)
        v -= h * v_th
        out[t] = int(h.sum())
        prev_h = h
    return out


@dataclass
class SimTrace:
    """Everything diagnostics need from one simulation run.

    All per-neuron arrays keep a leading sample axis (n = 1 for a
    single-sample run).  ``step_counts`` is populated only when the run
    records per-step emissions.
    """

    horizon: int
    gamma_cap: int
    pooling_mode: str
    layer_kinds: tuple[str, ...]
    v_thresholds: dict[int, float]
    cum_spikes: dict[int, np.ndarray]          # spike layer -> [n, neurons] int64
    v_final: dict[int, np.ndarray]             # spike layer -> [n, neurons] float64
    cum_input: dict[int, np.ndarray]           # spike layer -> [n, neurons] float64
    pool_cum_in: dict[int, np.ndarray]         # pool layer  -> [n, windows, k*k] float64
    pool_cum_out: dict[int, np.ndarray]        # pool layer  -> [n, windows] float64
    output_sum: np.ndarray                     # [n, out_dim] float64
    ac_ops: dict[int, np.ndarray]              # weighted layer -> [n] float64
    analog_macs_per_step: int
    step_counts: dict[int, np.ndarray] = field(default_factory=dict)  # [n, T, neurons]

    @property
    def sample_count(self) -> int:
        return int(self.output_sum.shape[0])

    def rates(self) -> dict[int, np.ndarray]:
        return {i: c / float(self.horizon) for i, c in self.cum_spikes.items()}


def layer_macs(layer: m.Layer, in_shape: tuple[int, ...],
               out_shape: tuple[int, ...]) -> int:
    """Multiply-accumulate count of one weighted layer's dense forward."""
    if layer.kind == "conv2d":
        oc, ic, kh, kw = layer.weight.shape
        return int(np.prod(out_shape)) * ic * kh * kw
    if layer.kind == "linear":
        out, inp = layer.weight.shape
        return out * inp
    return 0


def model_macs(model: m.AnnModel) -> int:
    """Total MACs of one dense forward pass (conv + linear layers)."""
    shapes = m.validate_shapes(model)
    total = 0
    shape = tuple(model.input_shape)
    for layer, out_shape in zip(model.layers, shapes):
        total += layer_macs(layer, shape, out_shape)
        shape = out_shape
    return total


def _conv_fanout(layer: m.Layer, in_shape: tuple[int, ...]) -> np.ndarray:
    """Per-input-neuron count of weight taps it feeds (flat, length in-size)."""
    c, h, w = in_shape
    oc, ic, kh, kw = layer.weight.shape
    pad = layer.padding
    oh = (h + 2 * pad - kh) // layer.stride + 1
    ow = (w + 2 * pad - kw) // layer.stride + 1
    counter = np.zeros((h + 2 * pad, w + 2 * pad), dtype=np.int64)
    for ky in range(kh):
        for kx in range(kw):
            counter[ky:ky + layer.stride * (oh - 1) + 1:layer.stride,
                    kx:kx + layer.stride * (ow - 1) + 1:layer.stride] += 1
    spatial = counter[pad:pad + h, pad:pad + w] * oc
    return np.broadcast_to(spatial, (c, h, w)).reshape(-1).astype(np.float64)


class _StagePlan:
    """Precomputed per-layer apparatus for the stepped forward pass."""

    def __init__(self, net: SnnNetwork):
        shape = tuple(net.input_shape)
        self.in_shapes: list[tuple[int, ...]] = []
        self.out_shapes: list[tuple[int, ...]] = []
        self.conv_idx: dict[int, np.ndarray] = {}
        self.wmat_t: dict[int, np.ndarray] = {}    # weighted layer -> [K, O] float64
        self.bias: dict[int, np.ndarray] = {}
        self.fanout: dict[int, np.ndarray] = {}
        self.pool_idx: dict[int, np.ndarray] = {}
        self.macs: dict[int, int] = {}
        spike_pos = 0
        self.spike_vth: dict[int, float] = {}
        for i, layer in enumerate(net.layers):
            self.in_shapes.append(shape)
            if layer.kind == "conv2d":
                c, h, w = shape
                oc, ic, kh, kw = layer.weight.shape
                if ic != c:
                    raise ShapeError(f"layer {i} (conv2d): {ic} in-channels vs input {shape}")
                idx, _, (oh, ow) = m.conv_plan(c, h, w, kh, kw, layer.stride, layer.padding)
                self.conv_idx[i] = idx
                self.wmat_t[i] = np.ascontiguousarray(
                    layer.weight.reshape(oc, -1).T)
                self.bias[i] = layer.bias
                self.fanout[i] = _conv_fanout(layer, shape)
                shape = (oc, oh, ow)
                self.macs[i] = int(np.prod(shape)) * ic * kh * kw
            elif layer.kind == "linear":
                out, inp = layer.weight.shape
                if shape != (inp,):
                    raise ShapeError(f"layer {i} (linear): expects ({inp},), input {shape}")
                self.wmat_t[i] = np.ascontiguousarray(layer.weight.T)
                self.bias[i] = layer.bias
                self.fanout[i] = np.full(inp, out, dtype=np.float64)
                shape = (out,)
                self.macs[i] = out * inp
            elif layer.kind == "spike":
                self.spike_vth[i] = net.v_thresholds[spike_pos]
                spike_pos += 1
            elif layer.kind in ("maxpool2d", "avgpool2d"):
                c, h, w = shape
                idx, (oh, ow) = m.pool_plan(h, w, layer.kernel, layer.stride)
                self.pool_idx[i] = idx
                shape = (c, oh, ow)
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            else:
                raise ShapeError(f"layer {i}: unsupported kind {layer.kind!r} in SNN")
            self.out_shapes.append(shape)
        # Every layer before the first spike/pool stage sees the constant
        # analog drive, so its output is identical at every step: hoist it.
        self.prefix_len = 0
        for layer in net.layers:
            if layer.kind not in ("conv2d", "linear", "flatten"):
                break
            self.prefix_len += 1
        self.analog_macs = sum(self.macs.get(i, 0) for i in range(self.prefix_len))


def simulate_batch(net: SnnNetwork, inputs: np.ndarray, horizon: int,
                   record_steps: bool = False) -> SimTrace:
    """Run ``horizon`` steps for a batch ``[n, *input_shape]``."""
    if horizon < 1:
        raise SpikeForgeError(f"simulation horizon must be >= 1, got {horizon}")
    inputs = np.asarray(inputs, dtype=np.float64)
    if tuple(inputs.shape[1:]) != tuple(net.input_shape):
        raise ShapeError(
            f"input shape {tuple(inputs.shape[1:])} does not match network "
            f"input_shape {tuple(net.input_shape)}")
    n = inputs.shape[0]
    plan = _StagePlan(net)
    gamma = net.gamma_cap

    neuron: dict[int, NeuronState] = {}
    cum_input: dict[int, np.ndarray] = {}
    pools: dict[int, PoolState] = {}
    ac_ops: dict[int, np.ndarray] = {}
    steps: dict[int, np.ndarray] = {}
    for i, layer in enumerate(net.layers):
        if layer.kind == "spike":
            size = int(np.prod(plan.out_shapes[i]))
            neuron[i] = NeuronState.zeros((n, size))
            cum_input[i] = np.zeros((n, size), dtype=np.float64)
            if record_steps:
                steps[i] = np.zeros((n, horizon, size), dtype=np.int64)
        elif layer.kind in ("maxpool2d", "avgpool2d"):
            c = plan.in_shapes[i][0]
            windows = c * plan.pool_idx[i].shape[0]
            pools[i] = PoolState.zeros((n, windows, layer.kernel * layer.kernel))
        elif layer.kind in ("conv2d", "linear") and i >= plan.prefix_len:
            ac_ops[i] = np.zeros(n, dtype=np.float64)

    def weighted(i, layer, z):
        if layer.kind == "conv2d":
            padded = m._pad_batch(z.reshape((n,) + plan.in_shapes[i]), layer.padding)
            p_win, k_taps = plan.conv_idx[i].shape
            cols = padded.reshape(n, -1).take(plan.conv_idx[i].ravel(), axis=1)
            out = cols.reshape(n * p_win, k_taps) @ plan.wmat_t[i]
            out = out.reshape(n, p_win, -1) + plan.bias[i]
            return np.ascontiguousarray(out.transpose(0, 2, 1)) \
                .reshape((n,) + plan.out_shapes[i])
        return z.reshape(n, -1) @ plan.wmat_t[i] + plan.bias[i]

    # constant prefix: weighted/flatten stages fed by the analog drive.
    # The value stream runs in float32 (counts and f32-weight products are
    # exact there); membrane/current accumulators stay float64.
    z = (inputs / net.input_scale).astype(np.float32)
    for i in range(plan.prefix_len):
        layer = net.layers[i]
        z = z.reshape(n, -1) if layer.kind == "flatten" else weighted(i, layer, z)
    prefix_out = z

    out_dim = int(np.prod(plan.out_shapes[-1]))
    output_sum = np.zeros((n, out_dim), dtype=np.float64)

    for t in range(horizon):
        z = prefix_out
        for i in range(plan.prefix_len, len(net.layers)):
            layer = net.layers[i]
            kind = layer.kind
            if kind in ("conv2d", "linear"):
                ac_ops[i] += z.reshape(n, -1) @ plan.fanout[i]
                z = weighted(i, layer, z)
            elif kind == "spike":
                cur = z.reshape(n, -1)
                cum_input[i] += cur
                counts = step_if_burst(neuron[i], cur, gamma, plan.spike_vth[i])
                if record_steps:
                    steps[i][:, t, :] = counts
                z = counts.astype(np.float32).reshape((n,) + plan.out_shapes[i])
            elif kind in ("maxpool2d", "avgpool2d"):
                c, h, w = plan.in_shapes[i]
                windows = z.reshape(n * c, h * w) \
                    .take(plan.pool_idx[i].ravel(), axis=1) \
                    .reshape(n, -1, layer.kernel * layer.kernel)
                if kind == "avgpool2d" or net.pooling_mode == "average":
                    out = pool_average(windows)
                    pools[i].cum_in += windows
                    pools[i].cum_out += out
                elif net.pooling_mode == "max_rate":
                    out = pool_max_rate(pools[i], windows)
                else:
                    out = pool_lip(pools[i], windows)
                z = out.astype(np.float32).reshape((n,) + plan.out_shapes[i])
            else:
                z = z.reshape(n, -1)
        output_sum += z.reshape(n, -1)

    return SimTrace(
        horizon=horizon,
        gamma_cap=gamma,
        pooling_mode=net.pooling_mode,
        layer_kinds=tuple(l.kind for l in net.layers),
        v_thresholds=dict(plan.spike_vth),
        cum_spikes={i: s.cum_spikes for i, s in neuron.items()},
        v_final={i: s.v for i, s in neuron.items()},
        cum_input=cum_input,
        pool_cum_in={i: p.cum_in for i, p in pools.items()},
        pool_cum_out={i: p.cum_out for i, p in pools.items()},
        output_sum=output_sum,
        ac_ops=ac_ops,
        analog_macs_per_step=plan.analog_macs,
        step_counts=steps,
    )


def simulate(net: SnnNetwork, input: np.ndarray, horizon: int,
             record_steps: bool = True) -> SimTrace:
    """Simulate one sample for ``horizon`` steps; pure function of its
    arguments (identical calls yield identical traces)."""
    x = np.asarray(input, dtype=np.float64)
    if tuple(x.shape) != tuple(net.input_shape):
        raise ShapeError(
            f"input shape {tuple(x.shape)} does not match network input_shape "
            f"{tuple(net.input_shape)}")
    return simulate_batch(net, x[None], horizon, record_steps=record_steps)


def decode(trace: SimTrace):
    """Firing rates per spike layer plus the argmax class prediction.

    Rates are cumulative counts / horizon.  Predictions come from the final
    accumulated output current; ties resolve to the lowest class index.
    Returns ``(rates, prediction)`` with scalar prediction for single-sample
    traces and an int64 array for batches.
    """
    rates = trace.rates()
    preds = np.argmax(trace.output_sum, axis=1)
    if trace.sample_count == 1:
        return {i: r[0] for i, r in rates.items()}, int(preds[0])
    return rates, preds
