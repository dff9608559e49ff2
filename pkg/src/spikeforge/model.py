"""Feed-forward ANN representation and exact reference evaluation.

Tensors are plain ``numpy.ndarray``s: float32 storage, row-major, no batch
dimension on model inputs (``input_shape`` is per-sample, e.g. ``(1, 12, 12)``
for a one-channel image or ``(784,)`` for a flat vector).  Matmul reductions
run in float64 and are cast back to float32 so the reference forward pass is
deterministic and accumulation-order noise stays below comparison tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteError, ShapeError, StructureError

SUPPORTED_KINDS = (
    "conv2d",
    "linear",
    "relu",
    "batchnorm2d",
    "maxpool2d",
    "avgpool2d",
    "flatten",
)


@dataclass
class Layer:
    """One network layer; which fields are meaningful depends on ``kind``.

    conv2d      weight [out_ch, in_ch, kh, kw], bias [out_ch], stride, padding
    linear      weight [out, in], bias [out]
    batchnorm2d gamma/beta/running_mean/running_var [ch], epsilon
    maxpool2d / avgpool2d   kernel, stride
    relu / flatten          no parameters
    """

    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    kernel: int = 0
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    epsilon: float = 1e-5


def _as_f32(x, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def conv2d(weight, bias, stride: int = 1, padding: int = 0) -> Layer:
    w = _as_f32(weight, "conv2d weight")
    b = _as_f32(bias, "conv2d bias")
    if w.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d [out,in,kh,kw], got {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d bias shape {b.shape} does not match out_ch {w.shape[0]}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d padding must be >= 0, got {padding}")
    return Layer(kind="conv2d", weight=w, bias=b, stride=stride, padding=padding)


def linear(weight, bias) -> Layer:
    w = _as_f32(weight, "linear weight")
    b = _as_f32(bias, "linear bias")
    if w.ndim != 2:
        raise ShapeError(f"linear weight must be 2-d [out,in], got {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear bias shape {b.shape} does not match out {w.shape[0]}")
    return Layer(kind="linear", weight=w, bias=b)


def relu() -> Layer:
    return Layer(kind="relu")


def batchnorm2d(gamma, beta, running_mean, running_var, epsilon: float = 1e-5) -> Layer:
    g = _as_f32(gamma, "batchnorm gamma")
    b = _as_f32(beta, "batchnorm beta")
    m = _as_f32(running_mean, "batchnorm running_mean")
    v = _as_f32(running_var, "batchnorm running_var")
    if not (g.shape == b.shape == m.shape == v.shape) or g.ndim != 1:
        raise ShapeError("batchnorm parameters must be 1-d and share one shape")
    if (v < 0).any():
        raise ShapeError("batchnorm running_var must be >= 0 elementwise")
    if epsilon < 0:
        raise ShapeError("batchnorm epsilon must be >= 0")
    return Layer(kind="batchnorm2d", gamma=g, beta=b, running_mean=m,
                 running_var=v, epsilon=float(epsilon))


def maxpool2d(kernel: int, stride: int | None = None) -> Layer:
    if kernel < 1:
        raise ShapeError(f"maxpool2d kernel must be >= 1, got {kernel}")
    s = kernel if stride is None else stride
    if s < 1:
        raise ShapeError(f"maxpool2d stride must be >= 1, got {s}")
    return Layer(kind="maxpool2d", kernel=kernel, stride=s)


def avgpool2d(kernel: int, stride: int | None = None) -> Layer:
    if kernel < 1:
        raise ShapeError(f"avgpool2d kernel must be >= 1, got {kernel}")
    s = kernel if stride is None else stride
    if s < 1:
        raise ShapeError(f"avgpool2d stride must be >= 1, got {s}")
    return Layer(kind="avgpool2d", kernel=kernel, stride=s)


def flatten() -> Layer:
    return Layer(kind="flatten")


@dataclass
class AnnModel:
    """Ordered layer list plus the per-sample input shape."""

    layers: list[Layer] = field(default_factory=list)
    input_shape: tuple[int, ...] = ()

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)

    def copy(self) -> "AnnModel":
        return AnnModel([replace(l) for l in self.layers], self.input_shape)


def _layer_output_shape(layer: Layer, shape: tuple[int, ...], index: int) -> tuple[int, ...]:
    k = layer.kind
    if k == "conv2d":
        if len(shape) != 3:
            raise ShapeError(f"layer {index} (conv2d): expected 3-d input, got {shape}")
        c, h, w = shape
        oc, ic, kh, kw = layer.weight.shape
        if ic != c:
            raise ShapeError(
                f"layer {index} (conv2d): weight expects {ic} input channels, input has {c}")
        oh = (h + 2 * layer.padding - kh) // layer.stride + 1
        ow = (w + 2 * layer.padding - kw) // layer.stride + 1
        if h + 2 * layer.padding < kh or w + 2 * layer.padding < kw or oh < 1 or ow < 1:
            raise ShapeError(f"layer {index} (conv2d): kernel {kh}x{kw} does not fit input {shape}")
        return (oc, oh, ow)
    if k == "linear":
        if len(shape) != 1:
            raise ShapeError(f"layer {index} (linear): expected 1-d input, got {shape}")
        out, inp = layer.weight.shape
        if inp != shape[0]:
            raise ShapeError(
                f"layer {index} (linear): weight expects {inp} inputs, input has {shape[0]}")
        return (out,)
    if k in ("relu", "flatten"):
        return shape if k == "relu" else (int(np.prod(shape)),)
    if k == "batchnorm2d":
        if len(shape) != 3:
            raise ShapeError(f"layer {index} (batchnorm2d): expected 3-d input, got {shape}")
        if layer.gamma.shape[0] != shape[0]:
            raise ShapeError(
                f"layer {index} (batchnorm2d): {layer.gamma.shape[0]} features vs "
                f"{shape[0]} input channels")
        return shape
    if k in ("maxpool2d", "avgpool2d"):
        if len(shape) != 3:
            raise ShapeError(f"layer {index} ({k}): expected 3-d input, got {shape}")
        c, h, w = shape
        if h < layer.kernel or w < layer.kernel:
            raise ShapeError(f"layer {index} ({k}): kernel {layer.kernel} does not fit {shape}")
        oh = (h - layer.kernel) // layer.stride + 1
        ow = (w - layer.kernel) // layer.stride + 1
        return (c, oh, ow)
    raise ShapeError(f"layer {index}: unsupported kind {k!r}")


def validate_shapes(model: AnnModel) -> list[tuple[int, ...]]:
    """Propagate shapes through the model.

    Returns the per-layer output shapes, or raises :class:`ShapeError` /
    :class:`StructureError` at the first inconsistency.
    """
    shapes = []
    shape = tuple(model.input_shape)
    if not shape:
        raise ShapeError("model has an empty input_shape")
    for i, layer in enumerate(model.layers):
        if layer.kind == "batchnorm2d":
            if i == 0 or model.layers[i - 1].kind != "conv2d":
                raise StructureError(
                    f"layer {i} (batchnorm2d): must directly follow a conv2d layer")
        shape = _layer_output_shape(layer, shape, i)
        shapes.append(shape)
    return shapes


def conv_plan(c_in: int, h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    """Precompute im2col gather indices into the zero-padded input volume.

    Returns ``(flat_indices [oh*ow, c_in*kh*kw], padded_hw, (oh, ow))``.
    """
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    ph, pw = h + 2 * padding, w + 2 * padding
    rows = np.arange(oh)[:, None] * stride + np.arange(kh)[None, :]   # oh,kh
    cols = np.arange(ow)[:, None] * stride + np.arange(kw)[None, :]   # ow,kw
    idx = (np.arange(c_in)[None, None, :, None, None] * (ph * pw)
           + rows[:, None, None, :, None] * pw
           + cols[None, :, None, None, :])                             # oh,ow,c,kh,kw
    return idx.reshape(oh * ow, c_in * kh * kw), (ph, pw), (oh, ow)


def pool_plan(h: int, w: int, kernel: int, stride: int):
    """Window gather indices for pooling: ``[oh*ow, kernel*kernel]`` into (h, w)."""
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    rows = np.arange(oh)[:, None] * stride + np.arange(kernel)[None, :]
    cols = np.arange(ow)[:, None] * stride + np.arange(kernel)[None, :]
    idx = rows[:, None, :, None] * w + cols[None, :, None, :]          # oh,ow,k,k
    return idx.reshape(oh * ow, kernel * kernel), (oh, ow)


def _pad_batch(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _conv2d_batch(x: np.ndarray, layer: Layer) -> np.ndarray:
    n, c, h, w = x.shape
    oc, ic, kh, kw = layer.weight.shape
    idx, _, (oh, ow) = conv_plan(c, h, w, kh, kw, layer.stride, layer.padding)
    flat = _pad_batch(x, layer.padding).reshape(n, -1)
    cols = flat.take(idx.ravel(), axis=1).reshape(n, *idx.shape)       # n,P,K
    wmat = layer.weight.reshape(oc, -1).astype(np.float64)
    out = cols.astype(np.float64) @ wmat.T + layer.bias.astype(np.float64)
    return np.ascontiguousarray(out.transpose(0, 2, 1).reshape(n, oc, oh, ow))


def _pool_batch(x: np.ndarray, layer: Layer, op) -> np.ndarray:
    n, c, h, w = x.shape
    idx, (oh, ow) = pool_plan(h, w, layer.kernel, layer.stride)
    windows = x.reshape(n * c, h * w).take(idx.ravel(), axis=1) \
        .reshape(n * c, *idx.shape)                                    # n*c,P,k*k
    return op(windows, axis=-1).reshape(n, c, oh, ow)


def _apply_layer_batch(layer: Layer, x: np.ndarray) -> np.ndarray:
    k = layer.kind
    if k == "conv2d":
        return _conv2d_batch(x, layer)
    if k == "linear":
        w = layer.weight.astype(np.float64)
        return x.astype(np.float64) @ w.T + layer.bias.astype(np.float64)
    if k == "relu":
        return np.maximum(x, 0)
    if k == "batchnorm2d":
        scale = (layer.gamma.astype(np.float64)
                 / np.sqrt(layer.running_var.astype(np.float64) + layer.epsilon))
        shift = layer.beta.astype(np.float64) - scale * layer.running_mean.astype(np.float64)
        return x * scale[:, None, None] + shift[:, None, None]
    if k == "maxpool2d":
        return _pool_batch(x, layer, np.max)
    if k == "avgpool2d":
        return _pool_batch(x, layer, np.mean)
    if k == "flatten":
        return x.reshape(x.shape[0], -1)
    raise ShapeError(f"unsupported layer kind {k!r}")


def forward_batch(model: AnnModel, inputs: np.ndarray) -> list[np.ndarray]:
    """Forward a batch ``[n, *input_shape]``; returns per-layer float32 outputs."""
    if tuple(inputs.shape[1:]) != tuple(model.input_shape):
        raise ShapeError(
            f"input shape {tuple(inputs.shape[1:])} does not match model "
            f"input_shape {tuple(model.input_shape)}")
    validate_shapes(model)
    x = np.asarray(inputs, dtype=np.float32)
    outputs = []
    for i, layer in enumerate(model.layers):
        x = np.asarray(_apply_layer_batch(layer, x), dtype=np.float32)
        if not np.isfinite(x).all():
            raise NonFiniteError(f"layer {i} ({layer.kind}) produced non-finite values")
        outputs.append(x)
    return outputs


def forward_ann(model: AnnModel, input: np.ndarray) -> list[np.ndarray]:
    """Reference forward pass for a single sample.

    Returns the post-activation output of every layer, in layer order.
    This is the oracle every SNN result is compared against.
    """
    x = np.asarray(input, dtype=np.float32)
    if tuple(x.shape) != tuple(model.input_shape):
        raise ShapeError(
            f"input shape {tuple(x.shape)} does not match model input_shape "
            f"{tuple(model.input_shape)}")
    return [out[0] for out in forward_batch(model, x[None])]
