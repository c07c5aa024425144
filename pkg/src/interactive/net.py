"""Layer descriptors, the sequential network and its forward pass.

Index convention used across the package: a network is a list of L layer
descriptors; descriptor ``i`` (0-based) consumes activation ``X(i)`` and
produces ``X(i+1)``.  ``X(0)`` is the input tensor, so activation indices
run 0..L.  Fully-connected layers are expressed as conv layers whose
kernel spans the full spatial extent, so there is a single code path.

Convolution is computed directly (windowed sums, not matrix reshaping):
at desk scale clarity and checkability beat speed.  Zero padding
contributes zero terms only; padded positions are not neurons and never
appear in connectivity sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor3, _as_finite_f64


@dataclass(frozen=True, eq=False)
class ConvLayer:
    """Convolution with optional fused ReLU.

    ``kernel`` is indexed (kw, kh, d_in, d_out), kw-major; ``bias`` has one
    entry per output channel.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    apply_relu: bool = True

    def __post_init__(self):
        k = _as_finite_f64(self.kernel, "conv kernel")
        if k.ndim != 4:
            raise ShapeError(f"conv kernel must be rank 4 (kw, kh, d_in, d_out), got rank {k.ndim}")
        b = _as_finite_f64(self.bias, "conv bias").reshape(-1)
        if b.size != k.shape[3]:
            raise ShapeError(f"bias length {b.size} != d_out {k.shape[3]}")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")
        k = k.copy()
        k.flags.writeable = False
        b = b.copy()
        b.flags.writeable = False
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)

    @property
    def d_in(self) -> int:
        return self.kernel.shape[2]

    @property
    def d_out(self) -> int:
        return self.kernel.shape[3]


@dataclass(frozen=True)
class PoolLayer:
    """Spatial max or average pooling; no padding, no parameters."""

    window: int
    stride: int
    mode: str = "max"

    def __post_init__(self):
        if self.window < 1:
            raise ShapeError(f"pool window must be >= 1, got {self.window}")
        if self.stride < 1:
            raise ShapeError(f"pool stride must be >= 1, got {self.stride}")
        if self.mode not in ("max", "average"):
            raise ShapeError(f"pool mode must be 'max' or 'average', got {self.mode!r}")


def _out_dim(size: int, extent: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - extent) // stride + 1


@dataclass(frozen=True)
class NetworkSpec:
    """An ordered stack of layers with a fixed input shape and unique names."""

    layers: tuple
    input_shape: tuple[int, int, int]
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if len(self.names) != len(self.layers):
            raise ShapeError(f"{len(self.names)} names for {len(self.layers)} layers")
        if len(set(self.names)) != len(self.names):
            raise ShapeError("layer names must be unique")
        if len(self.input_shape) != 3 or any(v < 1 for v in self.input_shape):
            raise ShapeError(f"bad input shape {self.input_shape}")
        infer_shapes(self)  # raises on any impossible layer

    def layer_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no layer named {name!r}; layers are {', '.join(self.names)}") from None


def infer_shapes(spec: NetworkSpec) -> list[tuple[int, int, int]]:
    """Output shape of every layer in order; rejects shapes with dims < 1."""
    shapes = []
    w, h, d = spec.input_shape
    for i, layer in enumerate(spec.layers):
        name = spec.names[i]
        if isinstance(layer, ConvLayer):
            kw, kh, din, dout = layer.kernel.shape
            if din != d:
                raise ShapeError(f"layer {name}: expects {din} input channels, gets {d}")
            ow = _out_dim(w, kw, layer.stride, layer.padding)
            oh = _out_dim(h, kh, layer.stride, layer.padding)
            if ow < 1 or oh < 1:
                raise ShapeError(
                    f"layer {name}: kernel {kw}x{kh} (stride {layer.stride}, padding "
                    f"{layer.padding}) does not fit input {w}x{h}"
                )
            w, h, d = ow, oh, dout
        else:
            ow = _out_dim(w, layer.window, layer.stride, 0)
            oh = _out_dim(h, layer.window, layer.stride, 0)
            if ow < 1 or oh < 1:
                raise ShapeError(f"layer {name}: pool window {layer.window} exceeds input {w}x{h}")
            w, h = ow, oh
        shapes.append((w, h, d))
    return shapes


@dataclass(frozen=True)
class ForwardTrace:
    """Everything one forward pass produced.

    ``activations[i]`` is X(i+1), post-ReLU where the layer applies one;
    ``pre_activations[i]`` is the pre-ReLU tensor for conv layers and None
    for pool layers.  ``activation(j)`` resolves activation index j, with
    j = 0 being the input.
    """

    input: Tensor3
    activations: tuple
    pre_activations: tuple

    def activation(self, index: int) -> Tensor3:
        if index == 0:
            return self.input
        return self.activations[index - 1]

    def __len__(self) -> int:
        return len(self.activations)


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((padding, padding), (padding, padding), (0, 0)))


def apply_conv(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    """Pre-activation conv output for a (W, H, D) array."""
    kw, kh, din, dout = layer.kernel.shape
    s = layer.stride
    ow = _out_dim(x.shape[0], kw, s, layer.padding)
    oh = _out_dim(x.shape[1], kh, s, layer.padding)
    xp = _pad(x, layer.padding)
    out = np.empty((ow, oh, dout))
    for wo in range(ow):
        for ho in range(oh):
            window = xp[wo * s : wo * s + kw, ho * s : ho * s + kh, :]
            out[wo, ho, :] = np.tensordot(window, layer.kernel, axes=3)
    out += layer.bias
    return out


def apply_pool(layer: PoolLayer, x: np.ndarray) -> np.ndarray:
    k, s = layer.window, layer.stride
    ow = _out_dim(x.shape[0], k, s, 0)
    oh = _out_dim(x.shape[1], k, s, 0)
    out = np.empty((ow, oh, x.shape[2]))
    for wo in range(ow):
        for ho in range(oh):
            window = x[wo * s : wo * s + k, ho * s : ho * s + k, :]
            if layer.mode == "max":
                out[wo, ho, :] = window.max(axis=(0, 1))
            else:
                out[wo, ho, :] = window.mean(axis=(0, 1))
    return out


def forward(spec: NetworkSpec, x0: Tensor3) -> ForwardTrace:
    """Run the network, caching every pre- and post-activation tensor."""
    if x0.shape != spec.input_shape:
        raise ShapeError(f"input shape {x0.shape} != network input {spec.input_shape}")
    activations = []
    pre_activations = []
    x = x0.array
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, ConvLayer):
            pre = apply_conv(layer, x)
            post = np.maximum(pre, 0.0) if layer.apply_relu else pre
            try:
                pre_activations.append(Tensor3.from_array(pre))
                act = Tensor3.from_array(post)
            except ValueError as exc:
                raise ValueError(f"layer {spec.names[i]}: {exc}") from None
        else:
            pre_activations.append(None)
            act = Tensor3.from_array(apply_pool(layer, x))
        activations.append(act)
        x = act.array
    return ForwardTrace(input=x0, activations=tuple(activations), pre_activations=tuple(pre_activations))


@dataclass(frozen=True)
class ConvConnectivity:
    """Connectivity pattern of one conv layer: who feeds whom.

    For the layer consuming X(t) and producing X(t+1), ``u_set`` lists the
    downstream consumers of an input neuron and ``v_set`` the upstream
    sources of an output neuron.  Padded positions are skipped.
    """

    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    kernel_w: int
    kernel_h: int
    stride: int
    padding: int

    def _covering(self, pos: int, extent: int, out_size: int) -> range:
        lo = math.ceil((pos + self.padding - extent + 1) / self.stride)
        hi = math.floor((pos + self.padding) / self.stride)
        return range(max(lo, 0), min(hi, out_size - 1) + 1)

    def u_set(self, w: int, h: int, d: int) -> list[tuple[int, int, int]]:
        """Downstream (t+1)-layer neurons reading input neuron (w, h, d)."""
        self._check_in(w, h, d)
        out = []
        for wp in self._covering(w, self.kernel_w, self.out_shape[0]):
            for hp in self._covering(h, self.kernel_h, self.out_shape[1]):
                for dp in range(self.out_shape[2]):
                    out.append((wp, hp, dp))
        return out

    def v_set(self, wp: int, hp: int, dp: int) -> list[tuple[int, int, int]]:
        """Upstream t-layer neurons feeding output neuron (wp, hp, dp)."""
        self._check_out(wp, hp, dp)
        out = []
        for kw in range(self.kernel_w):
            w = wp * self.stride + kw - self.padding
            if not 0 <= w < self.in_shape[0]:
                continue
            for kh in range(self.kernel_h):
                h = hp * self.stride + kh - self.padding
                if not 0 <= h < self.in_shape[1]:
                    continue
                for d in range(self.in_shape[2]):
                    out.append((w, h, d))
        return out

    def connected(self, w: int, h: int, d: int, wp: int, hp: int, dp: int) -> bool:
        self._check_in(w, h, d)
        self._check_out(wp, hp, dp)
        kw = w - wp * self.stride + self.padding
        kh = h - hp * self.stride + self.padding
        return 0 <= kw < self.kernel_w and 0 <= kh < self.kernel_h

    def kernel_offset(self, w: int, h: int, wp: int, hp: int) -> tuple[int, int]:
        """(kw, kh) kernel cell linking input (w, h) to output (wp, hp)."""
        return (w - wp * self.stride + self.padding, h - hp * self.stride + self.padding)

    def connection_count(self) -> int:
        """Total number of real (unpadded) connections through this layer."""
        total = 0
        for wp in range(self.out_shape[0]):
            wn = sum(
                1
                for kw in range(self.kernel_w)
                if 0 <= wp * self.stride + kw - self.padding < self.in_shape[0]
            )
            for hp in range(self.out_shape[1]):
                hn = sum(
                    1
                    for kh in range(self.kernel_h)
                    if 0 <= hp * self.stride + kh - self.padding < self.in_shape[1]
                )
                total += wn * hn * self.in_shape[2] * self.out_shape[2]
        return total

    def _check_in(self, w, h, d):
        if not (0 <= w < self.in_shape[0] and 0 <= h < self.in_shape[1] and 0 <= d < self.in_shape[2]):
            raise IndexError(f"input neuron ({w},{h},{d}) outside {self.in_shape}")

    def _check_out(self, wp, hp, dp):
        if not (
            0 <= wp < self.out_shape[0] and 0 <= hp < self.out_shape[1] and 0 <= dp < self.out_shape[2]
        ):
            raise IndexError(f"output neuron ({wp},{hp},{dp}) outside {self.out_shape}")


def receptive_sets(spec: NetworkSpec, t: int) -> ConvConnectivity:
    """Connectivity of the conv layer consuming X(t), i.e. descriptor t."""
    if not 0 <= t < len(spec.layers):
        raise IndexError(f"layer index {t} outside 0..{len(spec.layers) - 1}")
    layer = spec.layers[t]
    if not isinstance(layer, ConvLayer):
        raise ShapeError(f"layer {spec.names[t]} is not a conv layer")
    shapes = infer_shapes(spec)
    in_shape = spec.input_shape if t == 0 else shapes[t - 1]
    return ConvConnectivity(
        in_shape=in_shape,
        out_shape=shapes[t],
        kernel_w=layer.kernel.shape[0],
        kernel_h=layer.kernel.shape[1],
        stride=layer.stride,
        padding=layer.padding,
    )
