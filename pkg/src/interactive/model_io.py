"""Model files and the seeded random-model generator.

File layout (format ``interactive-model/1``):

  line 1   magic: ``interactive-model/1``
  line 2   decimal byte length of the JSON header that follows
  then     the UTF-8 JSON header document, then one ``\\n``
  then     the weight blob: per layer in header order, kernel then bias,
           little-endian float32, kernel scalars in (kw, kh, d_in, d_out)
           order with kw-major nesting.

Weights are stored as float32 and widened losslessly to float64 on load;
``save_model`` rounds to the nearest float32, so specs built by
``generate_model`` (which quantizes at creation) round-trip bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .net import ConvLayer, NetworkSpec, PoolLayer

MAGIC = "interactive-model/1"


class ModelFormatError(ValueError):
    """Raised for malformed, truncated or unsupported model files."""


def save_model(spec: NetworkSpec, path) -> None:
    layers = []
    payload = []
    for name, layer in zip(spec.names, spec.layers):
        if isinstance(layer, ConvLayer):
            layers.append(
                {
                    "name": name,
                    "kind": "conv",
                    "kernel_shape": list(layer.kernel.shape),
                    "stride": layer.stride,
                    "padding": layer.padding,
                    "relu": layer.apply_relu,
                }
            )
            payload.append(layer.kernel.astype("<f4").tobytes())
            payload.append(layer.bias.astype("<f4").tobytes())
        elif isinstance(layer, PoolLayer):
            layers.append(
                {
                    "name": name,
                    "kind": "pool",
                    "window": layer.window,
                    "stride": layer.stride,
                    "mode": layer.mode,
                }
            )
        else:
            raise TypeError(f"cannot serialize layer of type {type(layer).__name__}")
    header = {"input_shape": list(spec.input_shape), "layers": layers}
    header_bytes = json.dumps(header, indent=1, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC}\n{len(header_bytes)}\n".encode("ascii"))
        fh.write(header_bytes)
        fh.write(b"\n")
        for chunk in payload:
            fh.write(chunk)


def load_model(path) -> NetworkSpec:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, sep, rest = raw.partition(b"\n")
    if not sep or magic.decode("ascii", errors="replace") != MAGIC:
        raise ModelFormatError(
            f"unsupported model format {magic[:40]!r}; this build reads {MAGIC!r}"
        )
    length_line, sep, rest = rest.partition(b"\n")
    try:
        header_len = int(length_line)
    except ValueError:
        raise ModelFormatError("malformed header length line") from None
    if not sep or header_len < 0 or len(rest) < header_len + 1:
        raise ModelFormatError("truncated header")
    try:
        header = json.loads(rest[:header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"malformed header JSON: {exc}") from None
    if rest[header_len : header_len + 1] != b"\n":
        raise ModelFormatError("missing separator after header")
    blob = rest[header_len + 1 :]

    try:
        input_shape = tuple(int(v) for v in header["input_shape"])
        descriptors = header["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed header fields: {exc}") from None

    expected = 0
    for desc in descriptors:
        if desc.get("kind") == "conv":
            kw, kh, din, dout = (int(v) for v in desc["kernel_shape"])
            expected += kw * kh * din * dout + dout
    if len(blob) != 4 * expected:
        raise ModelFormatError(
            f"weight blob length mismatch: header implies {4 * expected} bytes, file has {len(blob)}"
        )

    layers = []
    names = []
    offset = 0
    scalars = np.frombuffer(blob, dtype="<f4")
    for desc in descriptors:
        names.append(str(desc["name"]))
        kind = desc.get("kind")
        if kind == "conv":
            kw, kh, din, dout = (int(v) for v in desc["kernel_shape"])
            n = kw * kh * din * dout
            kernel = scalars[offset : offset + n].astype(np.float64).reshape(kw, kh, din, dout)
            offset += n
            bias = scalars[offset : offset + dout].astype(np.float64)
            offset += dout
            layers.append(
                ConvLayer(
                    kernel=kernel,
                    bias=bias,
                    stride=int(desc["stride"]),
                    padding=int(desc["padding"]),
                    apply_relu=bool(desc["relu"]),
                )
            )
        elif kind == "pool":
            layers.append(
                PoolLayer(window=int(desc["window"]), stride=int(desc["stride"]), mode=str(desc["mode"]))
            )
        else:
            raise ModelFormatError(f"unknown layer kind {kind!r}")
    return NetworkSpec(layers=tuple(layers), input_shape=input_shape, names=tuple(names))


@dataclass(frozen=True)
class ConvBlueprint:
    name: str
    kernel: int
    out_channels: int
    stride: int = 1
    padding: int = 1
    relu: bool = True
    full_extent: bool = False  # fully-connected layer: kernel spans the whole incoming map


@dataclass(frozen=True)
class PoolBlueprint:
    name: str
    window: int = 2
    stride: int = 2
    mode: str = "max"


@dataclass(frozen=True)
class ArchTemplate:
    input_shape: tuple[int, int, int]
    blueprint: tuple


ARCHITECTURES: dict[str, ArchTemplate] = {
    "tiny-2conv": ArchTemplate(
        input_shape=(8, 8, 3),
        blueprint=(
            ConvBlueprint("conv-1", kernel=3, out_channels=4),
            PoolBlueprint("pool-1"),
            ConvBlueprint("conv-2", kernel=3, out_channels=8),
        ),
    ),
    "tiny-3conv": ArchTemplate(
        input_shape=(8, 8, 3),
        blueprint=(
            ConvBlueprint("conv-1-1", kernel=3, out_channels=4),
            ConvBlueprint("conv-1-2", kernel=3, out_channels=4),
            PoolBlueprint("pool-1"),
            ConvBlueprint("conv-2", kernel=3, out_channels=8),
        ),
    ),
    "toy-cnn": ArchTemplate(
        input_shape=(16, 16, 3),
        blueprint=(
            ConvBlueprint("conv-1", kernel=3, out_channels=6),
            PoolBlueprint("pool-1"),
            ConvBlueprint("conv-2", kernel=3, out_channels=12),
            PoolBlueprint("pool-2"),
            ConvBlueprint("conv-3", kernel=3, out_channels=16),
        ),
    ),
    "tiny-fc": ArchTemplate(
        input_shape=(8, 8, 3),
        blueprint=(
            ConvBlueprint("conv-1", kernel=3, out_channels=4),
            PoolBlueprint("pool-1"),
            ConvBlueprint("fc-1", kernel=0, out_channels=10, padding=0, full_extent=True),
        ),
    ),
}

BIAS_INIT = float(np.float32(0.1))  # small positive so random inputs light up ReLUs


def _layer_rng(seed: int, layer_index: int) -> np.random.Generator:
    # PCG64 with a per-layer SeedSequence substream: reproducible across platforms.
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, layer_index])))


def generate_model(
    arch: str, seed: int, input_shape: tuple[int, int, int] | None = None
) -> NetworkSpec:
    """Deterministic random network from a named template.

    Kernel weights are standard normal draws scaled by 1/sqrt(fan-in) and
    quantized to float32 so the spec round-trips the model file exactly;
    biases are the constant ``BIAS_INIT``.
    """
    if arch not in ARCHITECTURES:
        raise KeyError(f"unknown architecture {arch!r}; available: {', '.join(sorted(ARCHITECTURES))}")
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    template = ARCHITECTURES[arch]
    shape = tuple(input_shape) if input_shape is not None else template.input_shape
    layers = []
    names = []
    w, h, d_in = shape
    for i, bp in enumerate(template.blueprint):
        names.append(bp.name)
        if isinstance(bp, ConvBlueprint):
            kw, kh = (w, h) if bp.full_extent else (bp.kernel, bp.kernel)
            padding = 0 if bp.full_extent else bp.padding
            rng = _layer_rng(seed, i)
            fan_in = kw * kh * d_in
            kernel = rng.standard_normal((kw, kh, d_in, bp.out_channels))
            kernel = (kernel / math.sqrt(fan_in)).astype(np.float32).astype(np.float64)
            bias = np.full(bp.out_channels, BIAS_INIT)
            layers.append(
                ConvLayer(
                    kernel=kernel, bias=bias, stride=bp.stride, padding=padding, apply_relu=bp.relu
                )
            )
            w = (w + 2 * padding - kw) // bp.stride + 1
            h = (h + 2 * padding - kh) // bp.stride + 1
            d_in = bp.out_channels
        else:
            layers.append(PoolLayer(window=bp.window, stride=bp.stride, mode=bp.mode))
            w = (w - bp.window) // bp.stride + 1
            h = (h - bp.window) // bp.stride + 1
    return NetworkSpec(layers=tuple(layers), input_shape=shape, names=tuple(names))
