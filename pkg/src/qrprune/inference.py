"""Forward execution, layer taps and per-input-channel contribution vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .model_graph import (
    BottleneckUnit,
    ChannelAffine,
    ChannelSample,
    Conv2D,
    Dense,
    Flatten,
    Graph,
    Pool,
    ReLU,
)
from .tensor_core import (
    DTYPE,
    ConvParams,
    add,
    channel_affine,
    channel_gather,
    conv2d,
    extract_patches,
    pool2d,
    relu,
    tensor3,
    tensor4,
)


@dataclass(frozen=True)
class TapRequest:
    layer_id: str
    what: str = "layer_input"  # or "layer_output"

    def __post_init__(self):
        if self.what not in ("layer_input", "layer_output"):
            raise ValueError(f"unknown tap kind {self.what!r}")


class _TapsDone(Exception):
    pass


class _Recorder:
    def __init__(self, taps):
        self.wanted = {(t.layer_id, t.what) for t in taps}
        self.seen = {}

    def __call__(self, layer_id, what, value):
        key = (layer_id, what)
        if key in self.wanted:
            self.seen[key] = value
            if len(self.seen) == len(self.wanted):
                raise _TapsDone


def _conv(conv: Conv2D, x, rec, layer_id):
    rec(layer_id, "layer_input", x)
    y = conv2d(x, conv.kernel, conv.bias, conv.params)
    rec(layer_id, "layer_output", y)
    return y


def _maybe_affine(bn, x, rec, layer_id):
    if bn is None:
        return x
    rec(layer_id, "layer_input", x)
    y = channel_affine(x, bn.scale, bn.shift)
    rec(layer_id, "layer_output", y)
    return y


def _unit(unit: BottleneckUnit, x, rec):
    u = unit.name
    rec(u, "layer_input", x)
    y = _conv(unit.conv1, x, rec, f"{u}/conv1")
    y = relu(_maybe_affine(unit.bn1, y, rec, f"{u}/bn1"))
    y = _conv(unit.conv2, y, rec, f"{u}/conv2")
    y = relu(_maybe_affine(unit.bn2, y, rec, f"{u}/bn2"))
    y = _conv(unit.conv3, y, rec, f"{u}/conv3")
    y = _maybe_affine(unit.bn3, y, rec, f"{u}/bn3")
    if unit.is_projection:
        s = _conv(unit.projection, x, rec, f"{u}/projection")
        s = _maybe_affine(unit.projection_bn, s, rec, f"{u}/projection_bn")
    elif unit.shortcut_sample is not None:
        s = channel_gather(x, unit.shortcut_sample)
    else:
        s = x
    try:
        y = add(y, s)
    except ShapeError as exc:
        raise ValidationError([f"{u}: {exc}"]) from exc
    if unit.post_add_relu:
        y = relu(y)
    rec(u, "layer_output", y)
    return y


def _run(graph: Graph, x, rec):
    x = np.asarray(x, dtype=DTYPE)
    if x.shape != graph.input_shape:
        raise ValidationError([f"input shape {x.shape} != graph input {graph.input_shape}"])
    for node in graph.nodes:
        if isinstance(node, BottleneckUnit):
            x = _unit(node, x, rec)
            continue
        rec(node.name, "layer_input", x)
        try:
            if isinstance(node, Conv2D):
                x = conv2d(x, node.kernel, node.bias, node.params)
            elif isinstance(node, ReLU):
                x = np.maximum(x, DTYPE(0))
            elif isinstance(node, Pool):
                x = pool2d(x, node.kind, node.window, node.stride, node.padding)
            elif isinstance(node, ChannelAffine):
                x = channel_affine(x, node.scale, node.shift)
            elif isinstance(node, ChannelSample):
                x = channel_gather(x, node.indices)
            elif isinstance(node, Flatten):
                x = np.ascontiguousarray(x).reshape(-1)
            elif isinstance(node, Dense):
                if x.ndim != 1 or x.size != node.weights.shape[1]:
                    raise ShapeError(f"dense input size {x.size} != {node.weights.shape[1]}")
                z = node.weights.astype(np.float64) @ x.astype(np.float64)
                if node.bias is not None:
                    z += node.bias
                x = z.astype(DTYPE)
            else:
                raise ValidationError([f"{node.name}: unknown node type {type(node).__name__}"])
        except ShapeError as exc:
            raise ValidationError([f"{node.name}: {exc}"]) from exc
        rec(node.name, "layer_output", x)
    return x


def forward(graph: Graph, x) -> np.ndarray:
    """Run one image (H, W, C) through the graph; returns the final tensor or logits."""
    return _run(graph, x, _Recorder([]))


def forward_to_layer(graph: Graph, x, tap: TapRequest) -> np.ndarray:
    return forward_taps(graph, x, [tap])[0]


def forward_taps(graph: Graph, x, taps) -> list:
    """Tensors at several taps from one pass; execution stops once all are seen."""
    taps = list(taps)
    for t in taps:
        graph.layer(t.layer_id)  # KeyError for unknown ids
    rec = _Recorder(taps)
    try:
        _run(graph, x, rec)
    except _TapsDone:
        pass
    missing = [t for t in taps if (t.layer_id, t.what) not in rec.seen]
    if missing:
        raise KeyError(f"taps never reached: {missing}")
    return [rec.seen[(t.layer_id, t.what)] for t in taps]


def contributions_at(x, kernel, params: ConvParams, positions, channels):
    """Contribution vectors for many output sites of one layer.

    ``positions`` is an (n, 2) array of output (h, w); ``channels`` the n
    output channels.  Returns ``(A, B)`` where ``A[:, i]`` holds the per-input-
    channel partial sums of site i and ``B[i]`` the full (bias-free) output,
    both float64.  ``B`` comes from one flat dot product per site rather
    than from summing ``A``.
    """
    x = tensor3(x)
    kernel = tensor4(kernel)
    kh, kw, cin, cout = kernel.shape
    if x.shape[2] != cin:
        raise ShapeError(f"input has {x.shape[2]} channels but kernel expects {cin}")
    patches = extract_patches(x, kh, kw, params)  # (Ho, Wo, KH, KW, C)
    ho, wo = patches.shape[:2]
    positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    channels = np.asarray(channels, dtype=np.int64).reshape(-1)
    if positions.shape[0] != channels.shape[0]:
        raise ValueError("positions and channels must have the same length")
    if (
        positions.size
        and (positions[:, 0].min() < 0 or positions[:, 0].max() >= ho
             or positions[:, 1].min() < 0 or positions[:, 1].max() >= wo)
    ):
        raise IndexError(f"output position outside {ho}x{wo}")
    if channels.size and (channels.min() < 0 or channels.max() >= cout):
        raise IndexError(f"output channel outside [0, {cout})")
    p = patches[positions[:, 0], positions[:, 1]].astype(np.float64)  # (n, KH, KW, C)
    k = np.moveaxis(kernel, 3, 0)[channels].astype(np.float64)  # (n, KH, KW, C)
    prod = p * k
    A = prod.sum(axis=(1, 2)).T
    n = prod.shape[0]
    B = np.einsum("ij,ij->i", p.reshape(n, -1), k.reshape(n, -1))
    return np.ascontiguousarray(A), B


def contribution_vector(x, kernel, params: ConvParams, pos, j) -> np.ndarray:
    """Per-input-channel partial sums of output element (pos, j); bias excluded."""
    A, _ = contributions_at(x, kernel, params, [pos], [j])
    return A[:, 0]
