"""CNN models as validated, serializable, rewritable node lists.

A :class:`Graph` is a pipeline of layer nodes; a :class:`BottleneckUnit`
node packs the conv1-conv2-conv3 path, its shortcut and the final add.
Layers inside a unit are addressed as ``"<unit>/<slot>"``, e.g.
``"res2a/conv1"`` or ``"res2a/projection"``.
"""
from __future__ import annotations

import copy
import json
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    ChecksumError,
    MissingBlobError,
    RewriteError,
    ShapeInconsistencyError,
    UnknownLayerError,
    ValidationError,
)
from .tensor_core import DTYPE, ConvParams, check_channel_indices

FORMAT_TAG = "qrprune-model"
FORMAT_VERSION = 1


def _f32(a):
    return None if a is None else np.ascontiguousarray(a, dtype=DTYPE)


@dataclass
class Conv2D:
    name: str
    kernel: np.ndarray
    bias: Optional[np.ndarray] = None
    params: ConvParams = ConvParams()

    def __post_init__(self):
        self.kernel = _f32(self.kernel)
        self.bias = _f32(self.bias)

    @property
    def cin(self):
        return self.kernel.shape[2]

    @property
    def cout(self):
        return self.kernel.shape[3]


@dataclass
class ReLU:
    name: str


@dataclass
class Pool:
    name: str
    kind: str
    window: int
    stride: int
    padding: int = 0


@dataclass
class ChannelAffine:
    """Per-channel ``x * scale + shift`` (an inference-mode batch norm)."""

    name: str
    scale: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        self.scale = _f32(self.scale)
        self.shift = _f32(self.shift)


@dataclass
class Dense:
    name: str
    weights: np.ndarray  # (out, in)
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = _f32(self.weights)
        self.bias = _f32(self.bias)


@dataclass
class Flatten:
    name: str


@dataclass
class ChannelSample:
    name: str
    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)


@dataclass
class BottleneckUnit:
    name: str
    conv1: Conv2D
    conv2: Conv2D
    conv3: Conv2D
    bn1: Optional[ChannelAffine] = None
    bn2: Optional[ChannelAffine] = None
    bn3: Optional[ChannelAffine] = None
    projection: Optional[Conv2D] = None
    projection_bn: Optional[ChannelAffine] = None
    shortcut_sample: Optional[np.ndarray] = None
    post_add_relu: bool = True

    def __post_init__(self):
        if self.shortcut_sample is not None:
            self.shortcut_sample = np.asarray(self.shortcut_sample, dtype=np.int64)

    @property
    def is_projection(self):
        return self.projection is not None

    def conv_slots(self):
        slots = ["conv1", "conv2", "conv3"]
        return slots + ["projection"] if self.is_projection else slots


Layer = Union[Conv2D, ReLU, Pool, ChannelAffine, Dense, Flatten, ChannelSample]
Node = Union[Layer, BottleneckUnit]

# walking back from a consumer passes through these without changing channels
_CHANNELWISE = (ReLU, Pool, ChannelAffine)


@dataclass
class Graph:
    name: str
    input_shape: tuple
    nodes: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)

    def copy(self) -> "Graph":
        return copy.deepcopy(self)

    def node_index(self, node_name: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.name == node_name:
                return i
        raise KeyError(f"no node named {node_name!r} in graph {self.name!r}")

    def layer(self, layer_id: str):
        """Look up a top-level layer or a ``unit/slot`` layer."""
        unit_name, _, slot = layer_id.partition("/")
        node = self.nodes[self.node_index(unit_name)]
        if not slot:
            return node
        if not isinstance(node, BottleneckUnit) or slot not in _UNIT_SLOTS:
            raise KeyError(f"no layer {layer_id!r} in graph {self.name!r}")
        found = getattr(node, slot)
        if found is None:
            raise KeyError(f"unit {unit_name!r} has no {slot}")
        return found

    def conv_ids(self):
        """Ids of every Conv2D in execution order."""
        ids = []
        for node in self.nodes:
            if isinstance(node, Conv2D):
                ids.append(node.name)
            elif isinstance(node, BottleneckUnit):
                ids.extend(f"{node.name}/{slot}" for slot in node.conv_slots())
        return ids

    def units(self):
        return [n for n in self.nodes if isinstance(n, BottleneckUnit)]


_UNIT_SLOTS = ("conv1", "conv2", "conv3", "bn1", "bn2", "bn3", "projection", "projection_bn")


# ---------------------------------------------------------------- validation


@dataclass
class _Shape:
    hwc: Optional[tuple] = None  # spatial tensor
    vec: Optional[int] = None  # after Flatten/Dense

    def __str__(self):
        return f"{self.hwc}" if self.hwc is not None else f"vector[{self.vec}]"


def _conv_out(conv: Conv2D, hwc, where, violations):
    h, w, c = hwc
    if conv.cin != c:
        violations.append(f"{where}: expects {conv.cin} input channels, receives {c}")
    if conv.bias is not None and conv.bias.shape != (conv.cout,):
        violations.append(f"{where}: bias length {conv.bias.shape[0]} != cout {conv.cout}")
    kh, kw = conv.kernel.shape[:2]
    ho, wo = conv.params.output_hw(h, w, kh, kw)
    if ho < 1 or wo < 1:
        violations.append(f"{where}: output spatial size {ho}x{wo} < 1")
        ho, wo = max(ho, 1), max(wo, 1)
    return (ho, wo, conv.cout)


def _affine_check(bn, c, where, violations):
    if bn is not None and (bn.scale.shape != (c,) or bn.shift.shape != (c,)):
        violations.append(f"{where}: affine length {bn.scale.shape[0]} != {c} channels")


def _sample_check(indices, c, where, violations):
    idx = np.asarray(indices)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= c or np.unique(idx).size != idx.size:
        violations.append(f"{where}: channel sample {idx.tolist()} invalid for {c} channels")
        return False
    return True


def _unit_out(unit: BottleneckUnit, hwc, violations):
    u = unit.name
    s = _conv_out(unit.conv1, hwc, f"{u}/conv1", violations)
    _affine_check(unit.bn1, s[2], f"{u}/bn1", violations)
    s = _conv_out(unit.conv2, s, f"{u}/conv2", violations)
    _affine_check(unit.bn2, s[2], f"{u}/bn2", violations)
    s = _conv_out(unit.conv3, s, f"{u}/conv3", violations)
    _affine_check(unit.bn3, s[2], f"{u}/bn3", violations)
    if unit.is_projection:
        if unit.shortcut_sample is not None:
            violations.append(f"{u}: channel sample on a projection shortcut")
        short = _conv_out(unit.projection, hwc, f"{u}/projection", violations)
        _affine_check(unit.projection_bn, short[2], f"{u}/projection_bn", violations)
    else:
        c = hwc[2]
        if unit.shortcut_sample is not None and _sample_check(
            unit.shortcut_sample, c, f"{u}/shortcut", violations
        ):
            c = len(unit.shortcut_sample)
        short = (hwc[0], hwc[1], c)
    if short != s:
        violations.append(
            f"{u}: misaligned add, conv path gives {s} but shortcut gives {short}"
        )
    return s


def infer_shapes(graph: Graph):
    """Walk the graph, returning ``(per-node output shapes, violations)``."""
    violations: list[str] = []
    shapes = []
    if not graph.nodes:
        violations.append(f"graph {graph.name!r} has no nodes")
    if len(graph.input_shape) != 3 or min(graph.input_shape) < 1:
        violations.append(f"input shape {graph.input_shape} is not a positive (H, W, C)")
        return shapes, violations
    cur = _Shape(hwc=graph.input_shape)
    for node in graph.nodes:
        where = node.name
        if cur.hwc is None and not isinstance(node, (Dense, ReLU)):
            violations.append(f"{where}: {type(node).__name__} cannot follow a vector")
            shapes.append(cur)
            continue
        if isinstance(node, Conv2D):
            cur = _Shape(hwc=_conv_out(node, cur.hwc, where, violations))
        elif isinstance(node, BottleneckUnit):
            cur = _Shape(hwc=_unit_out(node, cur.hwc, violations))
        elif isinstance(node, ReLU):
            pass
        elif isinstance(node, Pool):
            h, w, c = cur.hwc
            if node.window > h + 2 * node.padding or node.window > w + 2 * node.padding:
                violations.append(f"{where}: pool window {node.window} exceeds input {h}x{w}")
            else:
                p = ConvParams(node.stride, node.padding)
                cur = _Shape(hwc=(*p.output_hw(h, w, node.window, node.window), c))
        elif isinstance(node, ChannelAffine):
            _affine_check(node, cur.hwc[2], where, violations)
        elif isinstance(node, ChannelSample):
            if _sample_check(node.indices, cur.hwc[2], where, violations):
                cur = _Shape(hwc=(cur.hwc[0], cur.hwc[1], len(node.indices)))
        elif isinstance(node, Flatten):
            cur = _Shape(vec=int(np.prod(cur.hwc)))
        elif isinstance(node, Dense):
            n_in = cur.vec if cur.vec is not None else None
            if n_in is None:
                violations.append(f"{where}: dense layer needs a Flatten before it")
            elif node.weights.shape[1] != n_in:
                violations.append(
                    f"{where}: expects {node.weights.shape[1]} inputs, receives {n_in}"
                )
            if node.bias is not None and node.bias.shape != (node.weights.shape[0],):
                violations.append(f"{where}: bias length != {node.weights.shape[0]}")
            cur = _Shape(vec=node.weights.shape[0])
        else:
            violations.append(f"{where}: unknown node type {type(node).__name__}")
        shapes.append(cur)
    return shapes, violations


def validate_graph(graph: Graph) -> list[str]:
    return infer_shapes(graph)[1]


def require_valid(graph: Graph):
    violations = validate_graph(graph)
    if violations:
        raise ValidationError(violations)


# ---------------------------------------------------------------------- FLOPs


@dataclass
class LayerFlops:
    layer_id: str
    kind: str
    flops: int
    minor_ops: int = 0


@dataclass
class FlopsReport:
    layers: list
    total: int
    minor_total: int

    def by_id(self):
        return {entry.layer_id: entry.flops for entry in self.layers}


def _conv_flops(conv: Conv2D, out_hwc):
    kh, kw, cin, cout = conv.kernel.shape
    return out_hwc[0] * out_hwc[1] * cout * kh * kw * cin


def count_flops(graph: Graph, input_shape=None) -> FlopsReport:
    """Multiply-accumulate count per weighted layer (one MAC == one FLOP)."""
    if input_shape is not None and tuple(input_shape) != graph.input_shape:
        graph = Graph(graph.name, tuple(input_shape), graph.nodes, graph.metadata)
    shapes, violations = infer_shapes(graph)
    if violations:
        raise ValidationError(violations)
    rows: list[LayerFlops] = []
    prev = _Shape(hwc=graph.input_shape)
    for node, out in zip(graph.nodes, shapes):
        if isinstance(node, Conv2D):
            rows.append(LayerFlops(node.name, "conv2d", _conv_flops(node, out.hwc)))
        elif isinstance(node, Dense):
            rows.append(LayerFlops(node.name, "dense", int(node.weights.size)))
        elif isinstance(node, BottleneckUnit):
            rows.extend(_unit_flops(node, prev.hwc))
        else:
            n_out = int(np.prod(out.hwc)) if out.hwc is not None else out.vec
            minor = n_out if isinstance(node, (ReLU, Pool, ChannelAffine)) else 0
            rows.append(LayerFlops(node.name, type(node).__name__.lower(), 0, minor))
        prev = out
    total = sum(r.flops for r in rows)
    return FlopsReport(rows, int(total), int(sum(r.minor_ops for r in rows)))


def _unit_flops(unit: BottleneckUnit, hwc):
    sink: list[str] = []
    rows = []
    s = hwc
    for slot in ("conv1", "conv2", "conv3"):
        conv = getattr(unit, slot)
        s = _conv_out(conv, s, slot, sink)
        rows.append(LayerFlops(f"{unit.name}/{slot}", "conv2d", _conv_flops(conv, s)))
    if unit.is_projection:
        ps = _conv_out(unit.projection, hwc, "projection", sink)
        rows.append(
            LayerFlops(f"{unit.name}/projection", "conv2d", _conv_flops(unit.projection, ps))
        )
    n_out = int(np.prod(s))
    rows.append(LayerFlops(f"{unit.name}/add", "add", 0, n_out * (2 if unit.post_add_relu else 1)))
    return rows


def count_params(graph: Graph) -> int:
    total = 0
    for arr in _iter_arrays(graph):
        total += arr.size
    return int(total)


def _iter_arrays(graph: Graph):
    for _, _, arr, _ in _tensor_slots(graph):
        yield arr


# ------------------------------------------------------------- serialization


def _layer_tensor_fields(layer):
    """(field, layout) pairs holding float arrays, in serialization order."""
    if isinstance(layer, Conv2D):
        return [("kernel", "hwio"), ("bias", "c")]
    if isinstance(layer, ChannelAffine):
        return [("scale", "c"), ("shift", "c")]
    if isinstance(layer, Dense):
        return [("weights", "oi"), ("bias", "c")]
    return []


def _tensor_slots(graph: Graph):
    """Yield (layer, field, array, layout) for every stored float array."""
    for node in graph.nodes:
        layers = [node]
        if isinstance(node, BottleneckUnit):
            layers = [getattr(node, s) for s in _UNIT_SLOTS if getattr(node, s) is not None]
        for layer in layers:
            for fname, layout in _layer_tensor_fields(layer):
                arr = getattr(layer, fname)
                if arr is not None:
                    yield layer, fname, arr, layout


class _BlobWriter:
    def __init__(self):
        self.chunks = []
        self.offset = 0

    def ref(self, arr, layout):
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        ref = {
            "dtype": "f32",
            "shape": list(arr.shape),
            "blob_offset": self.offset,
            "blob_len": len(data),
            "layout": layout,
        }
        self.chunks.append(data)
        self.offset += len(data)
        return ref


def _encode_layer(layer, blob: _BlobWriter):
    if isinstance(layer, Conv2D):
        out = {"kind": "conv2d", "name": layer.name, "stride": layer.params.stride,
               "padding": layer.params.padding}
    elif isinstance(layer, ReLU):
        out = {"kind": "relu", "name": layer.name}
    elif isinstance(layer, Pool):
        out = {"kind": "pool", "name": layer.name, "pool": layer.kind, "window": layer.window,
               "stride": layer.stride, "padding": layer.padding}
    elif isinstance(layer, ChannelAffine):
        out = {"kind": "channel_affine", "name": layer.name}
    elif isinstance(layer, Dense):
        out = {"kind": "dense", "name": layer.name}
    elif isinstance(layer, Flatten):
        out = {"kind": "flatten", "name": layer.name}
    elif isinstance(layer, ChannelSample):
        out = {"kind": "channel_sample", "name": layer.name,
               "indices": [int(i) for i in layer.indices]}
    else:
        raise TypeError(f"cannot serialize {type(layer).__name__}")
    for fname, layout in _layer_tensor_fields(layer):
        arr = getattr(layer, fname)
        out[fname] = None if arr is None else blob.ref(arr, layout)
    return out


def _encode_node(node, blob):
    if not isinstance(node, BottleneckUnit):
        return _encode_layer(node, blob)
    out = {"kind": "bottleneck", "name": node.name}
    for slot in _UNIT_SLOTS:
        layer = getattr(node, slot)
        out[slot] = None if layer is None else _encode_layer(layer, blob)
    sample = node.shortcut_sample
    out["shortcut_sample"] = None if sample is None else [int(i) for i in sample]
    out["post_add_relu"] = bool(node.post_add_relu)
    return out


def _paths(path):
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    return path, path.with_suffix(".bin")


def save_model(graph: Graph, path) -> Path:
    """Write ``<stem>.json`` + ``<stem>.bin``; returns the manifest path."""
    require_valid(graph)
    manifest_path, blob_path = _paths(path)
    blob = _BlobWriter()
    nodes = [_encode_node(n, blob) for n in graph.nodes]
    data = b"".join(blob.chunks)
    manifest = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "name": graph.name,
        "input_shape": list(graph.input_shape),
        "metadata": graph.metadata,
        "blob": blob_path.name,
        "blob_bytes": len(data),
        "blob_crc32": zlib.crc32(data),
        "nodes": nodes,
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(data)
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return manifest_path


def _read_ref(ref, blob: bytes, where):
    if ref is None:
        return None
    if ref.get("dtype") != "f32":
        raise ShapeInconsistencyError(f"{where}: unsupported dtype {ref.get('dtype')!r}")
    shape = tuple(int(d) for d in ref["shape"])
    need = int(np.prod(shape)) * 4
    off, length = int(ref["blob_offset"]), int(ref["blob_len"])
    if length != need:
        raise ShapeInconsistencyError(
            f"{where}: shape {shape} needs {need // 4} floats, blob holds {length / 4:g}"
        )
    if off < 0 or off + length > len(blob):
        raise ShapeInconsistencyError(f"{where}: blob range [{off}, {off + length}) out of bounds")
    return np.frombuffer(blob, dtype="<f4", count=need // 4, offset=off).astype(DTYPE).reshape(shape)


def _decode_layer(spec, blob):
    kind, name = spec.get("kind"), spec.get("name")
    arrays = lambda *names: [_read_ref(spec.get(n), blob, f"{name}.{n}") for n in names]
    if kind == "conv2d":
        kernel, bias = arrays("kernel", "bias")
        if kernel is None or kernel.ndim != 4:
            raise ShapeInconsistencyError(f"{name}: conv kernel must be rank 4")
        return Conv2D(name, kernel, bias, ConvParams(int(spec["stride"]), int(spec["padding"])))
    if kind == "relu":
        return ReLU(name)
    if kind == "pool":
        return Pool(name, spec["pool"], int(spec["window"]), int(spec["stride"]),
                    int(spec.get("padding", 0)))
    if kind == "channel_affine":
        return ChannelAffine(name, *arrays("scale", "shift"))
    if kind == "dense":
        weights, bias = arrays("weights", "bias")
        if weights is None or weights.ndim != 2:
            raise ShapeInconsistencyError(f"{name}: dense weights must be rank 2")
        return Dense(name, weights, bias)
    if kind == "flatten":
        return Flatten(name)
    if kind == "channel_sample":
        return ChannelSample(name, spec["indices"])
    raise UnknownLayerError(f"unknown layer kind {kind!r} for node {name!r}")


def _decode_node(spec, blob):
    if spec.get("kind") != "bottleneck":
        return _decode_layer(spec, blob)
    parts = {slot: None if spec.get(slot) is None else _decode_layer(spec[slot], blob)
             for slot in _UNIT_SLOTS}
    return BottleneckUnit(spec["name"], shortcut_sample=spec.get("shortcut_sample"),
                          post_add_relu=bool(spec.get("post_add_relu", True)), **parts)


def load_model(manifest_path) -> Graph:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT_TAG:
        raise UnknownLayerError(f"{manifest_path}: not a {FORMAT_TAG} manifest")
    blob_path = manifest_path.parent / manifest.get("blob", manifest_path.with_suffix(".bin").name)
    if not blob_path.is_file():
        raise MissingBlobError(f"weight blob {blob_path} not found")
    blob = blob_path.read_bytes()
    crc = zlib.crc32(blob)
    if crc != manifest.get("blob_crc32"):
        raise ChecksumError(
            f"{blob_path}: CRC-32 {crc:#010x} != manifest {manifest.get('blob_crc32')}"
        )
    nodes = [_decode_node(spec, blob) for spec in manifest["nodes"]]
    graph = Graph(manifest["name"], tuple(manifest["input_shape"]), nodes,
                  manifest.get("metadata", {}))
    violations = validate_graph(graph)
    if violations:
        raise ShapeInconsistencyError("; ".join(violations), violations)
    return graph


def graphs_equal(a: Graph, b: Graph) -> bool:
    """Field-for-field, bit-exact comparison."""
    if (a.name, a.input_shape, a.metadata) != (b.name, b.input_shape, b.metadata):
        return False
    if len(a.nodes) != len(b.nodes):
        return False
    return all(_node_equal(x, y) for x, y in zip(a.nodes, b.nodes))


def _node_equal(x, y):
    if type(x) is not type(y):
        return False
    for f in fields(x):
        u, v = getattr(x, f.name), getattr(y, f.name)
        if isinstance(u, np.ndarray) or isinstance(v, np.ndarray):
            if u is None or v is None or u.dtype != v.dtype or u.shape != v.shape:
                return False
            if u.tobytes() != v.tobytes():
                return False
        elif dataclass_like(u):
            if not _node_equal(u, v):
                return False
        elif u != v:
            return False
    return True


def dataclass_like(obj):
    return hasattr(obj, "__dataclass_fields__") and not isinstance(obj, ConvParams)


# ------------------------------------------------------------------ rewriting


def fold_scales(kernel, kept, scales) -> np.ndarray:
    """Keep input slices ``kept`` of ``kernel``, slice k multiplied by ``scales[k]``."""
    kernel = np.asarray(kernel, dtype=DTYPE)
    kept = np.asarray(kept, dtype=np.int64)
    scales = np.asarray(scales, dtype=np.float64)
    if kept.ndim != 1 or kept.shape != scales.shape:
        raise ValueError(f"kept ({kept.shape}) and scales ({scales.shape}) must match")
    if kept.size > kernel.shape[2]:
        raise ValueError(f"{kept.size} kept channels exceed cin={kernel.shape[2]}")
    check_channel_indices(kept, kernel.shape[2])
    sliced = kernel[:, :, kept, :].astype(np.float64) * scales[None, None, :, None]
    return np.ascontiguousarray(sliced, dtype=DTYPE)


def _shrink_conv_out(conv: Conv2D, kept):
    conv.kernel = np.ascontiguousarray(conv.kernel[..., kept])
    if conv.bias is not None:
        conv.bias = np.ascontiguousarray(conv.bias[kept])


def _shrink_affine(bn: Optional[ChannelAffine], kept):
    if bn is not None:
        bn.scale = np.ascontiguousarray(bn.scale[kept])
        bn.shift = np.ascontiguousarray(bn.shift[kept])


def _shrink_unit_output(unit: BottleneckUnit, kept):
    _shrink_conv_out(unit.conv3, kept)
    _shrink_affine(unit.bn3, kept)
    if unit.is_projection:
        _shrink_conv_out(unit.projection, kept)
        _shrink_affine(unit.projection_bn, kept)
    else:
        base = unit.shortcut_sample
        unit.shortcut_sample = np.asarray(kept if base is None else base[kept], dtype=np.int64)


def _shrink_producer_before(graph: Graph, index: int, kept, layer_id):
    """Shrink whatever produces the tensor consumed by node ``index``."""
    for j in range(index - 1, -1, -1):
        node = graph.nodes[j]
        if isinstance(node, ChannelAffine):
            _shrink_affine(node, kept)
        elif isinstance(node, _CHANNELWISE):
            continue
        elif isinstance(node, Conv2D):
            _shrink_conv_out(node, kept)
            return node.name
        elif isinstance(node, BottleneckUnit):
            _shrink_unit_output(node, kept)
            return node.name
        elif isinstance(node, ChannelSample):
            node.indices = node.indices[kept]
            return node.name
        else:
            raise RewriteError(
                f"{layer_id}: input comes from {type(node).__name__} {node.name!r}, "
                "which has no prunable output channels"
            )
    raise RewriteError(f"{layer_id}: input is the graph input, no producer layer to rewrite")


def _remap_identity_shortcut(unit: BottleneckUnit, kept, n_in):
    needed = np.arange(n_in) if unit.shortcut_sample is None else unit.shortcut_sample
    position = {int(c): k for k, c in enumerate(kept)}
    missing = [int(c) for c in needed if int(c) not in position]
    if missing:
        raise RewriteError(
            f"{unit.name}: identity shortcut still needs channels {missing} that would be "
            "pruned; keep them or prune the downstream unit first"
        )
    remapped = np.array([position[int(c)] for c in needed], dtype=np.int64)
    identity = remapped.size == len(kept) and np.array_equal(remapped, np.arange(len(kept)))
    unit.shortcut_sample = None if identity else remapped


def rewrite_conv_pair(graph: Graph, layer_id: str, kept_indices, scales) -> Graph:
    """Drop input channels of ``layer_id`` outside ``kept_indices``.

    The consumer's kept slices are multiplied by ``scales``; the producer's
    matching output filters (plus bias and any affine in between) are removed.
    For a unit's first layer both conv1 and the projection are consumers, and
    an identity shortcut is re-pointed at the surviving channels.
    """
    kept = np.asarray(kept_indices, dtype=np.int64).reshape(-1)
    scales = np.asarray(scales, dtype=np.float64).reshape(-1)
    if kept.shape != scales.shape:
        raise ValueError(f"{kept.size} kept indices but {scales.size} scales")
    target = graph.layer(layer_id)
    if not isinstance(target, Conv2D):
        raise RewriteError(f"{layer_id} is not a Conv2D")
    check_channel_indices(kept, target.cin)

    out = graph.copy()
    unit_name, _, slot = layer_id.partition("/")
    index = out.node_index(unit_name)
    node = out.nodes[index]
    if isinstance(node, BottleneckUnit) and slot in ("conv2", "conv3"):
        producer = node.conv1 if slot == "conv2" else node.conv2
        _shrink_conv_out(producer, kept)
        _shrink_affine(node.bn1 if slot == "conv2" else node.bn2, kept)
        consumer = getattr(node, slot)
        consumer.kernel = fold_scales(consumer.kernel, kept, scales)
    elif isinstance(node, BottleneckUnit):
        n_in = node.conv1.cin
        node.conv1.kernel = fold_scales(node.conv1.kernel, kept, scales)
        if node.is_projection:
            node.projection.kernel = fold_scales(node.projection.kernel, kept, scales)
        else:
            _remap_identity_shortcut(node, kept, n_in)
        _shrink_producer_before(out, index, kept, layer_id)
    else:
        node.kernel = fold_scales(node.kernel, kept, scales)
        _shrink_producer_before(out, index, kept, layer_id)

    violations = validate_graph(out)
    if violations:
        raise RewriteError(f"rewrite of {layer_id} left the graph invalid: {violations}")
    return out
