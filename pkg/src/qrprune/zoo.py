"""Reference architectures and small constructed fixtures.

``vgg16`` and ``resnet50`` reproduce the ImageNet layer shapes (ResNet-50 in
its original form, stride 2 on the first 1x1 conv of a downsampling unit).
Weights are random He-normal unless ``init="zeros"``, which is enough for
FLOPs accounting and shape checks.
"""
from __future__ import annotations

import numpy as np

from .model_graph import (
    BottleneckUnit,
    ChannelAffine,
    Conv2D,
    Dense,
    Flatten,
    Graph,
    Pool,
    ReLU,
)
from .tensor_core import ConvParams


class _Init:
    def __init__(self, seed, kind="he"):
        if kind not in ("he", "zeros"):
            raise ValueError(f"unknown init {kind!r}")
        self.rng = np.random.default_rng(seed)
        self.kind = kind

    def kernel(self, k, cin, cout):
        if self.kind == "zeros":
            return np.zeros((k, k, cin, cout), np.float32)
        std = np.float32(np.sqrt(2.0 / (k * k * cin)))
        return self.rng.standard_normal((k, k, cin, cout), dtype=np.float32) * std

    def dense(self, n_out, n_in):
        if self.kind == "zeros":
            return np.zeros((n_out, n_in), np.float32)
        std = np.float32(np.sqrt(1.0 / n_in))
        return self.rng.standard_normal((n_out, n_in), dtype=np.float32) * std

    def bias(self, n, scale=0.01):
        if self.kind == "zeros":
            return np.zeros(n, np.float32)
        return (self.rng.standard_normal(n, dtype=np.float32) * np.float32(scale))

    def affine(self, name, n):
        if self.kind == "zeros":
            return ChannelAffine(name, np.ones(n, np.float32), np.zeros(n, np.float32))
        scale = 1.0 + 0.1 * self.rng.standard_normal(n, dtype=np.float32)
        return ChannelAffine(name, scale, self.bias(n, 0.05))


def vgg16(num_classes=1000, input_hw=224, seed=0, init="he") -> Graph:
    """13 conv layers in 5 groups plus 3 fully connected layers."""
    w = _Init(seed, init)
    groups = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
    nodes = []
    cin = 3
    for g, (width, reps) in enumerate(groups, start=1):
        for r in range(1, reps + 1):
            name = f"conv{g}_{r}"
            nodes.append(Conv2D(name, w.kernel(3, cin, width), w.bias(width), ConvParams(1, 1)))
            nodes.append(ReLU(f"relu{g}_{r}"))
            cin = width
        nodes.append(Pool(f"pool{g}", "max", 2, 2))
    side = input_hw // 32
    nodes.append(Flatten("flatten"))
    fan_in = side * side * cin
    for name, n_out in (("fc6", 4096), ("fc7", 4096)):
        nodes.append(Dense(name, w.dense(n_out, fan_in), w.bias(n_out)))
        nodes.append(ReLU(f"relu_{name}"))
        fan_in = n_out
    nodes.append(Dense("fc8", w.dense(num_classes, fan_in), w.bias(num_classes)))
    return Graph("vgg16", (input_hw, input_hw, 3), nodes, {"family": "pipeline"})


def bottleneck_unit(name, cin, width, cout, stride, w: _Init, projection=None) -> BottleneckUnit:
    """conv1 1x1 (carries the stride) - conv2 3x3 - conv3 1x1, affine after each."""
    if projection is None:
        projection = stride != 1 or cin != cout
    return BottleneckUnit(
        name,
        conv1=Conv2D(f"{name}/conv1", w.kernel(1, cin, width), None, ConvParams(stride, 0)),
        bn1=w.affine(f"{name}/bn1", width),
        conv2=Conv2D(f"{name}/conv2", w.kernel(3, width, width), None, ConvParams(1, 1)),
        bn2=w.affine(f"{name}/bn2", width),
        conv3=Conv2D(f"{name}/conv3", w.kernel(1, width, cout), None, ConvParams(1, 0)),
        bn3=w.affine(f"{name}/bn3", cout),
        projection=(
            Conv2D(f"{name}/projection", w.kernel(1, cin, cout), None, ConvParams(stride, 0))
            if projection else None
        ),
        projection_bn=w.affine(f"{name}/projection_bn", cout) if projection else None,
    )


def resnet50(num_classes=1000, input_hw=224, seed=0, init="he") -> Graph:
    w = _Init(seed, init)
    nodes = [
        Conv2D("conv1", w.kernel(7, 3, 64), w.bias(64), ConvParams(2, 3)),
        w.affine("bn_conv1", 64),
        ReLU("conv1_relu"),
        Pool("pool1", "max", 3, 2, 1),
    ]
    cin = 64
    for stage, (width, reps) in enumerate([(64, 3), (128, 4), (256, 6), (512, 3)], start=2):
        for r in range(reps):
            stride = 2 if (r == 0 and stage > 2) else 1
            name = f"res{stage}{chr(ord('a') + r)}"
            nodes.append(bottleneck_unit(name, cin, width, 4 * width, stride, w))
            cin = 4 * width
    side = -(-input_hw // 32)
    nodes += [
        Pool("pool5", "avg", side, 1),
        Flatten("flatten"),
        Dense("fc1000", w.dense(num_classes, cin), w.bias(num_classes)),
    ]
    return Graph("resnet50", (input_hw, input_hw, 3), nodes, {"family": "resnet"})


# ------------------------------------------------------------------ fixtures


def tiny_cnn(seed=0, num_classes=5) -> Graph:
    """Three conv layers on an 8x8x3 input with a dense classifier."""
    w = _Init(seed)
    nodes = [
        Conv2D("conv_a", w.kernel(3, 3, 6), w.bias(6, 0.1), ConvParams(1, 1)),
        ReLU("relu_a"),
        Conv2D("conv_b", w.kernel(3, 6, 8), w.bias(8, 0.1), ConvParams(1, 1)),
        ReLU("relu_b"),
        Pool("pool_b", "max", 2, 2),
        Conv2D("conv_c", w.kernel(3, 8, 8), w.bias(8, 0.1), ConvParams(1, 0)),
        ReLU("relu_c"),
        Flatten("flatten"),
        Dense("fc", w.dense(num_classes, 2 * 2 * 8), w.bias(num_classes, 0.1)),
    ]
    return Graph("tiny_cnn", (8, 8, 3), nodes, {"family": "pipeline"})


def planted_redundancy_cnn(n_base=4, factors=None, seed=0, hw=10, num_classes=6) -> Graph:
    """Pipeline whose ``conv2`` sees ``2 * n_base`` channels of which only
    ``n_base`` are independent in contribution space.

    Channel ``n_base + i`` is ``factors[i]`` times channel ``i`` (scaled
    filter and bias in ``conv1``; ReLU is positively homogeneous) and
    ``conv2`` uses the same input slice for both, so their contribution rows
    are proportional.
    """
    rng = np.random.default_rng(seed)
    w = _Init(rng.integers(2**32))
    factors = np.full(n_base, 2.0) if factors is None else np.asarray(factors, float)
    if factors.shape != (n_base,) or np.any(factors <= 0):
        raise ValueError("need n_base positive factors")
    c = 2 * n_base
    k1 = w.kernel(3, 3, n_base)
    b1 = w.bias(n_base, 0.1)
    kernel1 = np.concatenate([k1, k1 * factors.astype(np.float32)], axis=3)
    bias1 = np.concatenate([b1, b1 * factors.astype(np.float32)])
    k2 = w.kernel(3, n_base, 8)
    kernel2 = np.concatenate([k2, k2], axis=2)
    nodes = [
        Conv2D("conv1", kernel1, bias1, ConvParams(1, 1)),
        ReLU("relu1"),
        Conv2D("conv2", kernel2, w.bias(8, 0.1), ConvParams(1, 1)),
        ReLU("relu2"),
        Pool("pool2", "max", 2, 2),
        Conv2D("conv3", w.kernel(3, 8, 8), w.bias(8, 0.1), ConvParams(1, 1)),
        ReLU("relu3"),
        Pool("pool3", "avg", hw // 2, 1),
        Flatten("flatten"),
        Dense("fc", w.dense(num_classes, 8), w.bias(num_classes, 0.1)),
    ]
    meta = {"family": "pipeline", "redundant_channels": list(range(n_base, c))}
    return Graph("planted_redundancy", (hw, hw, 3), nodes, meta)


def duplicate_channel_cnn(seed=0, hw=10, num_classes=6) -> Graph:
    """``conv2`` input channel 2 is exactly 2.0 x channel 0 and both use the
    same kernel slice, so one of them is removable without loss."""
    rng = np.random.default_rng(seed)
    w = _Init(rng.integers(2**32))
    k1 = w.kernel(3, 3, 4)
    b1 = w.bias(4, 0.1)
    k1[..., 2] = 2.0 * k1[..., 0]
    b1[2] = 2.0 * b1[0]
    k2 = w.kernel(3, 4, 8)
    k2[:, :, 2, :] = k2[:, :, 0, :]
    nodes = [
        Conv2D("conv1", k1, b1, ConvParams(1, 1)),
        ReLU("relu1"),
        Conv2D("conv2", k2, w.bias(8, 0.1), ConvParams(1, 1)),
        ReLU("relu2"),
        Pool("pool2", "max", 2, 2),
        Flatten("flatten"),
        Dense("fc", w.dense(num_classes, (hw // 2) ** 2 * 8), w.bias(num_classes, 0.1)),
    ]
    return Graph("duplicate_channel", (hw, hw, 3), nodes, {"family": "pipeline"})


def bottleneck_cnn(seed=0, hw=8, width=16, num_classes=5) -> Graph:
    """Stem conv, one projection unit, two identity units and a 1x1 head conv.

    The head gives the last identity unit a downstream consumer so backward
    pruning can shrink every unit's output.
    """
    w = _Init(seed)
    nodes = [
        Conv2D("stem", w.kernel(3, 3, 8), w.bias(8), ConvParams(1, 1)),
        w.affine("stem_bn", 8),
        ReLU("stem_relu"),
        bottleneck_unit("u1", 8, width // 4, width, 1, w, projection=True),
        bottleneck_unit("u2", width, width // 4, width, 1, w),
        bottleneck_unit("u3", width, width // 4, width, 1, w),
        Conv2D("head", w.kernel(1, width, 12), w.bias(12), ConvParams(1, 0)),
        ReLU("head_relu"),
        Pool("gap", "avg", hw, 1),
        Flatten("flatten"),
        Dense("fc", w.dense(num_classes, 12), w.bias(num_classes)),
    ]
    return Graph("bottleneck_cnn", (hw, hw, 3), nodes, {"family": "resnet"})


def random_inputs(graph: Graph, n, seed=0, positive=False):
    """``n`` standard-normal images matching ``graph.input_shape``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, *graph.input_shape), dtype=np.float32)
    return list(np.abs(x) if positive else x)
