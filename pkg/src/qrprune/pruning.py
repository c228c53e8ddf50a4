"""Channel pruning: per-layer select/scale/rewrite, pipeline order for plain
CNNs, and backward order with index-union propagation for residual nets."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import QRPruneError
from .linalg import find_representative_rows, least_squares_row, row_residual
from .model_graph import (
    BottleneckUnit,
    Conv2D,
    Graph,
    count_flops,
    fold_scales,
    require_valid,
    rewrite_conv_pair,
    validate_graph,
)
from .sampling import SampleConfig, collect_contributions, collect_joint_contributions

__all__ = [
    "PlanEntry",
    "PrunePlan",
    "PruneOutcome",
    "PruneAborted",
    "fold_scales",
    "prune_layer",
    "prune_pipeline",
    "prune_resnet_backward",
    "resolve_keep",
    "write_prune_log",
]


@dataclass(frozen=True)
class PlanEntry:
    target: str
    m: Optional[int] = None
    keep_fraction: Optional[float] = None

    def __post_init__(self):
        if (self.m is None) == (self.keep_fraction is None):
            raise ValueError(f"{self.target}: give exactly one of m or keep_fraction")

    def resolve_m(self, n_channels: int) -> int:
        if self.m is not None:
            return int(self.m)
        return n_channels - resolve_keep(self.keep_fraction, n_channels)


def resolve_keep(keep_fraction: float, n_channels: int) -> int:
    """Nearest integer (halves round up), at least one channel."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    return max(1, min(n_channels, math.floor(keep_fraction * n_channels + 0.5)))


@dataclass
class PrunePlan:
    entries: list
    direction: str = "forward_pipeline"  # or "backward_resnet"

    def __post_init__(self):
        if self.direction not in ("forward_pipeline", "backward_resnet"):
            raise ValueError(f"unknown plan direction {self.direction!r}")
        self.entries = [e if isinstance(e, PlanEntry) else PlanEntry(**e) for e in self.entries]

    @classmethod
    def from_dict(cls, doc):
        return cls(doc.get("entries", []), doc.get("direction", "forward_pipeline"))

    def to_dict(self):
        return {
            "direction": self.direction,
            "entries": [
                {k: v for k, v in vars(e).items() if v is not None} for e in self.entries
            ],
        }


@dataclass
class PruneOutcome:
    new_graph: Graph
    layer_id: str
    n_channels: int
    m: int
    kept: np.ndarray
    scales: np.ndarray
    residual: float
    seed: int
    selected: np.ndarray = None  # pivot-order pick before any union
    required: np.ndarray = None  # channels the identity shortcut still needs
    flops_before: int = 0
    flops_after: int = 0
    n_samples: int = 0
    zero_out_residual: float = 0.0  # same kept set, every scale 1

    def log_record(self) -> dict:
        return {
            "id": self.layer_id,
            "C": int(self.n_channels),
            "m": int(self.m),
            "kept": [int(k) for k in self.kept],
            "scales": [float(s) for s in self.scales],
            "residual": float(self.residual),
            "flops_before": int(self.flops_before),
            "flops_after": int(self.flops_after),
            "seed": int(self.seed),
        }


class PruneAborted(QRPruneError):
    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


def write_prune_log(outcomes, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.log_record()) + "\n")
    return path


def _unit_of(graph: Graph, layer_id: str):
    unit_name, _, slot = layer_id.partition("/")
    if not slot:
        return None, None
    return graph.layer(unit_name), slot


def prune_layer(graph: Graph, layer_id: str, m: int, calib, config: SampleConfig) -> PruneOutcome:
    """Prune ``m`` input channels of one convolution.

    For a unit's conv1 (or projection) the input is shared: projection units
    are sampled jointly over both consumers, identity units keep the union of
    the selection and the channels their shortcut still forwards.
    """
    target = graph.layer(layer_id)
    if not isinstance(target, Conv2D):
        raise TypeError(f"{layer_id} is not a Conv2D")
    n_channels = target.cin
    if not 0 <= m < n_channels:
        raise ValueError(f"{layer_id}: m must lie in [0, {n_channels}), got {m}")
    flops_before = count_flops(graph).total

    unit, slot = _unit_of(graph, layer_id)
    if slot == "projection":
        layer_id, slot = f"{unit.name}/conv1", "conv1"

    if m == 0:
        everything = np.arange(n_channels)
        return PruneOutcome(graph, layer_id, n_channels, 0, everything, np.ones(n_channels),
                            0.0, config.seed, everything, None, flops_before, flops_before)

    if slot == "conv1" and unit.is_projection:
        cm = collect_joint_contributions(graph, unit.name, calib, config)
    else:
        cm = collect_contributions(graph, layer_id, calib, config)
    keep = n_channels - m
    selected = find_representative_rows(cm.A, keep)
    kept = np.sort(selected)
    required = None
    if slot == "conv1" and not unit.is_projection:
        sample = unit.shortcut_sample
        required = np.arange(n_channels) if sample is None else np.sort(sample)
        kept = np.union1d(kept, required)
    scales = least_squares_row(cm.B, cm.A[kept])
    residual = row_residual(cm.B, cm.A[kept], scales)
    zero_out = row_residual(cm.B, cm.A[kept], np.ones(kept.size))
    if kept.size == n_channels and np.array_equal(kept, np.arange(n_channels)):
        # the union swallowed the whole selection; leave the weights untouched
        scales = np.ones(n_channels)
        residual = row_residual(cm.B, cm.A, scales)
        new_graph = graph
    else:
        new_graph = rewrite_conv_pair(graph, layer_id, kept, scales)
    return PruneOutcome(
        new_graph, layer_id, n_channels, n_channels - kept.size, kept, scales, residual,
        config.seed, selected, required, flops_before, count_flops(new_graph).total, cm.n_samples,
        zero_out,
    )


def _execution_rank(graph: Graph):
    rank = {}
    for i, node in enumerate(graph.nodes):
        if isinstance(node, BottleneckUnit):
            for k, slot in enumerate(("conv1", "conv2", "conv3")):
                rank[f"{node.name}/{slot}"] = (i, k)
            rank[node.name] = (i, 0)
            if node.is_projection:
                rank[f"{node.name}/projection"] = (i, 0)
        elif isinstance(node, Conv2D):
            rank[node.name] = (i, 0)
    return rank


def prune_pipeline(graph: Graph, plan: PrunePlan, calib, config: SampleConfig):
    """Front-to-back layer-by-layer pruning; each step samples the already
    pruned graph.  Returns ``(graph, outcomes)``."""
    require_valid(graph)
    if plan.direction != "forward_pipeline":
        raise ValueError("prune_pipeline needs a forward_pipeline plan")
    rank = _execution_rank(graph)
    for e in plan.entries:
        if e.target not in rank or isinstance(graph.layer(e.target), BottleneckUnit):
            raise ValueError(f"plan target {e.target!r} is not a pipeline Conv2D")
    log = []
    current = graph
    for entry in sorted(plan.entries, key=lambda e: rank[e.target]):
        try:
            m = entry.resolve_m(current.layer(entry.target).cin)
            outcome = prune_layer(current, entry.target, m, calib, config)
        except Exception as exc:
            raise PruneAborted(f"pruning {entry.target} failed: {exc}", log) from exc
        log.append(outcome)
        current = outcome.new_graph
    return current, log


def _backward_targets(graph: Graph, plan: PrunePlan):
    """Expand plan entries to conv ids, ordered last-to-first (conv3, conv2, conv1
    within a unit)."""
    wanted = {}
    for e in plan.entries:
        node = graph.layer(e.target)
        if isinstance(node, BottleneckUnit):
            for slot in ("conv1", "conv2", "conv3"):
                wanted[f"{node.name}/{slot}"] = e
        elif isinstance(node, Conv2D):
            tid = e.target
            if tid.endswith("/projection"):
                tid = tid.rsplit("/", 1)[0] + "/conv1"
            wanted[tid] = e
        else:
            raise ValueError(f"plan target {e.target!r} is neither a unit nor a Conv2D")
    order = []
    for node in reversed(graph.nodes):
        if isinstance(node, BottleneckUnit):
            order += [f"{node.name}/{s}" for s in ("conv3", "conv2", "conv1")]
        elif isinstance(node, Conv2D):
            order.append(node.name)
    return [(tid, wanted[tid]) for tid in order if tid in wanted]


def prune_resnet_backward(graph: Graph, plan: PrunePlan, calib, config: SampleConfig):
    """Prune a residual network from the last unit to the first.

    Pruning a unit's input shrinks the previous unit's output.  For an
    identity unit that adds a channel sample to its shortcut, so when its own
    conv1 is pruned afterwards the kept set is the union of conv1's selection
    and the propagated set, and the sample is re-indexed into the kept set.
    """
    require_valid(graph)
    if plan.direction != "backward_resnet":
        raise ValueError("prune_resnet_backward needs a backward_resnet plan")
    log = []
    current = graph
    for layer_id, entry in _backward_targets(graph, plan):
        try:
            m = entry.resolve_m(current.layer(layer_id).cin)
            outcome = prune_layer(current, layer_id, m, calib, config)
        except Exception as exc:
            raise PruneAborted(f"pruning {layer_id} failed: {exc}", log) from exc
        violations = validate_graph(outcome.new_graph)
        if violations:
            raise PruneAborted(f"internal invariant violated after {layer_id}: {violations}", log)
        log.append(outcome)
        current = outcome.new_graph
    return current, log
