"""Accuracy evaluation, per-layer sensitivity sweeps and before/after reports."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .inference import forward
from .model_graph import Graph, count_flops, count_params
from .pruning import prune_layer, resolve_keep
from .sampling import SampleConfig

SWEEP_FIELDS = ["target", "fraction", "m", "repeat", "seed", "residual", "top1", "top5", "flops"]


def topk_hits(logits, label, k) -> bool:
    """True when ``label`` is among the ``k`` largest logits (ties favour lower index)."""
    order = np.argsort(-np.asarray(logits, dtype=np.float64).reshape(-1), kind="stable")
    return bool(np.any(order[:k] == label))


def evaluate_topk(graph: Graph, dataset, k: int = 1) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    dataset = list(dataset)
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    hits = sum(topk_hits(forward(graph, x), label, k) for x, label in dataset)
    return hits / len(dataset)


def evaluate_top1_top5(graph: Graph, dataset):
    dataset = list(dataset)
    if not dataset:
        return float("nan"), float("nan")
    h1 = h5 = 0
    for x, label in dataset:
        logits = forward(graph, x)
        h1 += topk_hits(logits, label, 1)
        h5 += topk_hits(logits, label, 5)
    return h1 / len(dataset), h5 / len(dataset)


@dataclass
class SweepRow:
    target: str
    fraction: float
    m: int
    repeat: int
    seed: int
    residual: float
    top1: float
    top5: float
    flops: int
    zero_out_residual: float = 0.0

    def record(self):
        return {k: getattr(self, k) for k in SWEEP_FIELDS}


@dataclass
class SweepReport:
    target: str
    rows: list
    repeats: int
    seeds: list = field(default_factory=list)

    def fractions(self):
        return sorted({r.fraction for r in self.rows})

    def mean_rows(self):
        """One row per fraction, averaged over repeats."""
        out = []
        for f in self.fractions():
            group = [r for r in self.rows if r.fraction == f]
            out.append(SweepRow(
                self.target, f, group[0].m, -1, group[0].seed,
                float(np.mean([r.residual for r in group])),
                float(np.mean([r.top1 for r in group])),
                float(np.mean([r.top5 for r in group])),
                group[0].flops,
                float(np.mean([r.zero_out_residual for r in group])),
            ))
        return out

    def mean_residuals(self):
        return np.array([r.residual for r in self.mean_rows()])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(v) for k, v in row.record().items()})
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "target": self.target,
            "repeats": self.repeats,
            "seeds": self.seeds,
            "rows": [r.record() for r in self.rows],
        }
        return json.dumps(doc, indent=1) + "\n"


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def sensitivity_sweep(graph: Graph, target: str, fractions, repeats: int, calib, evalset,
                      config: SampleConfig) -> SweepReport:
    """Prune only ``target`` by each fraction of its input channels, on a fresh
    copy of ``graph`` every time, repeating with seeds ``seed, seed+1, ...``."""
    fractions = [float(f) for f in fractions]
    if any(not 0.0 <= f < 1.0 for f in fractions):
        raise ValueError(f"fractions must lie in [0, 1): {fractions}")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ValueError("fractions must be strictly increasing")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    n_channels = graph.layer(target).cin
    evalset = list(evalset) if evalset is not None else []
    seeds = [config.seed + r for r in range(repeats)]
    baseline = evaluate_top1_top5(graph, evalset)
    rows = []
    for f in fractions:
        m = n_channels - resolve_keep(1.0 - f, n_channels) if f > 0 else 0
        for r, seed in enumerate(seeds):
            outcome = prune_layer(graph, target, m, calib, config.with_seed(seed))
            top1, top5 = baseline if m == 0 else evaluate_top1_top5(outcome.new_graph, evalset)
            rows.append(SweepRow(target, f, m, r, seed, outcome.residual, top1, top5,
                                 outcome.flops_after, outcome.zero_out_residual))
    return SweepReport(target, rows, repeats, seeds)


def format_flops(flops: int) -> str:
    return f"{flops / 1e9:.2f}B"


def format_ratio(before: int, after: int) -> str:
    return f"{before / after:.2f}×"


def report(graph_before: Graph, graph_after: Graph, evalset=None) -> dict:
    evalset = list(evalset) if evalset is not None else []
    f0, f1 = count_flops(graph_before).total, count_flops(graph_after).total
    t0, t1 = evaluate_top1_top5(graph_before, evalset), evaluate_top1_top5(graph_after, evalset)
    return {
        "model_before": graph_before.name,
        "model_after": graph_after.name,
        "top1_before": t0[0],
        "top5_before": t0[1],
        "top1_after": t1[0],
        "top5_after": t1[1],
        "flops_before": f0,
        "flops_after": f1,
        "flops_reduction": f0 / f1,
        "params_before": count_params(graph_before),
        "params_after": count_params(graph_after),
    }


def render_report(rep: dict, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(rep, indent=1) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rep), lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: _fmt(v) for k, v in rep.items()})
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = [
        f"{'':14}{'before':>12}{'after':>12}",
        f"{'top-1':14}{rep['top1_before']:>12.4f}{rep['top1_after']:>12.4f}",
        f"{'top-5':14}{rep['top5_before']:>12.4f}{rep['top5_after']:>12.4f}",
        f"{'FLOPs':14}{format_flops(rep['flops_before']):>12}{format_flops(rep['flops_after']):>12}",
        f"{'params':14}{rep['params_before']:>12,}{rep['params_after']:>12,}",
        f"reduction: {format_ratio(rep['flops_before'], rep['flops_after'])}",
    ]
    return "\n".join(lines) + "\n"
