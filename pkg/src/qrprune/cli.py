"""``qrprune`` command line: flops, prune, sweep, eval.

Exit codes: 0 success, 2 config error, 3 model error, 4 engine error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import zoo
from .analysis import evaluate_topk, format_flops, sensitivity_sweep
from .datasets import load_images, load_labeled_dir
from .errors import ModelLoadError, QRPruneError, ValidationError
from .model_graph import count_flops, load_model, save_model
from .pruning import PruneAborted, PrunePlan, prune_pipeline, prune_resnet_backward, write_prune_log
from .sampling import SampleConfig

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_ENGINE = 0, 2, 3, 4

BUILTIN_MODELS = {"zoo:vgg16": zoo.vgg16, "zoo:resnet50": zoo.resnet50}

DEFAULTS = {
    "model": None,
    "calib_dir": None,
    "eval_dir": None,
    "seed": 0,
    "samples": None,
    "max_per_image": None,
    "repeats": 3,
    "out": "out",
    "plan": {"direction": None, "entries": []},
    "target": None,
    "fractions": None,
    "topk": 1,
    "threads": 1,
}


class ConfigError(Exception):
    pass


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def resolve_config(args) -> dict:
    """Defaults, then the JSON config file, then command-line flags."""
    cfg = json.loads(json.dumps(DEFAULTS))
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    flag_map = {
        "model": "model", "calib": "calib_dir", "eval": "eval_dir", "seed": "seed",
        "samples": "samples", "repeats": "repeats", "out": "out", "target": "target",
        "topk": "topk", "threads": "threads", "max_per_image": "max_per_image",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "fractions", None) is not None:
        try:
            cfg["fractions"] = [float(f) for f in args.fractions.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --fractions {args.fractions!r}") from exc
    return cfg


def _load_graph(spec, for_flops=False):
    if spec is None:
        raise ConfigError("no model given (--model or config 'model')")
    try:
        if spec in BUILTIN_MODELS:
            return BUILTIN_MODELS[spec](init="zeros" if for_flops else "he")
        return load_model(spec)
    except (ModelLoadError, OSError, json.JSONDecodeError, KeyError) as exc:
        for v in getattr(exc, "violations", ()):
            print(v, file=sys.stderr)
        raise _Fail(EXIT_MODEL, f"cannot load model {spec}: {exc}") from exc


def _sample_config(cfg):
    return SampleConfig(seed=int(cfg["seed"]), n_samples=cfg["samples"],
                        max_per_image=cfg["max_per_image"], threads=int(cfg["threads"]))


def _calib(cfg):
    if not cfg["calib_dir"]:
        raise ConfigError("a calibration directory is required (--calib or 'calib_dir')")
    try:
        return load_images(cfg["calib_dir"])[0]
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _evalset(cfg, required=False):
    if not cfg["eval_dir"]:
        if required:
            raise ConfigError("an eval directory is required (--eval or 'eval_dir')")
        return []
    try:
        return load_labeled_dir(cfg["eval_dir"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _write_resolved(cfg, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n",
                                             encoding="utf-8")


def cmd_flops(args) -> int:
    cfg = resolve_config(args)
    graph = _load_graph(cfg["model"], for_flops=True)
    shape = tuple(int(d) for d in args.input_shape.split("x")) if args.input_shape else None
    try:
        rep = count_flops(graph, shape)
    except ValidationError as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        return EXIT_MODEL
    if args.json:
        doc = {"model": graph.name, "total": rep.total, "minor_ops": rep.minor_total,
               "layers": [vars(r) for r in rep.layers]}
        print(json.dumps(doc, indent=1))
        return EXIT_OK
    for r in rep.layers:
        if r.flops:
            print(f"{r.layer_id:28}{r.kind:10}{r.flops:>16,}")
    print(f"{'total':38}{rep.total:>16,}  ({format_flops(rep.total)})")
    return EXIT_OK


def cmd_prune(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg["out"])
    graph = _load_graph(cfg["model"])
    plan_doc = dict(cfg["plan"] or {})
    if not plan_doc.get("direction"):
        family = graph.metadata.get("family", "pipeline")
        plan_doc["direction"] = "backward_resnet" if family == "resnet" else "forward_pipeline"
    try:
        plan = PrunePlan.from_dict(plan_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad plan: {exc}") from exc
    cfg["plan"] = plan.to_dict()
    calib = _calib(cfg) if plan.entries else []
    _write_resolved(cfg, out)
    run = prune_resnet_backward if plan.direction == "backward_resnet" else prune_pipeline
    try:
        pruned, log = run(graph, plan, calib, _sample_config(cfg))
    except PruneAborted as exc:
        write_prune_log(exc.log, out / "prune_log.jsonl")
        raise _Fail(EXIT_ENGINE, str(exc)) from exc
    except (QRPruneError, ValueError, KeyError) as exc:
        raise _Fail(EXIT_ENGINE, str(exc)) from exc
    write_prune_log(log, out / "prune_log.jsonl")
    pruned.name = f"{graph.name}-pruned"
    path = save_model(pruned, out / f"{pruned.name}.json")
    before, after = count_flops(graph).total, count_flops(pruned).total
    print(f"wrote {path}  FLOPs {format_flops(before)} -> {format_flops(after)}"
          f" ({before / after:.2f}x)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    if not cfg["target"]:
        raise ConfigError("--target is required")
    if not cfg["fractions"]:
        raise ConfigError("--fractions is required")
    out = Path(cfg["out"])
    graph = _load_graph(cfg["model"])
    calib, evalset = _calib(cfg), _evalset(cfg)
    _write_resolved(cfg, out)
    try:
        rep = sensitivity_sweep(graph, cfg["target"], cfg["fractions"], int(cfg["repeats"]),
                                calib, evalset, _sample_config(cfg))
    except (QRPruneError, ValueError, KeyError) as exc:
        raise _Fail(EXIT_ENGINE, str(exc)) from exc
    (out / "sweep.csv").write_text(rep.to_csv(), encoding="utf-8")
    (out / "sweep.json").write_text(rep.to_json(), encoding="utf-8")
    print(f"wrote {out / 'sweep.csv'} ({len(rep.rows)} rows)")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    graph = _load_graph(cfg["model"])
    evalset = _evalset(cfg, required=True)
    k = int(cfg["topk"])
    try:
        acc = evaluate_topk(graph, evalset, k)
    except (QRPruneError, ValueError) as exc:
        raise _Fail(EXIT_ENGINE, str(exc)) from exc
    print(f"top-{k} accuracy: {acc:.4f} ({len(evalset)} items)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrprune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", help="model manifest (.json) or zoo:vgg16 / zoo:resnet50")
        p.add_argument("--config", help="JSON run config; flags override it")
        p.add_argument("--threads", type=int, help="worker threads for forward passes")
        return p

    p = common(sub.add_parser("flops", help="per-layer and total FLOPs (1 MAC = 1 FLOP)"))
    p.add_argument("--input-shape", help="HxWxC, defaults to the model's input shape")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_flops)

    for name, func, helptext in (("prune", cmd_prune, "prune a model by a plan"),
                                 ("sweep", cmd_sweep, "single-layer sensitivity sweep")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--calib", help="calibration image directory")
        p.add_argument("--eval", help="labeled evaluation directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int, help="columns N of the contribution matrix")
        p.add_argument("--max-per-image", dest="max_per_image", type=int)
        p.add_argument("--out", help="output directory")
        if name == "sweep":
            p.add_argument("--target", help="conv layer id to sweep")
            p.add_argument("--fractions", help="comma-separated fractions pruned, e.g. 0,0.25,0.5")
            p.add_argument("--repeats", type=int)
        p.set_defaults(func=func)

    p = common(sub.add_parser("eval", help="top-k accuracy on a labeled directory"))
    p.add_argument("--eval", help="labeled evaluation directory")
    p.add_argument("--topk", type=int)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _Fail as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
