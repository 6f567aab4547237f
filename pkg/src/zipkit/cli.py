"""Batch command-line driver.

Subcommands share one output directory::

    <output>/hessians/      calibrate
    <output>/db/            prune-db
    <output>/latency_table.json   bench
    <output>/search/        search reports, one per target
    <output>/export/        compacted models
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import distill
from .calib import hessian_from_inputs
from .config import EVALUATORS, RunConfig, load_config
from .errors import InputError, NumericalError, ZipkitError
from .latency import bench_table, load_table, save_table
from .pipeline import (
    build_databases,
    export_model,
    load_databases,
    make_evaluator,
    resolve_threads,
    save_database,
    _map,
)
from .search import group_label, plan_targets
from .store import (
    dump_json,
    ensure_dir,
    load_calibration,
    load_model,
    read_blob,
    read_json,
    save_model,
    write_blob,
)

log = logging.getLogger("zipkit")


def _require(value, what):
    if not value:
        raise InputError(f"no {what} given (config file or flag)")
    return value


def _load_inputs(cfg: RunConfig):
    model = load_model(_require(cfg.model, "model path"))
    calibration = load_calibration(_require(cfg.calibration, "calibration path"),
                                   model.manifest, cfg.sample_budget)
    return model, calibration


def _hessians(cfg: RunConfig, model, calibration, reuse: bool = True):
    """Float64 Hessians, reusing the damping recorded by ``calibrate`` if present."""
    index_path = Path(cfg.output) / "hessians" / "index.json"
    recorded = read_json(index_path)["layers"] if reuse and index_path.is_file() else {}

    def one(spec):
        lam = recorded.get(spec.name, {}).get("damping", cfg.damping)
        return spec.name, hessian_from_inputs(calibration.inputs[spec.name], lam, name=spec.name)

    return dict(_map(one, model.manifest.layers, resolve_threads(cfg.threads)))


def _table_path(cfg: RunConfig) -> Path:
    return Path(cfg.latency_table) if cfg.latency_table else Path(cfg.output) / "latency_table.json"


def _report_path(cfg: RunConfig, target: float) -> Path:
    return Path(cfg.output) / "search" / f"target_{target:g}.json"


def cmd_calibrate(cfg: RunConfig, dump_hessians: bool = False) -> int:
    model, calibration = _load_inputs(cfg)
    out = ensure_dir(Path(cfg.output) / "hessians")
    states = _hessians(cfg, model, calibration, reuse=False)
    index = {}
    for name, st in states.items():
        blob = f"{name}.inv.bin"
        write_blob(out / blob, st.inverse)
        entry = {"dim": st.dim, "damping": st.damping, "samples": st.samples_seen,
                 "inverse_blob": blob}
        if dump_hessians:
            write_blob(out / f"{name}.gram.bin", st.gram)
            entry["gram_blob"] = f"{name}.gram.bin"
        index[name] = entry
        log.info("layer %s: %d samples, damping %.4g", name, st.samples_seen, st.damping)
    dump_json({"format_version": 1, "sample_budget": cfg.sample_budget, "layers": index},
              out / "index.json")
    return 0


def cmd_prune_db(cfg: RunConfig) -> int:
    model, calibration = _load_inputs(cfg)
    hessians = _hessians(cfg, model, calibration)
    dbs = build_databases(model, calibration, hessians, cfg.threads)
    root = ensure_dir(Path(cfg.output) / "db")
    for db in dbs.values():
        save_database(db, root)
        log.info("%s: %d levels", group_label(db.key), len(db.variants))
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    model = load_model(_require(cfg.model, "model path"))
    table = bench_table(model.manifest, batch=cfg.bench_batch, reps=cfg.bench_reps)
    path = _table_path(cfg)
    save_table(table, path)
    log.info("wrote %s (dense %.4f ms)", path, table.dense_runtime_ms)
    return 0


def cmd_search(cfg: RunConfig, json_report: bool = False) -> int:
    model, calibration = _load_inputs(cfg)
    table = load_table(_table_path(cfg))
    dbs = load_databases(Path(cfg.output) / "db", model)
    evaluator = make_evaluator(cfg.evaluator, model, dbs, calibration)
    results = plan_targets(dbs, table, cfg.targets, evaluator, steps=cfg.steps, seed=cfg.seed)
    reports = []
    for target, res in zip(cfg.targets, results):
        report = {
            "target_speedup": target,
            "seed": cfg.seed,
            "steps": res.steps,
            "evaluator": cfg.evaluator,
            "device": table.device,
            "dense_runtime_ms": table.dense_runtime_ms,
            "solution": res.best.as_dict(dbs),
            "coefficients": {group_label(k): float(c)
                             for k, c in zip(res.best.levels, res.coefficients)},
            "coefficient_trace_length": len(res.trace),
            "accepted_steps": res.accepted,
        }
        dump_json(report, _report_path(cfg, target))
        reports.append(report)
        if not json_report:
            print(f"target {target:g}x: estimated {res.best.speedup:.4f}x, "
                  f"runtime {res.best.runtime_ms:.6g} ms, loss {res.best.loss:.6g}")
    if json_report:
        print(json.dumps(reports, indent=2, sort_keys=True))
    return 0


def cmd_export(cfg: RunConfig, target: float) -> int:
    model = load_model(_require(cfg.model, "model path"))
    report = read_json(_report_path(cfg, target))
    dbs = load_databases(Path(cfg.output) / "db", model)
    levels = {(e["layer"], e["kind"]): int(e["level"]) for e in report["solution"]["layers"]}
    out = export_model(model, dbs, levels, provenance={
        "target_speedup": target,
        "seed": report["seed"],
        "loss": report["solution"]["loss"],
        "estimated_speedup": report["solution"]["estimated_speedup"],
    })
    dest = Path(cfg.output) / "export" / f"target_{target:g}"
    save_model(out, dest)
    log.info("exported %s: %d -> %d parameters", dest, model.parameter_count(),
             out.parameter_count())
    return 0


def cmd_eval(bundle_path: str, temperature: float = 1.0, profile: str = "glue") -> int:
    """Print task, logit and token loss plus their weighted sum.

    The bundle is a JSON manifest listing blobs with explicit shapes::

        {"tensors": {"s0": {"blob": "s0.bin", "shape": [B, seq, H]}, ...},
         "student_hidden": ["s0", null, ...], "teacher_hidden": ["t0", "t1", ...],
         "padding": "pad", "student_logits": "sl", "teacher_logits": "tl",
         "task_loss": 0.0}
    """
    root = Path(bundle_path).parent
    doc = read_json(bundle_path)
    tensors = doc.get("tensors", {})

    def get(name):
        if name is None:
            return None
        if name not in tensors:
            raise InputError(f"bundle has no tensor {name!r}")
        e = tensors[name]
        return read_blob(root / e["blob"], tuple(int(d) for d in e["shape"])).astype(np.float64)

    if profile not in distill.PROFILES:
        raise InputError(f"unknown loss profile {profile!r}")
    try:
        pad = get(doc.get("padding"))
        mask = None if pad is None else pad.astype(bool)
        pairs = [None if s is None else (get(s), get(t))
                 for s, t in zip(doc.get("student_hidden", []), doc.get("teacher_hidden", []))]
        token = distill.token_loss(pairs, mask) if pairs else 0.0
        if doc.get("student_logits") is not None:
            logit = distill.logit_kl(get(doc["student_logits"]), get(doc["teacher_logits"]),
                                     temperature)
        else:
            logit = 0.0
        task = float(doc.get("task_loss", 0.0))
        total = distill.combined_loss(task, logit, token, distill.PROFILES[profile])
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    print(f"task {task:.10g}")
    print(f"logit {logit:.10g}")
    print(f"token {token:.10g}")
    print(f"combined {total:.10g}")
    return 0


def _targets(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad target list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--model")
    common.add_argument("--calibration")
    common.add_argument("--table", dest="latency_table")
    common.add_argument("--targets", type=_targets, help="comma separated, e.g. 2,3,4")
    common.add_argument("--damping", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", dest="sample_budget", type=int)
    common.add_argument("--output")
    common.add_argument("--evaluator", choices=EVALUATORS)
    common.add_argument("--steps", type=int)
    common.add_argument("--threads", type=int, help="worker threads (env ZIPKIT_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="zipkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("calibrate", parents=[common])
    p.add_argument("--dump-hessians", action="store_true")
    sub.add_parser("prune-db", parents=[common])
    p = sub.add_parser("bench", parents=[common])
    p.add_argument("--batch", dest="bench_batch", type=int)
    p.add_argument("--reps", dest="bench_reps", type=int)
    p = sub.add_parser("search", parents=[common])
    p.add_argument("--json-report", action="store_true")
    p = sub.add_parser("export", parents=[common])
    p.add_argument("--target", type=float, required=True)
    p = sub.add_parser("eval")
    p.add_argument("bundle", help="tensor bundle manifest (JSON)")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--profile", default="glue", choices=sorted(distill.PROFILES))
    return parser


_CONFIG_KEYS = ("model", "calibration", "latency_table", "targets", "damping", "seed",
                "sample_budget", "output", "evaluator", "steps", "threads", "bench_batch",
                "bench_reps")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            return cmd_eval(args.bundle, args.temperature, args.profile)
        cfg = load_config(args.config, **{k: getattr(args, k, None) for k in _CONFIG_KEYS})
        if args.command == "calibrate":
            return cmd_calibrate(cfg, args.dump_hessians)
        if args.command == "prune-db":
            return cmd_prune_db(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "search":
            return cmd_search(cfg, args.json_report)
        if args.command == "export":
            return cmd_export(cfg, args.target)
    except ZipkitError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return NumericalError.exit_code
    return 2


if __name__ == "__main__":
    sys.exit(main())
