"""Command-line interface: single runs, the ablation battery, and sweeps.

Verbs: ``run``, ``ablate``, ``sweep``, ``validate-config``, ``version``.
Outputs are UTF-8 CSV (RFC 4180) and JSON (non-finite values abort before
emission); every command finishes by writing a manifest that lists each
emitted file with its SHA-256 checksum. Exit codes: 0 success, 1 config
parse failure, 2 config validation failure, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from ._validation import NonFiniteError
from .config import (
    ConfigParseError,
    ConfigValidationError,
    config_as_dict,
    dumps_config,
    load_config,
)
from .datasets import generate_task
from .training import evaluate, source_only_config, sweep_target_classes, train

logger = logging.getLogger("buot")

CSV_SCHEMA_VERSION = 1
REPORT_COLUMNS = ["iter", "acc_s", "acc_t", "ce", "rce", "ent", "buot", "total"]
ABLATION_COLUMNS = [
    "cell",
    "balance_mode",
    "cost_mode",
    "use_weights",
    "use_buot_loss",
    "kernel_mode",
    "n_seeds",
    "acc_t_mean",
    "acc_t_std",
    "kernel_seconds_per_iter_mean",
    "status",
]
SWEEP_COLUMNS = ["axis", "value", "seed", "acc", "acc_baseline"]

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    raw = os.environ.get("BUOT_LOG", "info").strip().lower()
    level = _LOG_LEVELS.get(raw)
    if level is None:
        level = logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(level)
    if raw not in _LOG_LEVELS:
        logger.warning("BUOT_LOG=%r not in {error, info, debug}; using info", raw)


def _fmt(value):
    """Canonical cell text: shortest round-trip repr for floats, '' for missing."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _ensure_json_finite(obj, where="value"):
    if isinstance(obj, dict):
        for key, val in obj.items():
            _ensure_json_finite(val, f"{where}.{key}")
    elif isinstance(obj, (list, tuple)):
        for i, val in enumerate(obj):
            _ensure_json_finite(val, f"{where}[{i}]")
    elif isinstance(obj, float) and not np.isfinite(obj):
        raise NonFiniteError(f"refusing to emit non-finite JSON value at {where}: {obj!r}")


def _write_json(path, payload):
    _ensure_json_finite(payload)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, command, cfg, timings, file_paths, extra=None):
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "config": config_as_dict(cfg),
        "timings_seconds": {k: float(v) for k, v in timings.items()},
        "files": [
            {"path": os.path.basename(p), "sha256": _sha256(p), "bytes": os.path.getsize(p)}
            for p in file_paths
        ],
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    _write_json(path, manifest)
    return path


def _plan_payload(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "order": "row-major", "values": arr.ravel().tolist()}


def run_single(cfg, out_dir):
    """Train once, evaluate, and emit report.csv / weights.json / plans.json / manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    task = generate_task(
        cfg.task.k_source,
        cfg.task.k_target,
        cfg.task.n_s,
        cfg.task.n_t,
        cfg.task.d,
        cfg.task.shift_scale,
        cfg.task.task_seed,
    )

    t0 = time.perf_counter()
    model, report = train(task, cfg)
    train_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    metrics = evaluate(model, task, report.final_omega)
    evaluate_seconds = time.perf_counter() - t0

    report_path = os.path.join(out_dir, "report.csv")
    rows = [
        [r.iteration, r.acc_s, r.acc_t, r.ce, r.rce, r.ent, r.buot, r.total]
        for r in report.rows
    ]
    _write_csv(report_path, REPORT_COLUMNS, rows)

    weights_path = os.path.join(out_dir, "weights.json")
    omega = report.final_omega
    shared = set(task.shared_classes)
    weights_payload = {
        "normalization": "sum_to_one",
        "degenerate": bool(omega.degenerate) if omega is not None else None,
        "shared_classes": list(task.shared_classes),
        "outlier_classes": list(task.outlier_classes),
        "omega": [float(w) for w in omega.omega] if omega is not None else None,
        "classes": [
            {
                "index": idx,
                "weight": float(omega.omega[idx]) if omega is not None else None,
                "role": "shared" if idx in shared else "outlier",
            }
            for idx in range(task.k_source)
        ],
        "final_target_accuracy": report.final_target_accuracy,
        "final_source_accuracy": report.final_source_accuracy,
        "generalization_gap": metrics.generalization_gap,
    }
    _write_json(weights_path, weights_payload)

    plans_path = os.path.join(out_dir, "plans.json")
    plans = report.final_plans or {}
    plans_payload = {name: _plan_payload(values) for name, values in plans.items()}
    _write_json(plans_path, plans_payload)

    manifest_path = _write_manifest(
        out_dir,
        "run",
        cfg,
        {"train": train_seconds, "evaluate": evaluate_seconds},
        [report_path, weights_path, plans_path],
        extra={
            "final_target_accuracy": report.final_target_accuracy,
            "final_source_accuracy": report.final_source_accuracy,
        },
    )
    logger.info(
        "run finished: target accuracy %.4f (source %.4f), outputs in %s",
        report.final_target_accuracy,
        report.final_source_accuracy,
        out_dir,
    )
    return {
        "report": report_path,
        "weights": weights_path,
        "plans": plans_path,
        "manifest": manifest_path,
        "final_target_accuracy": report.final_target_accuracy,
    }


def _ablation_cells(cfg):
    """Cell name -> config for the ablation battery.

    The 2x2x2 grid varies the balance mode, the cost, and the class
    weights (transport loss active throughout); extra cells isolate the
    weights-only and all-off variants, the source-only baseline, and the
    fast/oracle kernel timing pair.
    """
    cells = {}
    for balance in ("uot", "ot"):
        for cost in ("label_aware", "squared_euclidean"):
            for use_w in (True, False):
                name = f"{balance}_{cost}_w{'on' if use_w else 'off'}"
                cells[name] = cfg.replace(
                    solver={"balance_mode": balance, "cost_mode": cost},
                    training={"use_weights": use_w, "use_buot_loss": True},
                )
    cells["weights_only"] = cfg.replace(training={"use_weights": True, "use_buot_loss": False})
    cells["all_off"] = cfg.replace(
        training={"use_weights": False, "use_buot_loss": False, "lambda_t": 0.0}
    )
    cells["source_only"] = source_only_config(cfg)
    cells["kernel_fast"] = cfg.replace(solver={"kernel_mode": "fast"})
    cells["kernel_oracle"] = cfg.replace(solver={"kernel_mode": "oracle"})
    return cells


def _run_cell(args):
    """One ablation cell over all its seeds (top level so workers can pickle it)."""
    name, cfg, seeds = args
    accs, kernel_rates = [], []
    try:
        for seed in seeds:
            cell = cfg.replace(task={"task_seed": seed}, training={"train_seed": seed})
            task = generate_task(
                cell.task.k_source,
                cell.task.k_target,
                cell.task.n_s,
                cell.task.n_t,
                cell.task.d,
                cell.task.shift_scale,
                cell.task.task_seed,
            )
            _, report = train(task, cell)
            accs.append(report.final_target_accuracy)
            kernel_rates.append(report.kernel_seconds_per_iteration)
        return {
            "cell": name,
            "cfg": cfg,
            "accs": accs,
            "kernel_rates": kernel_rates,
            "status": "ok",
        }
    except Exception as exc:  # failed cells are recorded, the battery proceeds
        return {"cell": name, "cfg": cfg, "accs": accs, "kernel_rates": [], "status": f"error: {exc}"}


def run_ablation(cfg, out_dir, seeds, workers=1):
    """Run the ablation battery and emit ablation.csv plus a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    cells = _ablation_cells(cfg)
    jobs = [(name, cell_cfg, list(seeds)) for name, cell_cfg in cells.items()]

    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    battery_seconds = time.perf_counter() - t0

    rows = []
    for res in results:
        cell_cfg = res["cfg"]
        accs = res["accs"]
        rows.append(
            [
                res["cell"],
                cell_cfg.solver.balance_mode,
                cell_cfg.solver.cost_mode,
                cell_cfg.training.use_weights,
                cell_cfg.training.use_buot_loss,
                cell_cfg.solver.kernel_mode,
                len(accs),
                float(np.mean(accs)) if accs else None,
                float(np.std(accs)) if accs else None,
                float(np.mean(res["kernel_rates"])) if res["kernel_rates"] else None,
                res["status"],
            ]
        )
        logger.info("ablation cell %s: %s", res["cell"], res["status"])

    ablation_path = os.path.join(out_dir, "ablation.csv")
    _write_csv(ablation_path, ABLATION_COLUMNS, rows)
    manifest_path = _write_manifest(
        out_dir, "ablate", cfg, {"battery": battery_seconds}, [ablation_path]
    )
    return {"ablation": ablation_path, "manifest": manifest_path, "rows": rows}


def run_sweep(cfg, out_dir, axis, seeds):
    """Sweep one axis (``k_target`` or ``lambda``) and emit sweep.csv."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    summary_rows = []
    t0 = time.perf_counter()

    if axis == "k_target":
        k_values = cfg.sweep.resolved_k_targets(cfg.task.k_source)
        result = sweep_target_classes(cfg, k_values, seeds)
        for r in result.rows:
            rows.append(["k_target", r.k_target, r.seed, r.accuracy, r.baseline_accuracy])
        for s in result.summary:
            summary_rows.append(
                [
                    "k_target",
                    s["k_target"],
                    s["mean_accuracy"],
                    s["ci95_accuracy"],
                    s["mean_baseline"],
                    s["ci95_baseline"],
                    s["mean_margin"],
                ]
            )
        extra = {"trend_correlation": result.trend_correlation}
    elif axis == "lambda":
        extra = {}
        baselines = {}
        for seed in seeds:
            cell = cfg.replace(task={"task_seed": seed}, training={"train_seed": seed})
            task = generate_task(
                cell.task.k_source,
                cell.task.k_target,
                cell.task.n_s,
                cell.task.n_t,
                cell.task.d,
                cell.task.shift_scale,
                cell.task.task_seed,
            )
            _, base_report = train(task, source_only_config(cell))
            baselines[seed] = (task, base_report.final_target_accuracy)
        for lam in cfg.sweep.lambda_values:
            accs = []
            for seed in seeds:
                task, base_acc = baselines[seed]
                cell = cfg.replace(
                    task={"task_seed": seed},
                    training={"train_seed": seed, "lambda_buot": float(lam)},
                )
                _, report = train(task, cell)
                rows.append(["lambda", lam, seed, report.final_target_accuracy, base_acc])
                accs.append(report.final_target_accuracy)
            summary_rows.append(
                ["lambda", lam, float(np.mean(accs)), None, None, None, None]
            )
    else:
        raise ConfigValidationError(f"sweep axis must be 'k_target' or 'lambda', got {axis!r}")

    sweep_seconds = time.perf_counter() - t0
    sweep_path = os.path.join(out_dir, "sweep.csv")
    _write_csv(sweep_path, SWEEP_COLUMNS, rows)
    summary_path = os.path.join(out_dir, "sweep_summary.csv")
    _write_csv(
        summary_path,
        ["axis", "value", "acc_mean", "acc_ci95", "baseline_mean", "baseline_ci95", "margin_mean"],
        summary_rows,
    )
    manifest_path = _write_manifest(
        out_dir, "sweep", cfg, {"sweep": sweep_seconds}, [sweep_path, summary_path], extra=extra
    )
    return {"sweep": sweep_path, "summary": summary_path, "manifest": manifest_path, "rows": rows}


def _parse_seeds(raw):
    try:
        return [int(part) for part in raw.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ConfigParseError(f"--seeds must be comma-separated integers, got {raw!r}") from exc


def build_parser():
    parser = argparse.ArgumentParser(prog="buot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to the experiment config file")
        p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
        p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seed list")
        p.add_argument("--workers", type=int, default=1, help="parallel worker slots")

    add_common(sub.add_parser("run", help="single training run"))
    add_common(sub.add_parser("ablate", help="component/solver/cost/kernel ablation battery"))
    sweep_p = sub.add_parser("sweep", help="sweep one config axis")
    add_common(sweep_p)
    sweep_p.add_argument("--axis", choices=("k_target", "lambda"), default="k_target")
    vc = sub.add_parser("validate-config", help="parse, validate, and echo the resolved config")
    vc.add_argument("--config", required=True)
    sub.add_parser("version", help="print the artifact version")
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "version":
        print(__version__)
        return 0

    try:
        cfg = load_config(args.config)
    except ConfigParseError as exc:
        print(f"config parse error: {exc}", file=sys.stderr)
        return 1
    except ConfigValidationError as exc:
        print(f"config validation error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate-config":
        sys.stdout.write(dumps_config(cfg))
        return 0

    out_dir = args.out if args.out is not None else cfg.output.directory
    try:
        seeds = _parse_seeds(args.seeds)
    except ConfigParseError as exc:
        print(f"config parse error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "run":
            run_single(cfg, out_dir)
        elif args.command == "ablate":
            run_ablation(cfg, out_dir, seeds, workers=args.workers)
        elif args.command == "sweep":
            run_sweep(cfg, out_dir, args.axis, seeds)
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command}")
    except ConfigValidationError as exc:
        print(f"config validation error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
