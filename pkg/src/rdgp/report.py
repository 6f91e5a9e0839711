"""Result files: one JSON metrics file per run, a config echo, CSV curves."""

import csv
from importlib import metadata
import json
import math
from pathlib import Path
import subprocess

import numpy as np
import torch

from .config import config_to_dict, dump_config

METRIC_KEYS = ("nlpd", "mse", "elbo_trace", "regret_trace", "uncertainty")


def version_stamp():
    """``<package version>+g<commit>`` when run from a git checkout."""
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "0+unknown"
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{version}+g{rev}" if rev else version


def _plain(obj):
    """JSON-safe copy; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, torch.Tensor):
        return _plain(obj.tolist())
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, payload):
    Path(path).write_text(json.dumps(_plain(payload), indent=2) + "\n", encoding="utf-8")


def write_table(path, rows):
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow(_plain(row))


def _run_name(run, i):
    parts = [f"{k}{run[k]}" for k in ("n_train", "layers", "seed") if k in run]
    return "_".join(parts) if parts else f"run{i}"


def emit_report(results, out_dir, config):
    """Write ``metrics.json``, ``config.yaml``, per-run files and CSV tables.

    Returns the path of the metrics file.  The directory is created; an
    unwritable location raises ``OSError``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = dict(results)
    tables = results.pop("tables", {})
    runs = results.get("runs")
    header = {"version": version_stamp(), "seed": config.seed, "config": config_to_dict(config)}
    if isinstance(runs, list) and runs:
        run_dir = out / "runs"
        run_dir.mkdir(exist_ok=True)
        for i, run in enumerate(runs):
            write_json(run_dir / f"{_run_name(run, i)}.json", {**header, **run, "seed": run.get("seed", config.seed)})
        if len(runs) == 1:
            for key in METRIC_KEYS:
                if key in runs[0]:
                    results.setdefault(key, runs[0][key])
    metrics = out / "metrics.json"
    write_json(metrics, {**header, **results})
    dump_config(config, out / "config.yaml")
    for name, rows in tables.items():
        write_table(out / f"{name}.csv", rows)
    return metrics
