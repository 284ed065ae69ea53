"""Sweep configuration, run persistence and the high-level commands."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from . import stats
from .data import PROFILES, RECIPES, ImageDataset, load_cifar_binary, make_synthetic_split
from .report import layer_line_chart, seed_dot_plot
from .reproduce import format_checks, reference_checks
from .training import RunRecord, TrainConfig, run_seeded_experiment
from .vit import EncoderConfig

log = logging.getLogger(__name__)

RUN_SCHEMA = "cfflab.run/1"
OUT_ENV = "CFFLAB_OUT"


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class DataSpec:
    kind: str = "synthetic"
    profile: str = "synthetic"
    recipe: str | None = None
    num_classes: int = 3
    train_per_class: int = 100
    test_per_class: int = 50
    image_size: int = 8
    noise_std: float = 0.15
    data_seed: int = 0
    train_files: list[str] = field(default_factory=list)
    test_file: str | None = None
    limit_train: int | None = None
    limit_test: int | None = None


@dataclass
class ExperimentConfig:
    data: DataSpec
    encoder: EncoderConfig
    train: TrainConfig
    cells: list[str]
    seeds: list[int]
    output_dir: str = "runs"

    def cell_train_config(self, cell: str, seed: int) -> TrainConfig:
        margin_type, _, mode = cell.partition("_")
        params = {f.name: getattr(self.train, f.name) for f in fields(TrainConfig)}
        params.update(margin_type=margin_type, stability_mode=mode, seed=seed)
        return TrainConfig(**params)

    def augment_config(self):
        return PROFILES[self.data.profile].augment_config(self.data.recipe)


def _build(cls, raw: Any, path: str, renames: Mapping[str, str] | None = None):
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(path, "expected a mapping")
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = (renames or {}).get(key, key)
        if name not in known:
            raise ConfigError(f"{path}.{key}", "unknown field")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_config(raw: Mapping) -> ExperimentConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = set(raw) - {"data", "encoder", "train", "margin", "cells", "seeds", "output_dir", "diagnostics"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")

    data = _build(DataSpec, raw.get("data"), "data")
    if data.kind not in ("synthetic", "cifar"):
        raise ConfigError("data.kind", "must be 'synthetic' or 'cifar'")
    if data.profile not in PROFILES:
        raise ConfigError("data.profile", f"unknown profile {data.profile!r}")
    if data.recipe is not None and data.recipe not in RECIPES:
        raise ConfigError("data.recipe", f"unknown recipe {data.recipe!r}")
    if data.kind == "cifar" and (not data.train_files or not data.test_file):
        raise ConfigError("data.train_files", "cifar data needs train_files and test_file")

    encoder = _build(EncoderConfig, raw.get("encoder"), "encoder")
    train_raw = dict(raw.get("train") or {})
    for key in ("seed", "margin_type", "stability_mode"):
        if key in train_raw:
            raise ConfigError(f"train.{key}", "set through cells/seeds instead")
    margin = raw.get("margin") or {}
    if not isinstance(margin, Mapping) or set(margin) - {"first", "last"}:
        raise ConfigError("margin", "expected {first, last}")
    if "first" in margin:
        train_raw["margin_first"] = margin["first"]
    if "last" in margin:
        train_raw["margin_last"] = margin["last"]
    diag = raw.get("diagnostics") or {}
    if "epochs" in diag:
        train_raw["diagnostic_epochs"] = diag["epochs"]
    train = _build(TrainConfig, train_raw, "train")

    cells = raw.get("cells", ["clamp_detach", "subtract_detach"])
    if not isinstance(cells, list):
        raise ConfigError("cells", "expected a list")
    if not cells:
        raise ConfigError("cells", "expected at least one cell")
    if len(set(cells)) != len(cells):
        raise ConfigError("cells", "cell labels must be unique")
    for i, cell in enumerate(cells):
        mt, _, mode = str(cell).partition("_")
        if mt not in ("clamp", "subtract", "none") or mode not in ("detach", "direct"):
            raise ConfigError(f"cells[{i}]", f"bad cell label {cell!r}; use <clamp|subtract|none>_<detach|direct>")
    seeds = raw.get("seeds", [1, 2, 3])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "expected a non-empty list of integers")
    return ExperimentConfig(data, encoder, train, list(cells), list(seeds), raw.get("output_dir", "runs"))


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(str(path), str(exc)) from exc
    return parse_config(raw or {})


def load_datasets(spec: DataSpec) -> tuple[ImageDataset, ImageDataset]:
    if spec.kind == "synthetic":
        return make_synthetic_split(spec.num_classes, spec.train_per_class, spec.test_per_class,
                                    spec.image_size, spec.noise_std, spec.data_seed)
    parts = [load_cifar_binary(p, spec.num_classes) for p in spec.train_files]
    train = ImageDataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]),
                         spec.num_classes, "train")
    test = load_cifar_binary(spec.test_file, spec.num_classes)
    if spec.limit_train:
        train = train.subset(np.arange(min(spec.limit_train, len(train))))
    if spec.limit_test:
        test = test.subset(np.arange(min(spec.limit_test, len(test))))
    return train, test


# ---------------------------------------------------------------------------
# run persistence


def run_filename(condition: str, seed: int) -> str:
    return f"{condition}__seed{seed}.json"


def write_record(record: RunRecord, directory) -> Path:
    """Atomic write: temp file in the same directory, then rename."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    final = directory / run_filename(record.condition, record.seed)
    tmp = final.with_name(final.name + f".tmp{os.getpid()}")
    tmp.write_text(json.dumps({"schema": RUN_SCHEMA, **record.to_dict()}, indent=2))
    tmp.replace(final)
    return final


def read_record(path) -> RunRecord:
    data = json.loads(Path(path).read_text())
    if data.pop("schema", None) != RUN_SCHEMA:
        raise ValueError(f"{path}: not a {RUN_SCHEMA} record")
    return RunRecord.from_dict(data)


def read_records(directory) -> list[RunRecord]:
    directory = Path(directory)
    runs = directory / "runs" if (directory / "runs").is_dir() else directory
    return [read_record(p) for p in sorted(runs.glob("*__seed*.json"))]


def write_wide_manifest(rows: Sequence[Mapping], path) -> None:
    """``condition,S1..Sn`` layout, one row per condition."""
    by_cond: dict[str, dict[int, str]] = {}
    seeds = sorted({r["seed"] for r in rows})
    for r in rows:
        acc = r.get("test_accuracy")
        ok = r.get("status", "ok") == "ok" and acc is not None and np.isfinite(acc)
        by_cond.setdefault(r["condition"], {})[r["seed"]] = f"{acc:.2f}" if ok else "NA"
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["condition"] + [f"S{s}" for s in seeds])
        for cond in sorted(by_cond):
            w.writerow([cond] + [by_cond[cond].get(s, "") for s in seeds])


def _execute(args) -> dict:
    cfg, cell, seed, runs_dir = args
    train, test = load_datasets(cfg.data)
    record = run_seeded_experiment(train, test, cfg.encoder, cfg.cell_train_config(cell, seed), cfg.augment_config())
    write_record(record, runs_dir)
    return {"condition": record.condition, "seed": record.seed,
            "test_accuracy": record.test_accuracy, "status": record.status}


def resolve_output_dir(cfg: ExperimentConfig, out: str | None = None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or cfg.output_dir)


def cmd_run(cfg: ExperimentConfig, out: str | None = None, jobs: int = 1,
            seeds: Sequence[int] | None = None) -> tuple[Path, list[dict]]:
    """Run every (cell, seed) pair not already on disk; rewrite the manifests."""
    out_dir = resolve_output_dir(cfg, out)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(seeds) if seeds else cfg.seeds
    todo = []
    for cell in cfg.cells:
        for seed in seeds:
            path = runs_dir / run_filename(cell, seed)
            if path.exists():
                try:
                    read_record(path)
                    continue
                except (ValueError, KeyError, TypeError, json.JSONDecodeError):
                    log.warning("rerunning unreadable record %s", path)
            todo.append((cfg, cell, seed, runs_dir))
    log.info("%d run(s) to execute, %d already complete", len(todo), len(cfg.cells) * len(seeds) - len(todo))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_execute, todo))
    else:
        for item in todo:
            _execute(item)

    rows = []
    for cell in cfg.cells:
        for seed in seeds:
            rec = read_record(runs_dir / run_filename(cell, seed))
            rows.append({"condition": rec.condition, "seed": rec.seed,
                         "test_accuracy": rec.test_accuracy, "status": rec.status})
    stats.write_manifest(rows, out_dir / "manifest.csv")
    write_wide_manifest(rows, out_dir / "manifest_wide.csv")
    return out_dir, rows


def cmd_audit(manifest, group_by: str = "margin", resamples: int = 10_000, seed: int = 0) -> stats.AuditReport:
    rows = stats.read_manifest(manifest)
    groups = stats.group_rows(rows, group_by)
    if len(groups) == 2:
        return stats.audit(rows, group_by, resamples, seed)
    # More than two groups: summaries only.
    return stats.audit(rows, group_by, resamples, seed)


def cmd_reproduce_paper_stats(seed: int = 0):
    checks = reference_checks(bootstrap_seed=seed)
    return checks, format_checks(checks)


def cmd_report(run_dir, group_by: str = "margin") -> list[Path]:
    """Write per-seed CSV, diagnostics CSV and SVG figures into ``run_dir/report``."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"{run_dir}: no such directory")
    records = read_records(run_dir)
    if records:
        rows = [{"condition": r.condition, "seed": r.seed, "test_accuracy": r.test_accuracy, "status": r.status}
                for r in records]
    elif (run_dir / "manifest.csv").exists():
        rows = stats.read_manifest(run_dir / "manifest.csv")
    else:
        raise FileNotFoundError(f"{run_dir}: no run records or manifest found")

    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    written = []
    per_seed = out / "per_seed.csv"
    stats.write_manifest(sorted(rows, key=lambda r: (r["condition"], r["seed"])), per_seed)
    written.append(per_seed)

    groups = stats.group_rows(rows, group_by)
    if groups:
        path = out / "seed_spread.svg"
        path.write_text(seed_dot_plot(groups, "Per-seed test accuracy"))
        written.append(path)

    diag_rows = []
    car: dict[str, list[np.ndarray]] = {}
    gnorm: dict[str, list[np.ndarray]] = {}
    for r in records:
        if not r.snapshots:
            continue
        label = stats.group_rows([{"condition": r.condition, "seed": r.seed, "test_accuracy": 0.0}], group_by)
        label = next(iter(label))
        for snap in r.snapshots:
            for l, (m, c, g) in enumerate(zip(snap.margin_per_layer, snap.per_layer_car, snap.per_layer_grad_norm)):
                diag_rows.append([r.condition, r.seed, snap.epoch, l, m, c, g])
        last = r.snapshots[-1]
        car.setdefault(label, []).append(np.asarray(last.per_layer_car))
        gnorm.setdefault(label, []).append(np.asarray(last.per_layer_grad_norm))
    if diag_rows:
        path = out / "diagnostics.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["condition", "seed", "epoch", "layer", "margin", "car", "grad_norm"])
            w.writerows(diag_rows)
        written.append(path)
        for name, data, ylabel, title in (("car_by_layer.svg", car, "CAR", "Clamp activation rate by layer"),
                                          ("grad_norm_by_layer.svg", gnorm, "gradient l2 norm",
                                           "Gradient norm by layer")):
            series = {k: np.mean(np.stack(v), axis=0) for k, v in data.items()}
            path = out / name
            path.write_text(layer_line_chart(series, title, ylabel))
            written.append(path)
    return written
