"""Experiment orchestration: dataset construction, sweep cells, persistence.

Every runner emits a :class:`RunRecord` whose metric rows follow the fixed
CSV schema ``run_id,config_hash,seed,split,epoch,metric,value``; the metric
column carries a path-like name (e.g. ``shape/frac=1.00/val_acc`` or
``noise/shape_bias``) so the flat schema can host sweep axes. Sweep cells
write completion markers into ``<output_dir>/cells/`` and are skipped on
resume.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..augment import AugmentPipeline, apply_pipeline, pipeline_from_config
from ..bias import compute_bias_report
from ..engine import LrSchedule
from ..models import (
    Model,
    ModelSpec,
    TrainConfig,
    build_model,
    evaluate_accuracy,
    load_model,
    save_model,
    train_model,
)
from ..probes import ProbeConfig, extract_features, knn_probe, probe_splits, train_linear_probe
from ..stats import permutation_test_bias
from ..stimuli import (
    CorruptionConfig,
    NavonConfig,
    PatchworkConfig,
    SplitPlan,
    StimulusSet,
    generate_corruption_set,
    generate_navon,
    generate_patchwork,
    make_split,
    read_dataset,
    subsample_fraction,
)
from .config import DatasetSection, ExperimentConfig, config_hash, resolved_dict


@dataclass
class RunRecord:
    run_id: str
    config_hash: str
    source_version: str
    seeds: tuple
    resolved_config: dict
    metrics_rows: list[dict] = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    partial: bool = False

    def add_row(self, seed, split, epoch, metric, value) -> None:
        self.metrics_rows.append(
            {
                "run_id": self.run_id,
                "config_hash": self.config_hash,
                "seed": seed,
                "split": split,
                "epoch": epoch,
                "metric": metric,
                "value": value,
            }
        )


def build_stimulus_set(section: DatasetSection) -> StimulusSet:
    if section.generator == "navon":
        return generate_navon(
            NavonConfig(
                alphabet_size=section.alphabet_size,
                positions=section.positions,
                extent=section.extent,
                cell_extent=section.cell_extent,
                seed=section.seed,
            )
        )
    if section.generator == "patchwork":
        return generate_patchwork(
            PatchworkConfig(
                silhouettes=tuple(section.silhouettes),
                textures=tuple(section.textures),
                exemplars_per_cell=section.exemplars_per_cell,
                pairing=section.pairing,
                extent=section.extent,
                seed=section.seed,
            )
        )
    if section.generator == "corruption":
        base = read_dataset(section.base_manifest)
        return generate_corruption_set(
            base, CorruptionConfig(corruptions=tuple(section.corruptions), seed=section.seed)
        )
    return read_dataset(section.path)


def _model_spec(config: ExperimentConfig, class_count: int) -> ModelSpec:
    return ModelSpec(
        family=config.model.family,
        class_count=class_count,
        input_extent=config.dataset.extent,
        width=config.model.width,
        patch_bound=config.model.patch_bound,
    )


def _train_config(config: ExperimentConfig, seed: int, pipeline: AugmentPipeline | None) -> TrainConfig:
    t = config.training
    schedule = None
    if t.schedule == "step_decay":
        schedule = LrSchedule(
            "step_decay",
            base_rate=t.learning_rate,
            decay_epochs=tuple(t.decay_epochs),
            decay_factor=t.decay_factor,
        )
    elif t.schedule == "cosine_decay":
        schedule = LrSchedule("cosine_decay", base_rate=t.learning_rate, total_steps=max(1, t.epochs))
    return TrainConfig(
        optimizer=t.optimizer,
        learning_rate=t.learning_rate,
        momentum=t.momentum,
        weight_decay=t.weight_decay,
        epochs=t.epochs,
        batch_size=t.batch_size,
        schedule=schedule,
        augment=pipeline,
        seed=seed,
        precision=t.precision,
        restore_best=t.restore_best,
    )


def _pipeline(config: ExperimentConfig, entries, seed: int) -> AugmentPipeline | None:
    entries = list(entries)
    if not entries:
        return None
    return pipeline_from_config(entries, seed=seed, target_extent=config.dataset.extent)


def random_train_val_split(stimulus_set: StimulusSet, val_fraction: float, seed: int) -> SplitPlan:
    """Plain random carve-out (bias-sweep training sets), keeping every class
    represented in train."""
    items = stimulus_set.items
    rng = np.random.default_rng([seed, 41])
    order = rng.permutation(len(items))
    n_val = max(1, int(round(val_fraction * len(items))))
    val_idx = set(order[:n_val].tolist())
    train = [items[i] for i in range(len(items)) if i not in val_idx]
    val = [items[i] for i in sorted(val_idx)]
    missing = {it.shape_label for it in items} - {it.shape_label for it in train}
    if missing:
        raise ValueError(f"validation carve-out emptied class(es) {sorted(missing)}")
    return SplitPlan(
        task="shape",
        train_ids=tuple(it.id for it in train),
        val_ids=tuple(it.id for it in val),
        mode="class_holdout",
        seed=seed,
    )


# ---------------------------------------------------------------------------
# learning dynamics (data efficiency + time course)
# ---------------------------------------------------------------------------

def run_learning_dynamics(config: ExperimentConfig) -> RunRecord:
    t0 = time.time()
    chash = config_hash(config)
    record = RunRecord(
        run_id=f"ld-{chash[:12]}",
        config_hash=chash,
        source_version=__version__,
        seeds=tuple(config.seeds),
        resolved_config=resolved_dict(config),
    )
    dataset = build_stimulus_set(config.dataset)
    out = Path(config.output_dir)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)

    tables: dict[str, dict[float, list[float]]] = {t: {} for t in config.sweep.tasks}
    n_classes = {
        "shape": len(dataset.shape_classes),
        "texture": len(dataset.texture_classes),
    }
    for task in config.sweep.tasks:
        for fraction in config.sweep.fractions:
            accs = []
            for split_index, seed in enumerate(config.seeds):
                cell_name = f"{task}-frac{fraction:.4f}-split{split_index}"
                marker = cells_dir / f"{cell_name}.json"
                if marker.exists():
                    payload = json.loads(marker.read_text())
                else:
                    payload = _learning_cell(config, dataset, task, fraction, split_index, seed)
                    marker.write_text(json.dumps(payload))
                accs.append(payload["max_val_acc"])
                for row in payload["epoch_rows"]:
                    record.add_row(
                        seed,
                        split_index,
                        row["epoch"],
                        f"{task}/frac={fraction:.2f}/{row['metric']}",
                        row["value"],
                    )
                record.add_row(
                    seed, split_index, -1, f"{task}/frac={fraction:.2f}/max_val_acc", payload["max_val_acc"]
                )
            tables[task][fraction] = accs
    summary = {
        task: {
            f"{fraction:.4f}": {
                "mean": float(np.mean(accs)),
                "sd": float(np.std(accs)),
                "per_split": accs,
                "chance": 1.0 / n_classes[task],
            }
            for fraction, accs in by_frac.items()
        }
        for task, by_frac in tables.items()
    }
    record.reports["data_efficiency"] = summary
    record.wall_clock_s = time.time() - t0
    return record


def _learning_cell(config, dataset, task, fraction, split_index, seed):
    if config.splits.mode == "exemplar_holdout":
        plan = make_split(dataset, task, holdout="exemplar", seed=split_index)
    else:
        plan = make_split(dataset, task, holdout=config.splits.holdout_classes, seed=split_index)
    plan = subsample_fraction(dataset, plan, fraction, seed=seed)
    spec = _model_spec(config, len(dataset.shape_classes if task == "shape" else dataset.texture_classes))
    model = build_model(spec, seed=seed, precision=config.training.precision)
    pipeline = _pipeline(config, config.augmentation, seed)
    result = train_model(model, dataset, plan, task, _train_config(config, seed, pipeline))
    epoch_rows = []
    for m in result.metrics:
        for metric, value in (
            ("train_loss", m.train_loss),
            ("train_acc", m.train_acc),
            ("val_loss", m.val_loss),
            ("val_acc", m.val_acc),
        ):
            epoch_rows.append({"epoch": m.epoch, "metric": metric, "value": value})
    return {
        "max_val_acc": result.max_val_acc,
        "best_epoch": result.best_epoch,
        "train_size": len(plan.train_ids),
        "val_size": len(plan.val_ids),
        "epoch_rows": epoch_rows,
    }


# ---------------------------------------------------------------------------
# bias sweep (augmentation ladder / crop area / lr x wd)
# ---------------------------------------------------------------------------

def _sweep_cells(config: ExperimentConfig) -> list[dict]:
    sweep = config.sweep
    cells: list[dict] = []
    if sweep.augmentation_ladder:
        for entry in sweep.augmentation_ladder:
            entry = dict(entry)
            cells.append(
                {"name": str(entry["name"]), "ops": list(entry.get("ops", ())), "training": {}}
            )
    elif sweep.min_areas:
        base = [dict(e) for e in config.augmentation]
        if not any(e.get("op") == "random_resized_crop" for e in base):
            base.insert(0, {"op": "random_resized_crop", "p": 1.0, "min_area": 0.08})
        for area in sweep.min_areas:
            ops = []
            for e in base:
                e = dict(e)
                if e.get("op") == "random_resized_crop":
                    e["min_area"] = float(area)
                ops.append(e)
            cells.append({"name": f"min_area={area:g}", "ops": ops, "training": {}})
    elif sweep.learning_rates and sweep.weight_decays:
        for lr in sweep.learning_rates:
            for wd in sweep.weight_decays:
                cells.append(
                    {
                        "name": f"lr={lr:g}-wd={wd:g}",
                        "ops": [dict(e) for e in config.augmentation],
                        "training": {"learning_rate": float(lr), "weight_decay": float(wd)},
                    }
                )
    else:
        cells.append({"name": "baseline", "ops": [dict(e) for e in config.augmentation], "training": {}})
    return cells


def _bias_cell(args):
    """One (cell, seed) bias-sweep unit; top level so worker pools can run it."""
    config, cell, seed = args
    train_set = build_stimulus_set(config.dataset)
    eval_section = config.eval_dataset or config.dataset
    eval_set = build_stimulus_set(eval_section)
    plan = random_train_val_split(train_set, config.splits.val_fraction, seed)
    spec = _model_spec(config, len(train_set.shape_classes))
    model = build_model(spec, seed=seed, precision=config.training.precision)
    pipeline = _pipeline(config, cell["ops"], seed)
    tc = _train_config(config, seed, pipeline)
    overrides = cell.get("training", {})
    if overrides:
        import dataclasses as _dc

        tc = _dc.replace(tc, **overrides)
    result = train_model(model, train_set, plan, "shape", tc)
    _, records = evaluate_accuracy(model, eval_set.items, "shape")
    report = compute_bias_report(records)
    epoch_rows = [
        {"epoch": m.epoch, "metric": metric, "value": value}
        for m in result.metrics
        for metric, value in (("train_acc", m.train_acc), ("val_acc", m.val_acc))
    ]
    return {
        "cell": cell["name"],
        "seed": seed,
        "max_val_acc": result.max_val_acc,
        "shape_match": report.shape_match,
        "texture_match": report.texture_match,
        "shape_bias": report.shape_bias,
        "decisions": report.decisions,
        "epoch_rows": epoch_rows,
    }


def run_bias_sweep(config: ExperimentConfig) -> RunRecord:
    t0 = time.time()
    chash = config_hash(config)
    record = RunRecord(
        run_id=f"bias-{chash[:12]}",
        config_hash=chash,
        source_version=__version__,
        seeds=tuple(config.seeds),
        resolved_config=resolved_dict(config),
    )
    out = Path(config.output_dir)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    cells = _sweep_cells(config)

    pending = []
    for cell in cells:
        for seed in config.seeds:
            marker = cells_dir / f"{_safe(cell['name'])}-s{seed}.json"
            if not marker.exists():
                pending.append((cell, seed, marker))
    if pending:
        args = [(config, cell, seed) for cell, seed, _ in pending]
        if config.jobs > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                outputs = list(pool.map(_bias_cell, args))
        else:
            outputs = [_bias_cell(a) for a in args]
        for (_, _, marker), payload in zip(pending, outputs):
            marker.write_text(json.dumps(payload))

    results: dict[str, dict[int, dict]] = {}
    for cell in cells:
        for seed in config.seeds:
            marker = cells_dir / f"{_safe(cell['name'])}-s{seed}.json"
            payload = json.loads(marker.read_text())
            results.setdefault(cell["name"], {})[seed] = payload
            for row in payload["epoch_rows"]:
                record.add_row(seed, 0, row["epoch"], f"{cell['name']}/{row['metric']}", row["value"])
            for metric in ("max_val_acc", "shape_match", "texture_match", "shape_bias"):
                if payload[metric] is not None:
                    record.add_row(seed, 0, -1, f"{cell['name']}/{metric}", payload[metric])

    baseline_name = cells[0]["name"]
    summary = {}
    tests = {}
    for cell in cells:
        name = cell["name"]
        by_seed = results[name]
        biases = [v["shape_bias"] for v in by_seed.values() if v["shape_bias"] is not None]
        summary[name] = {
            "shape_bias_mean": float(np.mean(biases)) if biases else None,
            "shape_bias_sd": float(np.std(biases)) if biases else None,
            "shape_match_mean": float(np.mean([v["shape_match"] for v in by_seed.values()])),
            "texture_match_mean": float(np.mean([v["texture_match"] for v in by_seed.values()])),
            "max_val_acc_mean": float(np.mean([v["max_val_acc"] for v in by_seed.values()])),
            "per_seed": {
                str(seed): {
                    key: by_seed[seed][key]
                    for key in ("max_val_acc", "shape_match", "texture_match", "shape_bias")
                }
                for seed in by_seed
            },
        }
        if name != baseline_name and len(cells) > 1:
            pooled_cell = _pooled_decisions(by_seed)
            pooled_base = _pooled_decisions(results[baseline_name])
            test = permutation_test_bias(
                pooled_cell,
                pooled_base,
                n_permutations=config.permutation.count,
                seed=config.seeds[0],
                direction=config.permutation.direction,
            )
            tests[name] = {
                "observed_diff": test.observed,
                "p_value": test.p_value,
                "n_permutations": test.n_permutations,
                "direction": test.direction,
                "baseline": baseline_name,
            }
            record.add_row(config.seeds[0], 0, -1, f"{name}/perm_p_vs_{baseline_name}", test.p_value)
    record.reports["bias_sweep"] = summary
    if tests:
        record.reports["permutation_tests"] = tests
    record.wall_clock_s = time.time() - t0
    return record


def _pooled_decisions(by_seed: dict[int, dict]) -> list[dict]:
    pooled = []
    for seed, payload in sorted(by_seed.items()):
        for d in payload["decisions"]:
            pooled.append({"id": f"{d['id']}@s{seed}", "matched": d["matched"]})
    return pooled


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_=." else "_" for c in name)


# ---------------------------------------------------------------------------
# decoding (linear / knn probes over taps)
# ---------------------------------------------------------------------------

def run_decoding(config: ExperimentConfig) -> RunRecord:
    t0 = time.time()
    chash = config_hash(config)
    record = RunRecord(
        run_id=f"dec-{chash[:12]}",
        config_hash=chash,
        source_version=__version__,
        seeds=tuple(config.seeds),
        resolved_config=resolved_dict(config),
    )
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    eval_section = config.eval_dataset or config.dataset
    probe_set = build_stimulus_set(eval_section)

    if config.model.checkpoint:
        model = load_model(config.model.checkpoint)
    else:
        train_set = build_stimulus_set(config.dataset)
        plan = random_train_val_split(train_set, config.splits.val_fraction, config.seeds[0])
        spec = _model_spec(config, len(train_set.shape_classes))
        model = build_model(spec, seed=config.seeds[0], precision=config.training.precision)
        pipeline = _pipeline(config, config.augmentation, config.seeds[0])
        result = train_model(model, train_set, plan, "shape", _train_config(config, config.seeds[0], pipeline))
        record.reports["base_model"] = {
            "max_val_acc": result.max_val_acc,
            "best_epoch": result.best_epoch,
        }
        _, records = evaluate_accuracy(model, probe_set.items, "shape")
        bias = compute_bias_report(records)
        record.reports["base_model"]["shape_bias"] = bias.shape_bias
        record.reports["base_model"]["shape_match"] = bias.shape_match
        record.reports["base_model"]["texture_match"] = bias.texture_match

    ckpt_path = out / "base_model.ckpt"
    save_model(ckpt_path, model)
    hash_before = hashlib.sha256(ckpt_path.read_bytes()).hexdigest()

    splits = probe_splits(probe_set, config.splits.n_splits, seed=config.seeds[0])
    probe_results = {}
    for tap in config.sweep.taps:
        features, labels = extract_features(model, probe_set, tap)
        for task in ("shape", "texture"):
            pcfg = ProbeConfig(
                tap=tap,
                task=task,
                kind="linear",
                learning_rate=config.sweep.probe_learning_rate,
                epochs=config.sweep.probe_epochs,
                n_splits=config.splits.n_splits,
                seed=config.seeds[0],
            )
            if "linear" in config.sweep.probe_kinds:
                rep = train_linear_probe(features, labels[task], splits, probe_set, pcfg)
                probe_results[f"{tap}/{task}/linear"] = rep.to_json_dict()
                record.add_row(config.seeds[0], -1, -1, f"{tap}/{task}/linear/mean_acc", rep.mean)
                record.add_row(config.seeds[0], -1, -1, f"{tap}/{task}/linear/sd", rep.sd)
                for k, acc in enumerate(rep.per_split):
                    record.add_row(config.seeds[0], k, -1, f"{tap}/{task}/linear/acc", acc)
        if "knn" in config.sweep.probe_kinds:
            pcfg = ProbeConfig(tap=tap, task="shape", kind="knn", k=config.sweep.knn_k)
            rep = knn_probe(features, probe_set, pcfg)
            probe_results[f"{tap}/knn"] = rep.to_json_dict()
            for cat, frac in rep.fractions.items():
                record.add_row(config.seeds[0], -1, -1, f"{tap}/knn/{cat}", frac)

    hash_after = hashlib.sha256(ckpt_path.read_bytes()).hexdigest()
    save_model(out / "base_model_after_probing.ckpt", model)
    hash_recheck = hashlib.sha256((out / "base_model_after_probing.ckpt").read_bytes()).hexdigest()
    record.reports["probes"] = probe_results
    record.reports["frozen_trunk"] = {
        "hash_before": hash_before,
        "hash_after_probing": hash_recheck,
        "unchanged": hash_before == hash_recheck and hash_before == hash_after,
    }
    record.wall_clock_s = time.time() - t0
    return record


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def emit_results(record: RunRecord, directory: str | Path) -> list[Path]:
    """Write metrics.csv, report.json, and the resolved config; idempotent."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    rows = sorted(
        record.metrics_rows,
        key=lambda r: (str(r["metric"]), int(r["seed"]), int(r["split"]), int(r["epoch"])),
    )
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "config_hash", "seed", "split", "epoch", "metric", "value"])
        for row in rows:
            writer.writerow(
                [
                    row["run_id"],
                    row["config_hash"],
                    row["seed"],
                    row["split"],
                    row["epoch"],
                    row["metric"],
                    f"{row['value']:.10g}" if isinstance(row["value"], float) else row["value"],
                ]
            )
    report_path = out / "report.json"
    report_path.write_text(
        json.dumps(
            {
                "run_id": record.run_id,
                "config_hash": record.config_hash,
                "source_version": record.source_version,
                "seeds": list(record.seeds),
                "wall_clock_s": record.wall_clock_s,
                "partial": record.partial,
                "reports": record.reports,
            },
            indent=1,
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    config_path = out / "resolved_config.json"
    config_path.write_text(
        json.dumps(record.resolved_config, indent=1, sort_keys=True), encoding="utf-8"
    )
    return [metrics_path, report_path, config_path]


RUNNERS = {
    "learning_dynamics": run_learning_dynamics,
    "bias_sweep": run_bias_sweep,
    "decoding": run_decoding,
}


def run_experiment(config: ExperimentConfig) -> RunRecord:
    record = RUNNERS[config.kind](config)
    emit_results(record, config.output_dir)
    return record
