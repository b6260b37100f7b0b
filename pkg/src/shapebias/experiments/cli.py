"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical fault.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from ..engine import NumericalFault
from ..stimuli import (
    CorruptionConfig,
    DatasetError,
    NavonConfig,
    PatchworkConfig,
    generate_corruption_set,
    generate_navon,
    generate_patchwork,
    read_dataset,
    write_dataset,
)
from .config import ConfigError, ExperimentConfig, load_config
from .runner import RUNNERS, build_stimulus_set, emit_results, run_experiment

CONFIG_EXIT = 2
NUMERIC_EXIT = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="experiment config file (YAML/JSON)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed(s)")
    parser.add_argument("--out", type=str, default=None, help="override the output directory")
    parser.add_argument("--jobs", type=int, default=None, help="parallel sweep cells")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapebias", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-navon", help="generate a Navon cue-conflict dataset")
    _add_common(p)
    p.add_argument("--alphabet-size", type=int, default=26)
    p.add_argument("--positions", type=int, default=5)
    p.add_argument("--extent", type=int, default=64)

    p = sub.add_parser("gen-patchwork", help="generate a patchwork cue-conflict dataset")
    _add_common(p)
    p.add_argument("--pairing", choices=["conflict", "congruent"], default="conflict")
    p.add_argument("--exemplars", type=int, default=1)
    p.add_argument("--extent", type=int, default=64)

    p = sub.add_parser("gen-corruption", help="corrupt a clean dataset (noise as texture)")
    _add_common(p)
    p.add_argument("--base", type=str, required=True, help="base dataset manifest")

    p = sub.add_parser("train", help="train one model from a config")
    _add_common(p)

    p = sub.add_parser("eval-bias", help="score a checkpoint on a cue-conflict dataset")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--dataset", type=str, required=True, help="manifest path")
    p.add_argument("--superclass-map", type=str, default=None, help="JSON fine->super map")

    p = sub.add_parser("probe", help="run the decoding experiment from a config")
    _add_common(p)

    p = sub.add_parser("sweep", help="run the sweep experiment the config describes")
    _add_common(p)

    p = sub.add_parser("stats", help="permutation test between two decision-record CSVs")
    _add_common(p)
    p.add_argument("--records-a", type=str, required=True)
    p.add_argument("--records-b", type=str, required=True)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--direction", choices=["greater", "less"], default="greater")

    p = sub.add_parser("dump-augmented", help="write before/after augmentation image pairs")
    _add_common(p)
    p.add_argument("--count", type=int, default=16)
    return parser


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("this command needs --config")
    config = load_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["seeds"] = (args.seed,)
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    return dataclasses.replace(config, **updates) if updates else config


def _cmd_gen_navon(args) -> int:
    cfg = NavonConfig(
        alphabet_size=args.alphabet_size,
        positions=args.positions,
        extent=args.extent,
        seed=args.seed if args.seed is not None else 0,
    )
    manifest = write_dataset(generate_navon(cfg), args.out or "navon_dataset")
    print(manifest)
    return 0


def _cmd_gen_patchwork(args) -> int:
    cfg = PatchworkConfig(
        pairing=args.pairing,
        exemplars_per_cell=args.exemplars,
        extent=args.extent,
        seed=args.seed if args.seed is not None else 0,
    )
    manifest = write_dataset(generate_patchwork(cfg), args.out or "patchwork_dataset")
    print(manifest)
    return 0


def _cmd_gen_corruption(args) -> int:
    base = read_dataset(args.base)
    cfg = CorruptionConfig(seed=args.seed if args.seed is not None else 0)
    manifest = write_dataset(generate_corruption_set(base, cfg), args.out or "corruption_dataset")
    print(manifest)
    return 0


def _cmd_train(args) -> int:
    from ..models import build_model, save_model, train_model
    from ..stimuli import make_split
    from .runner import _model_spec, _pipeline, _train_config, random_train_val_split

    config = _load(args)
    dataset = build_stimulus_set(config.dataset)
    seed = config.seeds[0]
    task = config.sweep.tasks[0]
    if config.splits.mode == "exemplar_holdout":
        plan = make_split(dataset, task, holdout="exemplar", seed=seed)
    elif config.splits.mode == "random":
        plan = random_train_val_split(dataset, config.splits.val_fraction, seed)
    else:
        plan = make_split(dataset, task, holdout=config.splits.holdout_classes, seed=seed)
    n_classes = len(dataset.shape_classes if task == "shape" else dataset.texture_classes)
    model = build_model(_model_spec(config, n_classes), seed=seed, precision=config.training.precision)
    pipeline = _pipeline(config, config.augmentation, seed)
    result = train_model(model, dataset, plan, task, _train_config(config, seed, pipeline))
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.ckpt", model)
    summary = {
        "task": task,
        "max_val_acc": result.max_val_acc,
        "best_epoch": result.best_epoch,
        "epochs": [dataclasses.asdict(m) for m in result.metrics],
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=1), encoding="utf-8")
    print(f"max_val_acc={result.max_val_acc:.4f} -> {out / 'model.ckpt'}")
    return 0


def _cmd_eval_bias(args) -> int:
    from ..bias import SuperclassMap, compute_bias_report, map_to_superclasses
    from ..models import load_model, predict_probabilities

    model = load_model(args.checkpoint)
    dataset = read_dataset(args.dataset)
    probs = predict_probabilities(model, dataset.items)
    if args.superclass_map:
        mapping = SuperclassMap.from_json(args.superclass_map)
        probs = map_to_superclasses(probs, mapping)
    predicted = probs.argmax(axis=1)
    records = [
        {
            "id": it.id,
            "predicted": int(p),
            "shape_label": it.shape_label,
            "texture_label": it.texture_label,
        }
        for it, p in zip(dataset.items, predicted)
    ]
    report = compute_bias_report(records)
    out = Path(args.out or "bias_report")
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "bias_report.json")
    report.write_csv(out / "bias_report.csv")
    bias = "absent" if report.shape_bias is None else f"{report.shape_bias:.4f}"
    print(
        f"shape_match={report.shape_match:.4f} texture_match={report.texture_match:.4f} "
        f"shape_bias={bias}"
    )
    return 0


def _cmd_experiment(args) -> int:
    config = _load(args)
    record = run_experiment(config)
    print(f"run {record.run_id}: wrote {config.output_dir} ({record.wall_clock_s:.1f}s)")
    return 0


def _read_decision_csv(path: str) -> list[dict]:
    import csv as _csv

    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in _csv.DictReader(fh):
            if "matched" in row and row["matched"]:
                records.append({"id": row["id"], "matched": row["matched"]})
            else:
                predicted = int(row["predicted"])
                shape_label = int(row["shape_label"])
                texture_label = int(row["texture_label"])
                if predicted == shape_label:
                    matched = "shape"
                elif predicted == texture_label:
                    matched = "texture"
                else:
                    matched = "neither"
                records.append({"id": row["id"], "matched": matched})
    return records


def _cmd_stats(args) -> int:
    from ..stats import permutation_test_bias

    a = _read_decision_csv(args.records_a)
    b = _read_decision_csv(args.records_b)
    result = permutation_test_bias(
        a,
        b,
        n_permutations=args.permutations,
        seed=args.seed if args.seed is not None else 0,
        direction=args.direction,
    )
    payload = dataclasses.asdict(result)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "permutation_test.json").write_text(json.dumps(payload, indent=1))
    print(json.dumps(payload))
    return 0


def _cmd_dump_augmented(args) -> int:
    from PIL import Image

    from ..augment import apply_pipeline, pipeline_from_config

    config = _load(args)
    dataset = build_stimulus_set(config.dataset)
    pipeline = pipeline_from_config(
        list(config.augmentation), seed=config.seeds[0], target_extent=config.dataset.extent
    )
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seeds[0])
    picks = rng.choice(len(dataset.items), size=min(args.count, len(dataset.items)), replace=False)
    for idx in picks:
        item = dataset.items[int(idx)]
        after = apply_pipeline(pipeline, item.image, int(idx))
        for tag, img in (("before", item.image), ("after", after)):
            arr = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
            Image.fromarray(arr, mode="RGB").save(out / f"{item.id}-{tag}.png")
    print(f"wrote {2 * len(picks)} images to {out}")
    return 0


_COMMANDS = {
    "gen-navon": _cmd_gen_navon,
    "gen-patchwork": _cmd_gen_patchwork,
    "gen-corruption": _cmd_gen_corruption,
    "train": _cmd_train,
    "eval-bias": _cmd_eval_bias,
    "probe": _cmd_experiment,
    "sweep": _cmd_experiment,
    "stats": _cmd_stats,
    "dump-augmented": _cmd_dump_augmented,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_EXIT
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
