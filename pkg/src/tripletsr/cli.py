"""Command-line entry point.

Subcommands: prepare (corpus -> resolution sets + triplets), train (one
experiment), evaluate (checkpoint or interpolation baseline -> metrics +
plots), ablate (the six-experiment matrix), compare (multi-model table on
shared pair lists).

Exit codes: 0 success (a diverged training run is still 0), 2 usage error,
3 data error, 4 config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import generator as gen_mod
from .datasets import HIGH_RES, PreparedDataset, build_resolution_sets
from .embeddings import load_extractor
from .errors import ConfigError, DataError
from .evaluation import (
    build_score_set,
    comparison_report,
    evaluate_scores,
    sample_pairs,
    score_pairs,
)
from .plotting import save_roc_curve, save_score_histogram, save_training_curves
from .training import (
    ExperimentConfig,
    ablation_matrix,
    baseline_sr_fn,
    run_experiment,
    to_toy,
)
from .upsamplers import BASELINE_METHODS

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONFIG = 4


@dataclass
class RunRecord:
    run_id: str
    config: dict
    artifacts: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    status: str = "running"

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")


def _append_run_index(out_root: Path, record: RunRecord) -> None:
    with open(out_root / "runs.jsonl", "a") as fh:
        fh.write(json.dumps(dataclasses.asdict(record)) + "\n")


def _unique_run_dir(out_root: Path, name: str) -> Path:
    run_dir = out_root / name
    counter = 2
    while run_dir.exists():
        run_dir = out_root / f"{name}-{counter}"
        counter += 1
    return run_dir


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S")


def _check_device(device: str) -> None:
    if device != "cpu":
        raise ConfigError(f"only --device cpu is supported, got {device!r}")


def _parse_overrides(pairs: list[str]) -> dict:
    allowed = {
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "val_pairs": int,
        "seed": int,
        "triplet_margin": float,
    }
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        if key not in allowed:
            raise ConfigError(f"unknown override {key!r}; allowed: {sorted(allowed)}")
        out[key] = allowed[key](value)
    return out


def _apply_overrides(config: ExperimentConfig, overrides: dict) -> None:
    for key, value in overrides.items():
        if key == "triplet_margin":
            config.losses.triplet_margin = value
        else:
            setattr(config, key, value)


def _make_sr_fn(spec: str):
    """Resolve a model spec: baseline name or checkpoint path."""
    if spec in BASELINE_METHODS:
        return baseline_sr_fn(spec), spec
    path = Path(spec)
    if path.exists():
        gen, _ = gen_mod.load_checkpoint(path)
        return (lambda image: gen_mod.super_resolve(gen, image)), path.stem
    raise ConfigError(
        f"unknown model spec {spec!r}: not a checkpoint file and not one of "
        f"the baselines {', '.join(BASELINE_METHODS)}"
    )


def cmd_prepare(args) -> int:
    resolutions = [int(r) for r in args.resolutions.split(",")]
    dataset = build_resolution_sets(
        args.corpus,
        args.out,
        resolutions,
        seed=args.seed,
        test_fraction=args.test_fraction,
        triplet_count=args.triplets,
    )
    for manifest in (dataset.train, dataset.test):
        per_res = {r: len(manifest.entries_at(r)) for r in dataset.resolutions}
        print(
            f"{manifest.split}: {len(manifest.identities())} identities, "
            f"images per resolution {per_res}"
        )
        for res, triplets in sorted(manifest.triplets.items()):
            print(f"{manifest.split}: {len(triplets)} triplets at {res}x{res}")
    print(f"dataset written to {dataset.root}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = ExperimentConfig.load_yaml(args.config)
    if args.toy:
        config = to_toy(config)
    if args.epochs is not None:
        config.epochs = args.epochs
    if args.seed is not None:
        config.seed = args.seed
    config.validate()

    dataset = PreparedDataset.load(args.data)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    run_dir = _unique_run_dir(out_root, config.name)

    record = RunRecord(run_id=run_dir.name, config=config.to_dict(),
                       started=_timestamp())
    ckpt, train_log = run_experiment(config, dataset, run_dir)
    curves = save_training_curves(run_dir / "training_curves.png", train_log)
    record.status = train_log.status
    record.finished = _timestamp()
    record.artifacts = {
        "checkpoint_final": str(ckpt),
        "checkpoint_best": str(run_dir / "checkpoint_best.npz"),
        "train_log": str(run_dir / "train_log.jsonl"),
        "config": str(run_dir / "config.yaml"),
        "training_curves": str(curves),
    }
    record.save(run_dir / "run.json")
    _append_run_index(out_root, record)

    last = train_log.snapshots[-1] if train_log.snapshots else None
    summary = f"run {run_dir.name}: status={train_log.status}, steps={len(train_log.records)}"
    if last and last.d_prime is not None:
        summary += f", final d'={last.d_prime:.3f}, AUC={last.auc:.3f}"
    print(summary)
    print(f"artifacts in {run_dir}")
    return EXIT_OK


def _evaluate_one(
    spec: str,
    dataset: PreparedDataset,
    resolution: int,
    pairs: int,
    seed: int,
    out_dir: Path,
    extractor_name: str,
    shared_pairs=None,
    bins: int = 50,
):
    probes = dataset.test.entries_at(resolution)
    gallery = dataset.test.entries_at(HIGH_RES)
    if not probes or not gallery:
        raise DataError(
            f"test split lacks images at {resolution} and/or {HIGH_RES}"
        )
    sr_fn, model_name = _make_sr_fn(spec)
    extractor = load_extractor(extractor_name)
    store = dataset.store()
    if shared_pairs is None:
        scores = build_score_set(
            probes, gallery, store, sr_fn, extractor, pairs, seed,
            model_name=model_name, resolution=resolution,
        )
    else:
        scores = score_pairs(
            shared_pairs, store, sr_fn, extractor,
            model_name=model_name, resolution=resolution, seed=seed,
        )
    report = evaluate_scores(scores, bins=bins)
    tag = f"{model_name}_{resolution}"
    scores.save_csv(out_dir / f"scores_{tag}.csv")
    (out_dir / f"report_{tag}.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n"
    )
    save_score_histogram(out_dir / f"hist_{tag}.png", report)
    save_roc_curve(out_dir / f"roc_{tag}.png", report)
    return model_name, report


def cmd_evaluate(args) -> int:
    dataset = PreparedDataset.load(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    extractor_name = "toy_deterministic" if args.toy else args.extractor
    model_name, report = _evaluate_one(
        args.model, dataset, args.resolution, args.pairs, args.seed,
        out_dir, extractor_name,
    )
    print(
        f"{model_name} @ {args.resolution}x{args.resolution}: "
        f"d'={report.d_prime:.3f}, AUC={report.auc:.3f} "
        f"({report.n_genuine} genuine / {report.n_impostor} impostor pairs)"
    )
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    specs = [s for s in args.models.split(",") if s]
    if not specs:
        raise ConfigError("need at least one model spec")
    resolutions = [int(r) for r in args.resolutions.split(",")]
    dataset = PreparedDataset.load(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    extractor_name = "toy_deterministic" if args.toy else args.extractor

    reports = []
    for resolution in resolutions:
        probes = dataset.test.entries_at(resolution)
        gallery = dataset.test.entries_at(HIGH_RES)
        if not probes or not gallery:
            log.warning("skipping resolution %d: no test images", resolution)
            continue
        # one seeded pair list per resolution, shared by every model
        shared = sample_pairs(probes, gallery, args.pairs, args.seed + resolution)
        for spec in specs:
            try:
                model_name, report = _evaluate_one(
                    spec, dataset, resolution, args.pairs, args.seed,
                    out_dir, extractor_name, shared_pairs=shared,
                )
                reports.append((model_name, resolution, report))
            except (DataError, ConfigError) as exc:
                log.warning("model %s failed at %d: %s", spec, resolution, exc)
    if not reports:
        raise DataError("no model/resolution combination produced a report")
    table = comparison_report(reports, resolutions=tuple(resolutions))
    (out_dir / "comparison.csv").write_text(table.to_csv())
    (out_dir / "comparison.txt").write_text(table.to_text())
    print(table.to_text())
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    dataset = PreparedDataset.load(args.data)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    overrides = _parse_overrides(args.override or [])
    only = set(args.only.split(",")) if args.only else None

    configs = ablation_matrix(seed=args.seed)
    extractor_name = "toy_deterministic" if args.toy else "facenet_pretrained"
    results = []
    for config in configs:
        if only and config.name not in only:
            continue
        if args.toy:
            config = to_toy(config)
        _apply_overrides(config, overrides)
        config.validate()
        run_dir = _unique_run_dir(out_root, config.name)
        record = RunRecord(run_id=run_dir.name, config=config.to_dict(),
                           started=_timestamp())
        try:
            ckpt, train_log = run_experiment(config, dataset, run_dir)
            save_training_curves(run_dir / "training_curves.png", train_log)
            record.status = train_log.status
            record.artifacts = {"checkpoint_final": str(ckpt)}
            _, report = _evaluate_one(
                str(ckpt), dataset, config.anchor_resolution, args.pairs,
                args.seed, run_dir, extractor_name,
            )
            results.append((config.name, record.status, report))
        except (DataError, ConfigError) as exc:
            log.warning("ablation run %s failed: %s", config.name, exc)
            record.status = "failed"
            results.append((config.name, "failed", None))
        record.finished = _timestamp()
        record.save(run_dir / "run.json")
        _append_run_index(out_root, record)

    lines = ["experiment,status,d_prime,auc"]
    text = [f"{'experiment':12s}{'status':12s}{'d_prime':>10s}{'auc':>8s}"]
    for name, status, report in results:
        if report is not None:
            lines.append(f"{name},{status},{report.d_prime!r},{report.auc!r}")
            text.append(f"{name:12s}{status:12s}{report.d_prime:10.3f}{report.auc:8.3f}")
        else:
            lines.append(f"{name},{status},,")
            text.append(f"{name:12s}{status:12s}{'-':>10s}{'-':>8s}")
    (out_root / "ablation_table.csv").write_text("\n".join(lines) + "\n")
    (out_root / "ablation_table.txt").write_text("\n".join(text) + "\n")
    print("\n".join(text))
    print(f"artifacts in {out_root}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletsr",
        description="Identity-preserving face super-resolution: data "
        "preparation, training, and biometric evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build resolution sets and triplets from a corpus")
    p.add_argument("--corpus", required=True, help="identity-foldered image corpus")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--resolutions", default="14,28,56,112")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--triplets", type=int, default=None,
                   help="triplets per anchor resolution (default: #train images)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run one training experiment")
    p.add_argument("--config", required=True, help="experiment config YAML")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--out", required=True, help="output root for run artifacts")
    p.add_argument("--toy", action="store_true",
                   help="desk scale: toy generator and toy extractors")
    p.add_argument("--epochs", type=int, default=None, help="override config epochs")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or baseline")
    p.add_argument("--model", required=True,
                   help=f"checkpoint path or one of: {', '.join(BASELINE_METHODS)}")
    p.add_argument("--data", required=True)
    p.add_argument("--resolution", type=int, required=True)
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--extractor", default="facenet_pretrained")
    p.add_argument("--toy", action="store_true")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the six-experiment ablation matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--toy", action="store_true")
    p.add_argument("--only", default=None, help="comma list of experiment names")
    p.add_argument("--override", action="append", default=None,
                   metavar="KEY=VALUE", help="e.g. epochs=1 batch_size=8")
    p.add_argument("--pairs", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", help="multi-model table on shared pair lists")
    p.add_argument("--models", required=True, help="comma list of specs")
    p.add_argument("--data", required=True)
    p.add_argument("--resolutions", default="14,28,56")
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--extractor", default="facenet_pretrained")
    p.add_argument("--toy", action="store_true")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: "list[str] | None" = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "device"):
            _check_device(args.device)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
