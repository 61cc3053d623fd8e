"""Command-line entry point.

Subcommands mirror the pipeline stages:

    prepare  ingest + split + encode the configured datasets, cache to disk
    train    fit the configured models per dataset, cache checkpoints
    attack   run the attack grid, write records.csv (and the BIM step-size
             comparison with --bim-compare)
    report   derive analyses.json and plot-data files from cached records
    all      everything above in order

Configuration is an INI file; every [run] key can be overridden by a flag.
A dataset named "breastcancer" without a [dataset.breastcancer] section is
materialized automatically under <out>/data.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

from . import bench, builtin
from .attacks import METHODS
from .errors import TabAdvError

_STAGES = ("prepare", "train", "attack", "report", "all")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabadv",
        description="Benchmark white-box adversarial attacks on tabular classifiers.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in _STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")
        p.add_argument("--alpha", type=float, help="chi-squared significance level")
        p.add_argument("--eps-grid", help="comma-separated epsilon grid")
        p.add_argument("--datasets", help="comma-separated dataset names")
        p.add_argument("--models", help="comma-separated model names (lr, mlp)")
        p.add_argument("--attacks", help="comma-separated attack names")
        p.add_argument("--repetitions", type=int, help="seeded repetitions per cell")
        p.add_argument("--bim-alpha", type=float, dest="bim_alpha",
                       help="fixed BIM step size (default: epsilon/steps)")
        p.add_argument("--bim-steps", type=int, dest="bim_steps", help="BIM iteration count")
        if stage in ("attack", "all"):
            p.add_argument("--bim-compare", action="store_true",
                           help="also run the default vs adjusted BIM step-size comparison")
    return parser


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def load_config(path, args) -> bench.RunConfig:
    path = Path(path)
    if not path.exists():
        raise TabAdvError(f"config file not found: {path}")
    ini = configparser.ConfigParser(interpolation=None)
    ini.read(path)
    run = dict(ini["run"]) if ini.has_section("run") else {}

    out_dir = args.out or run.get("out", "out")
    names = _csv_list(args.datasets or run.get("datasets", ""))
    if not names:
        raise TabAdvError("no datasets configured (set [run] datasets or --datasets)")

    entries = []
    for name in names:
        section = f"dataset.{name}"
        if ini.has_section(section):
            csv_path = ini[section].get("csv")
            manifest = ini[section].get("manifest")
            if not csv_path or not manifest:
                raise TabAdvError(f"[{section}] needs both csv and manifest keys")
            entries.append(bench.DatasetEntry(name, csv_path, manifest))
        elif name == builtin.BREASTCANCER:
            entries.append(builtin.materialize_breastcancer(Path(out_dir) / "data"))
        elif name == builtin.WINEQUALITY_RED:
            entry = builtin.winequality_red_entry(Path(out_dir) / "data")
            if entry is None:
                raise TabAdvError(
                    f"dataset {name!r} needs its raw CSV; see scripts/fetch_winequality.py"
                )
            entries.append(entry)
        else:
            raise TabAdvError(f"dataset {name!r} has no [dataset.{name}] section")

    eps_text = args.eps_grid or run.get("eps_grid", "")
    eps_grid = tuple(float(v) for v in _csv_list(eps_text)) if eps_text else bench.DEFAULT_EPS_GRID

    return bench.RunConfig(
        datasets=entries,
        models=_csv_list(args.models or run.get("models", "lr, mlp")),
        attacks=_csv_list(args.attacks or run.get("attacks", ", ".join(METHODS))),
        eps_grid=eps_grid,
        seed=args.seed if args.seed is not None else int(run.get("seed", 42)),
        repetitions=args.repetitions if args.repetitions is not None else int(run.get("repetitions", 5)),
        alpha=args.alpha if args.alpha is not None else float(run.get("alpha", 0.05)),
        out_dir=out_dir,
        bim_steps=args.bim_steps if args.bim_steps is not None else int(run.get("bim_steps", 10)),
        bim_step_size=args.bim_alpha if args.bim_alpha is not None
        else (float(run["bim_alpha"]) if "bim_alpha" in run else None),
        plateau_delta=float(run.get("plateau_delta", bench.DEFAULT_PLATEAU_DELTA)),
        threshold_source=run.get("thresholds", "gaussian"),
    )


def _stage_prepare(cfg: bench.RunConfig) -> None:
    cache = Path(cfg.out_dir) / "cache"
    for entry in cfg.datasets:
        ds = bench.prepare_dataset(entry, cfg.seed, cache)
        print(f"prepared {entry.name}: n={ds.X.shape[0]} d_total={ds.d_total} "
              f"train/val/test={len(ds.split.train)}/{len(ds.split.val)}/{len(ds.split.test)}")


def _stage_train(cfg: bench.RunConfig) -> None:
    cache = Path(cfg.out_dir) / "cache"
    model_cache = Path(cfg.out_dir) / "models"
    for entry in cfg.datasets:
        ds = bench.prepare_dataset(entry, cfg.seed, cache)
        for model_name in cfg.models:
            model = bench.train_model(ds, model_name, cfg, model_cache, entry.name)
            acc = model.accuracy(ds.X[ds.split.test], ds.y[ds.split.test])
            print(f"trained {model_name} on {entry.name}: test accuracy {acc:.4f}")


def _stage_attack(cfg: bench.RunConfig, bim_compare: bool = False) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = bench.run_benchmark(cfg, cache_dir=out / "cache", model_cache_dir=out / "models")
    bench.write_records_csv(result.records, out / "records.csv")
    with open(out / "errors.json", "w", encoding="utf-8") as fh:
        json.dump(result.errors, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {len(result.records)} records "
          f"({len(result.errors)} errored cells) to {out / 'records.csv'}")

    if bim_compare:
        rows = []
        for entry in cfg.datasets:
            ds = bench.prepare_dataset(entry, cfg.seed, out / "cache")
            for model_name in cfg.models:
                model = bench.train_model(ds, model_name, cfg, out / "models", entry.name)
                rows.extend(bench.run_bim_comparison(
                    model, ds, cfg.eps_grid, cfg.seed,
                    model_id=model_name, dataset_id=entry.name,
                ))
        bench.write_bim_comparison(rows, out / "bim_comparison.csv")
        print(f"wrote BIM step-size comparison to {out / 'bim_comparison.csv'}")


def _stage_report(cfg: bench.RunConfig) -> None:
    out = Path(cfg.out_dir)
    records_path = out / "records.csv"
    if not records_path.exists():
        raise TabAdvError(f"no cached records at {records_path}; run the attack stage first")
    records = bench.read_records_csv(records_path)
    errors = []
    errors_path = out / "errors.json"
    if errors_path.exists():
        with open(errors_path, "r", encoding="utf-8") as fh:
            errors = json.load(fh)
    analyses = bench.analyze(records, cfg, errors)
    written = bench.emit_reports(records, analyses, out)
    print(f"wrote {len(written)} report files under {out}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        if args.stage in ("prepare", "all"):
            _stage_prepare(cfg)
        if args.stage in ("train", "all"):
            _stage_train(cfg)
        if args.stage in ("attack", "all"):
            _stage_attack(cfg, getattr(args, "bim_compare", False))
        if args.stage in ("report", "all"):
            _stage_report(cfg)
    except TabAdvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
