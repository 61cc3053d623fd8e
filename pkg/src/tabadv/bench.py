"""Grid orchestration, budget selection, trade-off analysis, and reports.

Runs datasets x models x attacks x epsilon x repetitions, averages metrics
over the seeded repetitions, fills the composite score over the averaged
records, then derives the analysis artifacts: plateau-based budget
selection per curve, the most frequent budget per attack, quadrant
classification against Gaussian-baseline thresholds, and per-attack
correlations of success rate against the imperceptibility metrics.

Cells are seeded independently (base seed + repetition index), so the whole
grid is deterministic and any subset reruns to identical bytes.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import metrics as met
from . import models as mod
from .data import (
    EncodedDataset,
    EncodingMap,
    SplitIndices,
    fit_encode,
    fit_statistics,
    impute,
    load_schema_manifest,
    load_table,
    schema_from_dict,
    schema_to_dict,
    split_stratified,
)
from .errors import ContractError

DEFAULT_EPS_GRID = (0.01, 0.03, 0.05, 0.1, 0.3, 0.5, 1.0)
DEFAULT_PLATEAU_DELTA = 0.01

EFF_IMP = "EffImp"
EFF_PER = "EffPer"
INEFF_IMP = "IneffImp"
INEFF_PER = "IneffPer"

RECORD_COLUMNS = (
    "dataset", "model", "attack", "epsilon", "asr", "mean_l2",
    "sparsity_rate", "sparsity_rate_num", "sparsity_rate_cat",
    "outlier_rate", "mean_sensitivity", "is_score",
)

MODEL_SPECS = {
    "lr": mod.ModelSpec(kind=mod.LR),
    "mlp": mod.ModelSpec(kind=mod.MLP, hidden=(64, 32), dropout_p=0.2),
}

# BIM step-size presets: the grid default, and the small-step/long-horizon
# variant used by the step-size comparison recipe.
BIM_PRESETS = {
    "default": {"steps": 10, "step_size": None},
    "adjusted": {"steps": 20, "step_size": 0.05},
}


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    csv_path: str
    manifest_path: str


@dataclass
class RunConfig:
    datasets: list[DatasetEntry]
    models: list[str] = field(default_factory=lambda: ["lr", "mlp"])
    attacks: list[str] = field(default_factory=lambda: list(atk.METHODS))
    eps_grid: tuple[float, ...] = DEFAULT_EPS_GRID
    seed: int = 42
    repetitions: int = 5
    alpha: float = 0.05
    out_dir: str = "out"
    ridge_lambda: float = 1e-6
    sigma_floor: float = 1e-8
    sparsity_tol: float = met.DEFAULT_SPARSITY_TOL
    plateau_delta: float = DEFAULT_PLATEAU_DELTA
    bim_steps: int = 10
    bim_step_size: float | None = None
    clip_unbounded: bool = True
    threshold_source: str = "gaussian"  # or "reference" for the fixed preset

    def __post_init__(self):
        if list(self.eps_grid) != sorted(self.eps_grid):
            raise ContractError("epsilon grid must be sorted ascending")
        if self.repetitions < 1:
            raise ContractError("repetitions must be >= 1")
        if self.threshold_source not in ("gaussian", "reference"):
            raise ContractError("threshold_source must be 'gaussian' or 'reference'")
        for m in self.models:
            if m not in MODEL_SPECS:
                raise ContractError(f"unknown model {m!r}; known: {sorted(MODEL_SPECS)}")
        for a in self.attacks:
            if a not in atk.METHODS:
                raise ContractError(f"unknown attack {a!r}; known: {list(atk.METHODS)}")


@dataclass(frozen=True)
class RunRecord:
    """Metrics for one grid cell; repetition None means averaged over reps."""

    dataset: str
    model: str
    attack: str
    epsilon: float
    repetition: int | None
    metrics: met.MetricRecord


@dataclass(frozen=True)
class QuadrantThresholds:
    asr_threshold: float
    is_threshold: float

    @classmethod
    def from_gaussian_records(cls, records: list[RunRecord]) -> "QuadrantThresholds":
        """Max ASR and min composite score over the run's Gaussian baseline cells."""
        gauss = [r for r in records if r.attack == atk.GAUSSIAN]
        if not gauss:
            raise ContractError("no Gaussian baseline records in this run")
        if any(r.metrics.is_score is None for r in gauss):
            raise ContractError("composite scores must be filled before thresholding")
        return cls(
            asr_threshold=max(r.metrics.asr for r in gauss),
            is_threshold=min(r.metrics.is_score for r in gauss),
        )


# Fixed fallback operating point for runs without a Gaussian baseline.
DEFAULT_REFERENCE_THRESHOLDS = QuadrantThresholds(asr_threshold=0.659, is_threshold=0.181)


@dataclass
class BenchmarkResult:
    records: list[RunRecord]       # averaged, composite score filled
    rep_records: list[RunRecord]   # raw per-repetition cells
    errors: list[dict]


def _attack_spec(cfg: RunConfig, method: str, epsilon: float, rep: int) -> atk.AttackSpec:
    kwargs = {}
    if method == atk.BIM:
        kwargs["steps"] = cfg.bim_steps
        kwargs["step_size"] = cfg.bim_step_size
    return atk.AttackSpec(
        method=method,
        epsilon=epsilon,
        seed=cfg.seed + rep,
        clip_unbounded=cfg.clip_unbounded,
        **kwargs,
    )


def prepare_dataset(entry: DatasetEntry, seed: int, cache_dir=None) -> EncodedDataset:
    """Load, split, impute, encode; round-trips through the cache when given."""
    if cache_dir is not None:
        cached = load_prepared(entry.name, cache_dir)
        if cached is not None:
            return cached
    schema = load_schema_manifest(entry.manifest_path)
    table = load_table(entry.csv_path, schema)
    y_raw = np.asarray([1 if lab == schema.positive_label else 0 for lab in table.labels])
    split = split_stratified(table.n_rows, y_raw, seed)
    ds = fit_encode(impute(table, schema, split), schema, split)
    if cache_dir is not None:
        save_prepared(entry.name, ds, cache_dir)
    return ds


def save_prepared(name: str, ds: EncodedDataset, cache_dir) -> None:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    np.savez(
        cache_dir / f"{name}.npz",
        X=ds.X, y=ds.y,
        train=ds.split.train, val=ds.split.val, test=ds.split.test,
    )
    doc = schema_to_dict(ds.schema)
    doc["encoding"] = {
        "spans": [list(s) for s in ds.encoding.spans],
        "d_encoded": ds.encoding.d_encoded,
        "d_total": ds.encoding.d_total,
    }
    with open(cache_dir / f"{name}.schema.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_prepared(name: str, cache_dir) -> EncodedDataset | None:
    cache_dir = Path(cache_dir)
    npz_path = cache_dir / f"{name}.npz"
    schema_path = cache_dir / f"{name}.schema.json"
    if not (npz_path.exists() and schema_path.exists()):
        return None
    with np.load(npz_path) as blob:
        X, y = blob["X"], blob["y"]
        split = SplitIndices(train=blob["train"], val=blob["val"], test=blob["test"])
    with open(schema_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    enc = doc["encoding"]
    encoding = EncodingMap(
        spans=tuple(tuple(s) for s in enc["spans"]),
        d_encoded=enc["d_encoded"],
        d_total=enc["d_total"],
    )
    return EncodedDataset(X=X, y=y, split=split, schema=schema_from_dict(doc), encoding=encoding)


def train_model(
    ds: EncodedDataset, model_name: str, cfg: RunConfig, cache_dir=None, dataset_name: str = ""
) -> mod.TrainedModel:
    if cache_dir is not None:
        path = Path(cache_dir) / f"{dataset_name}_{model_name}.json"
        if path.exists():
            return mod.load_model(path)
    model = mod.train(ds, MODEL_SPECS[model_name], mod.TrainConfig(seed=cfg.seed))
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        mod.save_model(model, Path(cache_dir) / f"{dataset_name}_{model_name}.json")
    return model


def _average_metrics(cells: list[met.MetricRecord]) -> met.MetricRecord:
    def avg(getter):
        return float(np.mean([getter(c) for c in cells]))

    return met.MetricRecord(
        asr=avg(lambda c: c.asr),
        mean_l1=avg(lambda c: c.mean_l1),
        mean_l2=avg(lambda c: c.mean_l2),
        mean_linf=avg(lambda c: c.mean_linf),
        sparsity_rate=avg(lambda c: c.sparsity_rate),
        sparsity_rate_num=avg(lambda c: c.sparsity_rate_num),
        sparsity_rate_cat=avg(lambda c: c.sparsity_rate_cat),
        outlier_rate=avg(lambda c: c.outlier_rate),
        mean_sensitivity=avg(lambda c: c.mean_sensitivity),
    )


def average_repetitions(rep_records: list[RunRecord]) -> list[RunRecord]:
    cells: dict[tuple, list[RunRecord]] = {}
    for r in rep_records:
        cells.setdefault((r.dataset, r.model, r.attack, r.epsilon), []).append(r)
    out = []
    for key in sorted(cells):
        group = cells[key]
        out.append(RunRecord(*key, repetition=None, metrics=_average_metrics([g.metrics for g in group])))
    return out


def fill_composite_scores(records: list[RunRecord], cfg_is: met.ISConfig = met.ISConfig()) -> list[RunRecord]:
    scored = met.imperceptibility_score([r.metrics for r in records], cfg_is)
    return [replace(r, metrics=m) for r, m in zip(records, scored)]


def run_benchmark(cfg: RunConfig, cache_dir=None, model_cache_dir=None) -> BenchmarkResult:
    """Execute the full grid; per-cell failures are recorded, not raised."""
    rep_records: list[RunRecord] = []
    errors: list[dict] = []

    for entry in cfg.datasets:
        try:
            ds = prepare_dataset(entry, cfg.seed, cache_dir)
            stats = fit_statistics(ds, cfg.ridge_lambda, cfg.sigma_floor)
        except Exception as exc:
            errors.append({"dataset": entry.name, "stage": "prepare", "error": str(exc)})
            continue
        for model_name in cfg.models:
            try:
                model = train_model(ds, model_name, cfg, model_cache_dir, entry.name)
            except Exception as exc:
                errors.append({"dataset": entry.name, "model": model_name,
                               "stage": "train", "error": str(exc)})
                continue
            for method in cfg.attacks:
                for eps in cfg.eps_grid:
                    for rep in range(cfg.repetitions):
                        try:
                            spec = _attack_spec(cfg, method, eps, rep)
                            batch = atk.run_attack(model, ds, spec,
                                                   model_id=model_name, dataset_id=entry.name)
                            cell = met.compute_metric_record(
                                batch, stats, ds.encoding, cfg.alpha, cfg.sparsity_tol
                            )
                        except Exception as exc:
                            errors.append({
                                "dataset": entry.name, "model": model_name,
                                "attack": method, "epsilon": eps, "repetition": rep,
                                "stage": "attack", "error": str(exc),
                            })
                            continue
                        rep_records.append(RunRecord(entry.name, model_name, method,
                                                     eps, rep, cell))

    averaged = fill_composite_scores(average_repetitions(rep_records)) if rep_records else []
    return BenchmarkResult(records=averaged, rep_records=rep_records, errors=errors)


def plateau_select(asr_by_eps, delta: float = DEFAULT_PLATEAU_DELTA) -> float:
    """Smallest budget after which no later point improves ASR by delta or more.

    The last grid point qualifies vacuously, so a strictly improving curve
    selects the largest budget.
    """
    pts = list(asr_by_eps)
    if len(pts) < 2:
        raise ContractError("plateau selection needs at least 2 grid points")
    if not delta > 0.0:
        raise ContractError("delta must be positive")
    eps = [p[0] for p in pts]
    if eps != sorted(eps):
        raise ContractError("asr_by_eps must be sorted by epsilon")
    for k, (eps_k, asr_k) in enumerate(pts):
        if all(asr_j - asr_k < delta for _, asr_j in pts[k + 1:]):
            return eps_k
    return pts[-1][0]


def representative_epsilon(selections) -> float:
    """Most frequent selection; ties break toward the smaller budget."""
    sels = list(selections)
    if not sels:
        raise ContractError("representative epsilon of an empty selection list")
    counts = Counter(sels)
    return min(counts, key=lambda e: (-counts[e], e))


def quadrant_classify(record: RunRecord, th: QuadrantThresholds) -> str:
    """Effective iff ASR strictly above threshold; imperceptible iff score strictly below."""
    m = record.metrics
    if m.is_score is None:
        raise ContractError("quadrant classification needs a filled composite score")
    effective = m.asr > th.asr_threshold
    imperceptible = m.is_score < th.is_threshold
    if effective:
        return EFF_IMP if imperceptible else EFF_PER
    return INEFF_IMP if imperceptible else INEFF_PER


_CORRELATION_METRICS = {
    "mean_l2": lambda m: m.mean_l2,
    "sparsity_rate": lambda m: m.sparsity_rate,
    "mean_sensitivity": lambda m: m.mean_sensitivity,
    "outlier_rate": lambda m: m.outlier_rate,
    "is_score": lambda m: m.is_score,
}


def correlation_table(records: list[RunRecord]) -> dict[str, dict[str, float | None]]:
    """Per attack: Pearson r of ASR against each imperceptibility metric.

    Zero-variance or too-small groups report None and are excluded from the
    per-attack average.
    """
    by_attack: dict[str, list[RunRecord]] = {}
    for r in records:
        by_attack.setdefault(r.attack, []).append(r)
    table: dict[str, dict[str, float | None]] = {}
    for attack in sorted(by_attack):
        group = by_attack[attack]
        asrs = [g.metrics.asr for g in group]
        row: dict[str, float | None] = {}
        for name, getter in _CORRELATION_METRICS.items():
            try:
                row[name] = met.pearson(asrs, [getter(g.metrics) for g in group])
            except ContractError:
                row[name] = None
        defined = [v for v in row.values() if v is not None]
        row["average"] = float(np.mean(defined)) if defined else None
        table[attack] = row
    return table


def analyze(records: list[RunRecord], cfg: RunConfig, errors: list[dict] | None = None) -> dict:
    """Derive every downstream analysis from the averaged record set."""
    curves: dict[tuple[str, str, str], list[tuple[float, float]]] = {}
    for r in records:
        curves.setdefault((r.dataset, r.model, r.attack), []).append((r.epsilon, r.metrics.asr))

    plateau: dict[str, dict[str, dict[str, float]]] = {}
    selections_by_attack: dict[str, list[float]] = {}
    for (dataset, model, attack), pts in sorted(curves.items()):
        pts.sort()
        if len(pts) < 2:
            continue
        sel = plateau_select(pts, cfg.plateau_delta)
        plateau.setdefault(dataset, {}).setdefault(model, {})[attack] = sel
        selections_by_attack.setdefault(attack, []).append(sel)

    representative = {
        attack: representative_epsilon(sels)
        for attack, sels in sorted(selections_by_attack.items())
    }

    if cfg.threshold_source == "reference":
        th = DEFAULT_REFERENCE_THRESHOLDS
        th_source = "fixed_reference"
    else:
        try:
            th = QuadrantThresholds.from_gaussian_records(records)
            th_source = "gaussian_baseline"
        except ContractError:
            th = DEFAULT_REFERENCE_THRESHOLDS
            th_source = "default_reference"

    quadrants: dict[str, dict[str, dict[str, dict[str, str]]]] = {}
    for r in records:
        quadrants.setdefault(r.dataset, {}).setdefault(r.model, {}).setdefault(
            r.attack, {}
        )[repr(r.epsilon)] = quadrant_classify(r, th)

    analyses = {
        "plateau_delta": cfg.plateau_delta,
        "plateau_selections": plateau,
        "representative_epsilon": representative,
        "thresholds": {
            "asr": th.asr_threshold,
            "is": th.is_threshold,
            "source": th_source,
        },
        "quadrants": quadrants,
        "correlations": correlation_table(records),
    }
    if records:
        bounds = met.is_normalization_bounds([r.metrics for r in records])
        analyses["is_normalization"] = {k: list(v) for k, v in bounds.items()}
    analyses["errors"] = errors or []
    return analyses


def write_records_csv(records: list[RunRecord], path) -> None:
    """The exact export contract; one row per averaged cell, sorted by key."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for r in sorted(records, key=lambda r: (r.dataset, r.model, r.attack, r.epsilon)):
            m = r.metrics
            writer.writerow([
                r.dataset, r.model, r.attack, repr(r.epsilon), repr(m.asr), repr(m.mean_l2),
                repr(m.sparsity_rate), repr(m.sparsity_rate_num), repr(m.sparsity_rate_cat),
                repr(m.outlier_rate), repr(m.mean_sensitivity),
                "" if m.is_score is None else repr(m.is_score),
            ])


def read_records_csv(path) -> list[RunRecord]:
    """Read back an exported record set (L1/Linf proximity are not exported)."""
    out: list[RunRecord] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RECORD_COLUMNS:
            raise ContractError(f"{path}: unexpected record columns {reader.fieldnames}")
        for row in reader:
            metrics = met.MetricRecord(
                asr=float(row["asr"]),
                mean_l1=float("nan"),
                mean_l2=float(row["mean_l2"]),
                mean_linf=float("nan"),
                sparsity_rate=float(row["sparsity_rate"]),
                sparsity_rate_num=float(row["sparsity_rate_num"]),
                sparsity_rate_cat=float(row["sparsity_rate_cat"]),
                outlier_rate=float(row["outlier_rate"]),
                mean_sensitivity=float(row["mean_sensitivity"]),
                is_score=float(row["is_score"]) if row["is_score"] else None,
            )
            out.append(RunRecord(row["dataset"], row["model"], row["attack"],
                                 float(row["epsilon"]), None, metrics))
    return out


def emit_reports(records: list[RunRecord], analyses: dict, out_dir) -> list[Path]:
    """Write records.csv, analyses.json, and the plot-data files; returns paths."""
    out_dir = Path(out_dir)
    plots = out_dir / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    rec_path = out_dir / "records.csv"
    write_records_csv(records, rec_path)
    written.append(rec_path)

    ana_path = out_dir / "analyses.json"
    with open(ana_path, "w", encoding="utf-8") as fh:
        json.dump(analyses, fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(ana_path)

    curves: dict[tuple[str, str, str], list[tuple[float, float]]] = {}
    for r in sorted(records, key=lambda r: (r.dataset, r.model, r.attack, r.epsilon)):
        curves.setdefault((r.dataset, r.model, r.attack), []).append((r.epsilon, r.metrics.asr))
    for (dataset, model, attack), pts in curves.items():
        path = plots / f"asr_vs_eps_{dataset}_{model}_{attack}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epsilon", "asr"])
            for eps, a in pts:
                writer.writerow([repr(eps), repr(a)])
        written.append(path)

    cloud_path = plots / "tradeoff_points.csv"
    quadrants = analyses.get("quadrants", {})
    with open(cloud_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset", "model", "attack", "epsilon", "asr", "is_score", "quadrant"])
        for r in sorted(records, key=lambda r: (r.dataset, r.model, r.attack, r.epsilon)):
            quad = quadrants.get(r.dataset, {}).get(r.model, {}).get(r.attack, {}).get(
                repr(r.epsilon), ""
            )
            writer.writerow([
                r.dataset, r.model, r.attack, repr(r.epsilon), repr(r.metrics.asr),
                "" if r.metrics.is_score is None else repr(r.metrics.is_score), quad,
            ])
    written.append(cloud_path)
    return written


def run_bim_comparison(
    model: mod.TrainedModel,
    ds: EncodedDataset,
    eps_grid,
    seed: int,
    model_id: str = "",
    dataset_id: str = "",
) -> list[dict]:
    """ASR of the default vs adjusted BIM presets at every budget."""
    rows = []
    for eps in eps_grid:
        per_preset = {}
        for preset, knobs in BIM_PRESETS.items():
            spec = atk.AttackSpec(method=atk.BIM, epsilon=eps, seed=seed, **knobs)
            batch = atk.run_attack(model, ds, spec, model_id=model_id, dataset_id=dataset_id)
            per_preset[preset] = met.asr(batch)
        rows.append({
            "dataset": dataset_id, "model": model_id, "epsilon": eps,
            "asr_default": per_preset["default"], "asr_adjusted": per_preset["adjusted"],
        })
    return rows


def write_bim_comparison(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset", "model", "epsilon", "asr_default", "asr_adjusted"])
        for row in rows:
            writer.writerow([row["dataset"], row["model"], repr(row["epsilon"]),
                             repr(row["asr_default"]), repr(row["asr_adjusted"])])
