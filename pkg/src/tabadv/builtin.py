"""Benchmark dataset materialization and synthetic fixtures.

The breast cancer diagnostic table ships with scikit-learn, so it can be
written out as a CSV plus schema manifest with no network access. The red
wine quality table must be supplied by the user (see scripts/fetch_winequality.py);
``convert_winequality_red`` turns the raw semicolon file into the benchmark
form with a binary label (quality >= 6 is the positive class).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .bench import DatasetEntry
from .errors import SchemaError

BREASTCANCER = "breastcancer"
WINEQUALITY_RED = "winequality_red"

WINE_GOOD_THRESHOLD = 6


def _write_manifest(path, label, positive_label, feature_names, delimiter=","):
    doc = {
        "label": label,
        "positive_label": positive_label,
        "missing_markers": ["", "?"],
        "delimiter": delimiter,
        "features": [{"name": n, "kind": "numerical"} for n in feature_names],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def materialize_breastcancer(data_dir) -> DatasetEntry:
    """Write the 569x30 diagnostic table (label M/B) from scikit-learn's copy."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    csv_path = data_dir / "breastcancer.csv"
    manifest_path = data_dir / "breastcancer.schema.json"
    if not (csv_path.exists() and manifest_path.exists()):
        from sklearn.datasets import load_breast_cancer

        bundle = load_breast_cancer()
        names = [str(n) for n in bundle.feature_names]
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names + ["diagnosis"])
            for row, target in zip(bundle.data, bundle.target):
                # scikit-learn encodes 0 = malignant, 1 = benign
                writer.writerow([repr(float(v)) for v in row] + ["B" if target == 1 else "M"])
        _write_manifest(manifest_path, "diagnosis", "M", names)
    return DatasetEntry(BREASTCANCER, str(csv_path), str(manifest_path))


WINE_FEATURES = (
    "fixed acidity", "volatile acidity", "citric acid", "residual sugar",
    "chlorides", "free sulfur dioxide", "total sulfur dioxide", "density",
    "pH", "sulphates", "alcohol",
)


def convert_winequality_red(raw_csv, data_dir) -> DatasetEntry:
    """Convert the raw semicolon-separated wine file to benchmark form.

    Replaces the integer quality score with a binary column: quality >=
    WINE_GOOD_THRESHOLD becomes the positive class.
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    csv_path = data_dir / "winequality_red.csv"
    manifest_path = data_dir / "winequality_red.schema.json"

    with open(raw_csv, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        header = [h.strip().strip('"') for h in next(reader)]
        missing = [n for n in (*WINE_FEATURES, "quality") if n not in header]
        if missing:
            raise SchemaError(f"{raw_csv}: missing expected wine columns {missing}")
        idx = {n: header.index(n) for n in header}
        rows = list(reader)

    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(WINE_FEATURES) + ["quality_good"])
        for row in rows:
            quality = float(row[idx["quality"]])
            writer.writerow(
                [row[idx[n]].strip() for n in WINE_FEATURES]
                + ["yes" if quality >= WINE_GOOD_THRESHOLD else "no"]
            )
    _write_manifest(manifest_path, "quality_good", "yes", list(WINE_FEATURES))
    return DatasetEntry(WINEQUALITY_RED, str(csv_path), str(manifest_path))


def winequality_red_entry(data_dir) -> DatasetEntry | None:
    """The converted wine entry if the files are present, else None."""
    data_dir = Path(data_dir)
    csv_path = data_dir / "winequality_red.csv"
    manifest_path = data_dir / "winequality_red.schema.json"
    if csv_path.exists() and manifest_path.exists():
        return DatasetEntry(WINEQUALITY_RED, str(csv_path), str(manifest_path))
    raw = data_dir / "winequality-red.csv"
    if raw.exists():
        return convert_winequality_red(raw, data_dir)
    return None


def write_synthetic_mixed(
    data_dir,
    name: str = "synthmix",
    n: int = 400,
    seed: int = 7,
    n_numeric: int = 4,
    categories: tuple[str, ...] = ("a", "b", "c"),
    n_categorical: int = 2,
    missing_rate: float = 0.0,
) -> DatasetEntry:
    """A small mixed-type table with a learnable linear-ish label rule."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    numeric = rng.normal(0.0, 1.0, size=(n, n_numeric))
    cats = rng.choice(categories, size=(n, n_categorical))
    score = numeric[:, 0] + 0.8 * numeric[:, 1 % n_numeric]
    score = score - 0.9 * (cats[:, 0] == categories[0]) + rng.normal(0.0, 0.4, n)
    labels = np.where(score > np.median(score), "pos", "neg")

    num_names = [f"num{i}" for i in range(n_numeric)]
    cat_names = [f"cat{i}" for i in range(n_categorical)]
    csv_path = data_dir / f"{name}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(num_names + cat_names + ["outcome"])
        for i in range(n):
            num_cells = [
                "" if missing_rate and rng.random() < missing_rate else repr(float(v))
                for v in numeric[i]
            ]
            cat_cells = [
                "?" if missing_rate and rng.random() < missing_rate else c
                for c in cats[i]
            ]
            writer.writerow(num_cells + cat_cells + [labels[i]])

    manifest_path = data_dir / f"{name}.schema.json"
    doc = {
        "label": "outcome",
        "positive_label": "pos",
        "missing_markers": ["", "?"],
        "delimiter": ",",
        "features": (
            [{"name": v, "kind": "numerical"} for v in num_names]
            + [{"name": c, "kind": "categorical"} for c in cat_names]
        ),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return DatasetEntry(name, str(csv_path), str(manifest_path))
