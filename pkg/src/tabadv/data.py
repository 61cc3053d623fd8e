"""Tabular ingestion: schema, imputation, stratified splits, encoding, statistics.

The pipeline is load -> split -> impute -> encode -> statistics. Imputation
and all fitted quantities (medians, modes, min/max, vocabularies used for
scaling, covariance) are computed on the training split only, and the
encoded matrix lives in [0, 1]^d so downstream perturbation budgets are
well defined for every instance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .errors import (
    ContractError,
    ParseError,
    PreprocessingError,
    SchemaError,
    StatisticsError,
    StratificationError,
)

FeatureKind = Literal["numerical", "categorical"]

DEFAULT_MISSING_MARKERS = ("", "?")


@dataclass(frozen=True)
class FeatureDescriptor:
    """One input column: its kind plus fitted scaling/vocabulary info."""

    name: str
    kind: FeatureKind
    categories: tuple[str, ...] = ()
    observed_min: float | None = None
    observed_max: float | None = None


@dataclass(frozen=True)
class TableSchema:
    features: tuple[FeatureDescriptor, ...]
    label_name: str
    positive_label: str
    missing_markers: tuple[str, ...] = DEFAULT_MISSING_MARKERS
    delimiter: str = ","

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names in schema")
        if self.label_name in names:
            raise SchemaError(f"label column {self.label_name!r} listed among features")

    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]


@dataclass
class RawTable:
    """Row-major cells, column-indexed by feature name.

    Numerical columns hold floats with NaN as the missing marker;
    categorical columns hold strings with None as the missing marker.
    """

    columns: dict[str, list]
    labels: list[str]

    @property
    def n_rows(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class EncodingMap:
    """Feature index -> contiguous encoded column span.

    ``spans[i]`` is the half-open (start, stop) range owned by feature i of
    the fitted schema: one column per numerical feature, k columns for a
    categorical feature with k categories. ``d_encoded`` counts one-hot
    columns only; ``d_total`` counts everything.
    """

    spans: tuple[tuple[int, int], ...]
    d_encoded: int
    d_total: int


@dataclass
class EncodedDataset:
    X: np.ndarray
    y: np.ndarray
    split: SplitIndices
    schema: TableSchema
    encoding: EncodingMap

    @property
    def d_total(self) -> int:
        return self.encoding.d_total

    def numeric_columns(self) -> np.ndarray:
        """Encoded column indices of the numerical features, in feature order."""
        cols = [
            self.encoding.spans[i][0]
            for i, f in enumerate(self.schema.features)
            if f.kind == "numerical"
        ]
        return np.asarray(cols, dtype=np.int64)

    def categorical_spans(self) -> list[tuple[int, int]]:
        return [
            self.encoding.spans[i]
            for i, f in enumerate(self.schema.features)
            if f.kind == "categorical"
        ]


@dataclass
class DataStatistics:
    """Training-split moments used by the distributional metrics.

    ``sigma_cov`` already includes the ridge term, and its Cholesky factor
    is computed at construction so an unfactorizable covariance fails fast.
    """

    mu: np.ndarray
    sigma_cov: np.ndarray
    sigma_feat: np.ndarray
    ridge_lambda: float
    numeric_columns: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma_cov = np.asarray(self.sigma_cov, dtype=np.float64)
        if not np.allclose(self.sigma_cov, self.sigma_cov.T, atol=1e-12):
            raise StatisticsError("covariance matrix is not symmetric")
        try:
            self.chol = np.linalg.cholesky(self.sigma_cov)
        except np.linalg.LinAlgError as exc:
            raise StatisticsError(f"ridged covariance is not positive definite: {exc}") from exc


def load_schema_manifest(path) -> TableSchema:
    """Read a JSON schema manifest: feature kinds, vocabularies, label, markers."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    features = []
    for item in doc["features"]:
        kind = item["kind"]
        if kind not in ("numerical", "categorical"):
            raise SchemaError(f"feature {item['name']!r} has unknown kind {kind!r}")
        features.append(
            FeatureDescriptor(
                name=item["name"],
                kind=kind,
                categories=tuple(item.get("categories", ())),
            )
        )
    return TableSchema(
        features=tuple(features),
        label_name=doc["label"],
        positive_label=str(doc["positive_label"]),
        missing_markers=tuple(doc.get("missing_markers", DEFAULT_MISSING_MARKERS)),
        delimiter=doc.get("delimiter", ","),
    )


def load_table(path, schema: TableSchema) -> RawTable:
    """Parse a header-carrying CSV against the schema, preserving missing markers."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        pos = {name: i for i, name in enumerate(header)}
        needed = schema.feature_names() + [schema.label_name]
        missing_cols = [c for c in needed if c not in pos]
        if missing_cols:
            raise SchemaError(f"{path}: missing columns {missing_cols}")

        markers = set(schema.missing_markers)
        columns: dict[str, list] = {f.name: [] for f in schema.features}
        labels: list[str] = []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}"
                )
            for feat in schema.features:
                cell = row[pos[feat.name]].strip()
                if feat.kind == "numerical":
                    if cell in markers:
                        columns[feat.name].append(math.nan)
                    else:
                        try:
                            columns[feat.name].append(float(cell))
                        except ValueError:
                            raise ParseError(
                                f"{path}: row {row_no}, column {feat.name!r}: "
                                f"cannot parse {cell!r} as a number"
                            ) from None
                else:
                    columns[feat.name].append(None if cell in markers else cell)
            labels.append(row[pos[schema.label_name]].strip())
    return RawTable(columns=columns, labels=labels)


def impute(table: RawTable, schema: TableSchema, split: SplitIndices | None = None) -> RawTable:
    """Fill gaps with the training-split median (numerical) or mode (categorical).

    With no split given the whole table acts as the fitting population.
    A table without missing values comes back unchanged (new object,
    identical cells).
    """
    fit_rows = np.arange(table.n_rows) if split is None else split.train
    out: dict[str, list] = {}
    for feat in schema.features:
        col = table.columns[feat.name]
        if feat.kind == "numerical":
            train_vals = [col[i] for i in fit_rows if not math.isnan(col[i])]
            if any(math.isnan(v) for v in col):
                if not train_vals:
                    raise PreprocessingError(
                        f"feature {feat.name!r}: no observed training values to impute from"
                    )
                fill = float(np.median(train_vals))
                out[feat.name] = [fill if math.isnan(v) else v for v in col]
            else:
                out[feat.name] = list(col)
        else:
            train_vals = [col[i] for i in fit_rows if col[i] is not None]
            if any(v is None for v in col):
                if not train_vals:
                    raise PreprocessingError(
                        f"feature {feat.name!r}: no observed training values to impute from"
                    )
                counts: dict[str, int] = {}
                for v in train_vals:
                    counts[v] = counts.get(v, 0) + 1
                # mode; ties broken toward the lexicographically smallest label
                fill = min(counts, key=lambda k: (-counts[k], k))
                out[feat.name] = [fill if v is None else v for v in col]
            else:
                out[feat.name] = list(col)
    return RawTable(columns=out, labels=list(table.labels))


def split_stratified(n: int, y, seed: int) -> SplitIndices:
    """Deterministic 70/10/20 stratified split.

    Two stages: first hold out ceil(0.2 n) for test, then ceil(1/8 of the
    remainder) for validation, each stage allocating per-class counts by
    largest remainder so every class lands within one instance of its
    proportional share.
    """
    y = np.asarray(y)
    if n < 10:
        raise ContractError(f"need at least 10 instances to split, got {n}")
    if y.shape[0] != n:
        raise ContractError("label vector length does not match n")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise ContractError("both classes must be present")
    tiny = classes[counts < 3]
    if tiny.size:
        raise StratificationError(
            f"class {tiny[0]!r} has fewer than 3 instances; cannot stratify 70/10/20"
        )

    rng = np.random.default_rng(seed)
    everything = np.arange(n)
    test = _stratified_take(everything, y, math.ceil(0.2 * n), rng)
    rest = np.setdiff1d(everything, test, assume_unique=True)
    val = _stratified_take(rest, y[rest], math.ceil(len(rest) / 8.0), rng)
    train = np.setdiff1d(rest, val, assume_unique=True)
    return SplitIndices(train=np.sort(train), val=np.sort(val), test=np.sort(test))


def _stratified_take(pool: np.ndarray, pool_labels: np.ndarray, k: int, rng) -> np.ndarray:
    classes = np.unique(pool_labels)
    shares = []
    for c in classes:
        exact = k * np.count_nonzero(pool_labels == c) / len(pool)
        shares.append([c, int(math.floor(exact)), exact - math.floor(exact)])
    remainder = k - sum(s[1] for s in shares)
    for s in sorted(shares, key=lambda s: (-s[2], str(s[0])))[:remainder]:
        s[1] += 1
    taken = []
    for c, m, _ in shares:
        members = np.sort(pool[pool_labels == c])
        taken.append(members[rng.permutation(len(members))[:m]])
    return np.sort(np.concatenate(taken))


def fit_encode(table: RawTable, schema: TableSchema, split: SplitIndices) -> EncodedDataset:
    """Scale, one-hot encode, and assemble the [0,1]^d feature matrix.

    Constant-on-train and exactly duplicated features are removed first.
    Min/max scaling is fitted on the training rows and val/test values are
    clamped into [0, 1] afterwards. Categorical vocabularies come from the
    manifest when given, otherwise from the full imputed table, so clean
    one-hot rows always sum to 1 on every split.
    """
    train_rows = split.train
    for feat in schema.features:
        col = table.columns[feat.name]
        bad = (
            any(isinstance(v, float) and math.isnan(v) for v in col)
            if feat.kind == "numerical"
            else any(v is None for v in col)
        )
        if bad:
            raise PreprocessingError(f"feature {feat.name!r} still has missing values; impute first")

    kept: list[FeatureDescriptor] = []
    seen_train_columns: set[tuple] = set()
    for feat in schema.features:
        col = table.columns[feat.name]
        train_col = tuple(col[i] for i in train_rows)
        if len(set(train_col)) < 2:
            continue  # constant on train (includes single-category features)
        if train_col in seen_train_columns:
            continue  # exact duplicate of an earlier feature
        seen_train_columns.add(train_col)
        kept.append(feat)
    if not kept:
        raise PreprocessingError("all features removed as constant or duplicate")

    n = table.n_rows
    fitted: list[FeatureDescriptor] = []
    blocks: list[np.ndarray] = []
    spans: list[tuple[int, int]] = []
    start = 0
    d_encoded = 0
    for feat in kept:
        col = table.columns[feat.name]
        if feat.kind == "numerical":
            vals = np.asarray(col, dtype=np.float64)
            lo = float(vals[train_rows].min())
            hi = float(vals[train_rows].max())
            scaled = np.clip((vals - lo) / (hi - lo), 0.0, 1.0)
            blocks.append(scaled[:, None])
            fitted.append(replace(feat, observed_min=lo, observed_max=hi))
            spans.append((start, start + 1))
            start += 1
        else:
            vocab = feat.categories or tuple(sorted(set(col)))
            index = {c: j for j, c in enumerate(vocab)}
            block = np.zeros((n, len(vocab)), dtype=np.float64)
            for i, v in enumerate(col):
                j = index.get(v)
                if j is None:
                    raise PreprocessingError(
                        f"feature {feat.name!r}: value {v!r} not in declared categories"
                    )
                block[i, j] = 1.0
            blocks.append(block)
            fitted.append(replace(feat, categories=vocab))
            spans.append((start, start + len(vocab)))
            start += len(vocab)
            d_encoded += len(vocab)

    X = np.hstack(blocks)
    y = np.asarray([1 if lab == schema.positive_label else 0 for lab in table.labels],
                   dtype=np.int64)
    out_schema = replace(schema, features=tuple(fitted))
    encoding = EncodingMap(spans=tuple(spans), d_encoded=d_encoded, d_total=start)
    return EncodedDataset(X=X, y=y, split=split, schema=out_schema, encoding=encoding)


def decode_row(ds: EncodedDataset, x: np.ndarray) -> dict[str, object]:
    """Map one encoded row back to feature values.

    Categorical spans decode by argmax to the category label; numerical
    columns are unscaled through the fitted min/max.
    """
    out: dict[str, object] = {}
    for feat, (lo_col, hi_col) in zip(ds.schema.features, ds.encoding.spans):
        if feat.kind == "numerical":
            v = float(x[lo_col])
            out[feat.name] = v * (feat.observed_max - feat.observed_min) + feat.observed_min
        else:
            out[feat.name] = feat.categories[int(np.argmax(x[lo_col:hi_col]))]
    return out


def fit_statistics(
    ds: EncodedDataset, ridge_lambda: float = 1e-6, sigma_floor: float = 1e-8
) -> DataStatistics:
    """Fit mean, ridged covariance, and per-numerical-feature std on the training split."""
    Xtr = ds.X[ds.split.train]
    if Xtr.shape[0] < 2:
        raise StatisticsError("need at least 2 training rows to fit statistics")
    mu = Xtr.mean(axis=0)
    base = np.atleast_2d(np.cov(Xtr, rowvar=False, ddof=1))
    base = (base + base.T) / 2.0
    numeric_cols = ds.numeric_columns()
    sigma_feat = np.sqrt(np.maximum(np.diag(base)[numeric_cols], 0.0))
    sigma_feat = np.maximum(sigma_feat, sigma_floor)
    sigma_cov = base + ridge_lambda * np.eye(base.shape[0])
    return DataStatistics(
        mu=mu,
        sigma_cov=sigma_cov,
        sigma_feat=sigma_feat,
        ridge_lambda=ridge_lambda,
        numeric_columns=numeric_cols,
    )


def schema_to_dict(schema: TableSchema) -> dict:
    return {
        "label": schema.label_name,
        "positive_label": schema.positive_label,
        "missing_markers": list(schema.missing_markers),
        "delimiter": schema.delimiter,
        "features": [
            {
                "name": f.name,
                "kind": f.kind,
                "categories": list(f.categories),
                "observed_min": f.observed_min,
                "observed_max": f.observed_max,
            }
            for f in schema.features
        ],
    }


def schema_from_dict(doc: dict) -> TableSchema:
    return TableSchema(
        features=tuple(
            FeatureDescriptor(
                name=f["name"],
                kind=f["kind"],
                categories=tuple(f.get("categories", ())),
                observed_min=f.get("observed_min"),
                observed_max=f.get("observed_max"),
            )
            for f in doc["features"]
        ),
        label_name=doc["label"],
        positive_label=doc["positive_label"],
        missing_markers=tuple(doc.get("missing_markers", DEFAULT_MISSING_MARKERS)),
        delimiter=doc.get("delimiter", ","),
    )
