"""Shared test construction helpers."""

import numpy as np

from tabadv.attacks import AdversarialBatch, AdversarialExample, AttackSpec
from tabadv.data import (
    DataStatistics,
    EncodedDataset,
    EncodingMap,
    FeatureDescriptor,
    SplitIndices,
    TableSchema,
)
from tabadv.models import ModelSpec, TrainedModel


def linear_model(w, b=0.0) -> TrainedModel:
    """A logistic-regression model with fixed weights (logit = w.x + b)."""
    w = np.asarray(w, dtype=np.float64)
    return TrainedModel(
        spec=ModelSpec(kind="lr"),
        params={"w0": w[:, None], "b0": np.asarray([b], dtype=np.float64)},
   )


def random_boundary_linear_model(rng, d=None, scale_range=(1.0, 4.0), dist_range=(0.02, 0.15)):
    """A linear model whose boundary sits a known distance from a box-interior x.

    Returns (model, x, y, f, w): f is the logit at x and |f|/||w|| the exact
    boundary distance, drawn small enough that crossing stays inside [0,1]^d.
    """
    if d is None:
        d = int(rng.integers(3, 16))
    direction = rng.normal(0.0, 1.0, d)
    direction /= np.linalg.norm(direction)
    w = float(rng.uniform(*scale_range)) * direction
    x = rng.uniform(0.3, 0.7, d)
    dist = float(rng.uniform(*dist_range))
    side = 1.0 if rng.random() < 0.5 else -1.0
    b = -float(w @ x) + side * dist * float(np.linalg.norm(w))
    model = linear_model(w, b)
    f = float(model.predict_logits(x[None, :])[0])
    y = int(model.predict_labels(x[None, :])[0])
    return model, x, y, f, w


def batch_from_arrays(X, X_adv, success=None, spec=None, iterations=1) -> AdversarialBatch:
    """Assemble a batch directly from original/perturbed arrays."""
    X = np.asarray(X, dtype=np.float64)
    X_adv = np.asarray(X_adv, dtype=np.float64)
    if success is None:
        success = np.zeros(X.shape[0], dtype=bool)
    if spec is None:
        spec = AttackSpec(method="fgsm", epsilon=0.3)
    examples = [
        AdversarialExample(x=X[i], x_adv=X_adv[i], success=bool(success[i]),
                           iterations_used=iterations)
        for i in range(X.shape[0])
    ]
    return AdversarialBatch(examples=examples, attack=spec,
                            instance_ids=np.arange(X.shape[0]))


def stats_from_moments(mu, cov, numeric_columns=None, sigma_feat=None,
                       ridge_lambda=0.0) -> DataStatistics:
    """DataStatistics straight from moments (cov must already be PD)."""
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if numeric_columns is None:
        numeric_columns = np.arange(mu.shape[0])
    numeric_columns = np.asarray(numeric_columns, dtype=np.int64)
    if sigma_feat is None:
        sigma_feat = np.sqrt(np.diag(cov))[numeric_columns]
    return DataStatistics(mu=mu, sigma_cov=cov, sigma_feat=np.asarray(sigma_feat),
                          ridge_lambda=ridge_lambda, numeric_columns=numeric_columns)


def numeric_dataset(X, y, train, val, test) -> EncodedDataset:
    """An all-numeric EncodedDataset with identity scaling metadata."""
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    features = tuple(
        FeatureDescriptor(name=f"f{j}", kind="numerical", observed_min=0.0, observed_max=1.0)
        for j in range(d)
    )
    schema = TableSchema(features=features, label_name="y", positive_label="1")
    encoding = EncodingMap(spans=tuple((j, j + 1) for j in range(d)), d_encoded=0, d_total=d)
    split = SplitIndices(
        train=np.asarray(train, dtype=np.int64),
        val=np.asarray(val, dtype=np.int64),
        test=np.asarray(test, dtype=np.int64),
    )
    return EncodedDataset(X=X, y=np.asarray(y, dtype=np.int64), split=split,
                          schema=schema, encoding=encoding)
