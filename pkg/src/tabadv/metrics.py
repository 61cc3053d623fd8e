"""Effectiveness and imperceptibility scoring for adversarial batches.

Five per-batch quantities: attack success rate, mean Lp perturbation size,
sparsity (fraction of coordinates/features changed beyond a tolerance),
outlier rate under a chi-squared test on squared Mahalanobis distance to
the training distribution, and variance-normalized L1 sensitivity over
numerical features. A composite score folds four of them into a weighted
harmonic mean after run-level min-max normalization; lower means harder
to tell apart from clean data.

Averages run over all attacked instances by default; pass
``successful_only=True`` to restrict any metric to flipped instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from .attacks import AdversarialBatch
from .data import DataStatistics, EncodingMap
from .errors import ContractError, UndefinedCorrelationError

DEFAULT_SPARSITY_TOL = 1e-8
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class MetricRecord:
    """All metrics for one (dataset, model, attack, epsilon) cell.

    ``is_score`` stays None until run-level normalization fills it in.
    """

    asr: float
    mean_l1: float
    mean_l2: float
    mean_linf: float
    sparsity_rate: float
    sparsity_rate_num: float
    sparsity_rate_cat: float
    outlier_rate: float
    mean_sensitivity: float
    is_score: float | None = None


@dataclass(frozen=True)
class ISConfig:
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    floor: float = 1e-6


def _selected_deltas(batch: AdversarialBatch, successful_only: bool) -> np.ndarray:
    deltas = batch.deltas()
    if successful_only:
        deltas = deltas[batch.successes()]
    return deltas


def _selected_perturbed(batch: AdversarialBatch, successful_only: bool) -> np.ndarray:
    pts = batch.perturbed()
    if successful_only:
        pts = pts[batch.successes()]
    return pts


def asr(batch: AdversarialBatch) -> float:
    """Fraction of eligible instances whose prediction flipped."""
    if len(batch) == 0:
        raise ContractError("ASR of an empty batch is undefined")
    return float(np.mean(batch.successes()))


def proximity(batch: AdversarialBatch, p, successful_only: bool = False) -> float:
    """Mean Lp norm of the perturbations, p in {1, 2, inf}."""
    if p not in (1, 2) and not (isinstance(p, float) and math.isinf(p)):
        raise ContractError(f"proximity order must be 1, 2 or inf, got {p!r}")
    deltas = _selected_deltas(batch, successful_only)
    if deltas.shape[0] == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(deltas, ord=p, axis=1)))


def sparsity(
    batch: AdversarialBatch,
    encoding: EncodingMap,
    tol: float = DEFAULT_SPARSITY_TOL,
    successful_only: bool = False,
) -> tuple[float, float, float]:
    """(overall, numerical, categorical) rates of changed coordinates.

    A coordinate counts as changed iff |delta| > tol. The overall rate is
    the mean fraction of changed encoded columns. Per-kind rates count
    original features: a one-column span is a numerical feature, a wider
    span is a categorical feature (changed iff any of its columns changed).
    A kind with no features reports 0.0.
    """
    if not tol > 0.0:
        raise ContractError("sparsity tolerance must be positive")
    deltas = _selected_deltas(batch, successful_only)
    if deltas.shape[0] == 0:
        return 0.0, 0.0, 0.0
    changed = np.abs(deltas) > tol
    n = changed.shape[0]

    # single division of exact integer counts, so rates are reproducible bitwise
    overall = float(int(changed.sum()) / (n * encoding.d_total))

    num_cols = [lo for lo, hi in encoding.spans if hi - lo == 1]
    cat_spans = [(lo, hi) for lo, hi in encoding.spans if hi - lo > 1]
    num_rate = (
        float(int(changed[:, num_cols].sum()) / (n * len(num_cols))) if num_cols else 0.0
    )
    if cat_spans:
        per_feature = np.stack(
            [changed[:, lo:hi].any(axis=1) for lo, hi in cat_spans], axis=1
        )
        cat_rate = float(int(per_feature.sum()) / (n * len(cat_spans)))
    else:
        cat_rate = 0.0
    return overall, num_rate, cat_rate


def mahalanobis(x: np.ndarray, stats: DataStatistics) -> float:
    """Distance of one point to the training distribution, via Cholesky solve."""
    return float(np.sqrt(_md2(np.asarray(x, dtype=np.float64)[None, :], stats)[0]))


def _md2(X: np.ndarray, stats: DataStatistics) -> np.ndarray:
    z = solve_triangular(stats.chol, (X - stats.mu).T, lower=True)
    return np.einsum("ij,ij->j", z, z)


def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma P(a, x), series plus continued fraction."""
    if a <= 0.0 or x < 0.0:
        raise ContractError("regularized gamma needs a > 0 and x >= 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        # series expansion around 0
        term = 1.0 / a
        total = term
        for k in range(1, 10_000):
            term *= x / (a + k)
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    return 1.0 - _gamma_q_contfrac(a, x)


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz evaluation of the upper-tail continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0.0 else 1.0 / tiny
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_critical(alpha: float, df: int, tol: float = 1e-6) -> float:
    """Value c with P(chi2_df > c) = alpha, by bisection on the regularized gamma."""
    if not 0.0 < alpha < 1.0:
        raise ContractError("alpha must lie strictly between 0 and 1")
    if df < 1:
        raise ContractError("degrees of freedom must be >= 1")
    target = 1.0 - alpha  # lower-tail mass at the critical value
    a = df / 2.0
    lo, hi = 0.0, float(df) + 10.0
    for _ in range(200):
        if regularized_gamma_p(a, hi / 2.0) >= target:
            break
        hi *= 2.0
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = (lo + hi) / 2.0
        if regularized_gamma_p(a, mid / 2.0) < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def outlier_rate(
    batch: AdversarialBatch,
    stats: DataStatistics,
    alpha: float = DEFAULT_ALPHA,
    successful_only: bool = False,
) -> float:
    """Fraction of perturbed points whose squared MD exceeds the chi-squared cutoff."""
    pts = _selected_perturbed(batch, successful_only)
    if pts.shape[0] == 0:
        return 0.0
    cutoff = chi2_critical(alpha, stats.mu.shape[0])
    return float(np.mean(_md2(pts, stats) > cutoff))


def sensitivity(
    batch: AdversarialBatch, stats: DataStatistics, successful_only: bool = False
) -> float:
    """Mean variance-normalized L1 perturbation over numerical features only."""
    deltas = _selected_deltas(batch, successful_only)
    if deltas.shape[0] == 0:
        return 0.0
    cols = stats.numeric_columns
    if cols.size == 0:
        return 0.0
    return float(np.mean(np.sum(np.abs(deltas[:, cols]) / stats.sigma_feat, axis=1)))


def weighted_harmonic_mean(components, weights, floor: float) -> float:
    """sum(w) / sum(w_i / max(c_i, floor)); strictly increasing in each component."""
    comps = [max(float(c), floor) for c in components]
    ws = [float(w) for w in weights]
    if len(comps) != len(ws) or any(w <= 0 for w in ws):
        raise ContractError("weights must be positive and match the component count")
    return sum(ws) / sum(w / c for w, c in zip(ws, comps))


def is_normalization_bounds(records: list[MetricRecord]) -> dict[str, tuple[float, float]]:
    d2 = [r.mean_l2 for r in records]
    sen = [r.mean_sensitivity for r in records]
    return {"mean_l2": (min(d2), max(d2)), "mean_sensitivity": (min(sen), max(sen))}


def imperceptibility_score(
    records: list[MetricRecord], cfg: ISConfig = ISConfig()
) -> list[MetricRecord]:
    """Fill ``is_score`` across a record set.

    Perturbation size and sensitivity are min-max normalized over the given
    records (a degenerate max == min range maps to the floor); sparsity and
    outlier rates are already in [0, 1]. Every component is floored before
    the harmonic mean so a single zero cannot produce a division by zero.
    """
    if not records:
        raise ContractError("need at least one record to normalize over")
    bounds = is_normalization_bounds(records)
    d2_lo, d2_hi = bounds["mean_l2"]
    sen_lo, sen_hi = bounds["mean_sensitivity"]

    def norm(v, lo, hi):
        if hi == lo:
            return cfg.floor
        return (v - lo) / (hi - lo)

    out = []
    for r in records:
        components = (
            norm(r.mean_l2, d2_lo, d2_hi),
            r.sparsity_rate,
            r.outlier_rate,
            norm(r.mean_sensitivity, sen_lo, sen_hi),
        )
        out.append(replace(r, is_score=weighted_harmonic_mean(components, cfg.weights, cfg.floor)))
    return out


def pearson(xs, ys) -> float:
    """Sample Pearson correlation; raises on zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ContractError("pearson needs two equal-length series of at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a zero-variance series")
    return float((dx @ dy) / math.sqrt(vx * vy))


def compute_metric_record(
    batch: AdversarialBatch,
    stats: DataStatistics,
    encoding: EncodingMap,
    alpha: float = DEFAULT_ALPHA,
    tol: float = DEFAULT_SPARSITY_TOL,
    successful_only: bool = False,
) -> MetricRecord:
    """Everything except the composite score, which needs the whole run."""
    overall, num_rate, cat_rate = sparsity(batch, encoding, tol, successful_only)
    return MetricRecord(
        asr=asr(batch),
        mean_l1=proximity(batch, 1, successful_only),
        mean_l2=proximity(batch, 2, successful_only),
        mean_linf=proximity(batch, math.inf, successful_only),
        sparsity_rate=overall,
        sparsity_rate_num=num_rate,
        sparsity_rate_cat=cat_rate,
        outlier_rate=outlier_rate(batch, stats, alpha, successful_only),
        mean_sensitivity=sensitivity(batch, stats, successful_only),
    )
