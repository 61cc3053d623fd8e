"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -s`` to see the gate lines.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from tabadv import attacks as atk
from tabadv import bench, builtin
from tabadv import metrics as met
from tabadv import models as mod
from tabadv.autodiff import finite_diff_check
from tabadv.cli import main as cli_main

from helpers import batch_from_arrays, random_boundary_linear_model, stats_from_moments

REPO_DATA_DIR = Path(os.environ.get("TABADV_DATA_DIR", Path(__file__).resolve().parent.parent / "data"))


def _gate(number, name, detail=""):
    print(f"\nACCEPTANCE {number:>2} {name}: PASS {detail}".rstrip())


# --------------------------------------------------------------------------
# 1. gradient correctness


def test_criterion_1_gradient_correctness(rng):
    t0 = time.monotonic()
    worst = 0.0
    cases = [
        ("lr", mod.ModelSpec(kind="lr"), 8),
        ("mlp", mod.ModelSpec(kind="mlp", hidden=(12, 8)), 6),
    ]
    for _, spec, d in cases:
        model = mod.TrainedModel(spec=spec, params=mod.init_params(spec, d, rng))
        for _ in range(50):
            x = rng.uniform(0.02, 0.98, size=d)
            y = int(rng.integers(0, 2))

            _, g_in = model.loss_and_input_gradient(x, y)

            def loss_at_input(v):
                losses, _ = model.input_gradients(v[None, :], [y])
                return float(losses[0])

            worst = max(worst, finite_diff_check(loss_at_input, x, g_in, h=1e-5))

            _, g_par = model.loss_and_parameter_gradients(x[None, :], [y])
            for name in model.params:
                def loss_at_param(v, name=name):
                    trial = dict(model.params)
                    trial[name] = v.reshape(model.params[name].shape)
                    probe = mod.TrainedModel(spec=spec, params=trial)
                    loss, _ = probe.loss_and_parameter_gradients(x[None, :], [y])
                    return loss

                worst = max(
                    worst,
                    finite_diff_check(loss_at_param, model.params[name].ravel(),
                                      g_par[name].ravel(), h=1e-5),
                )
    elapsed = time.monotonic() - t0
    assert worst <= 1e-4, f"finite-difference mismatch: {worst:.2e}"
    assert elapsed < 10.0, f"gradient check too slow: {elapsed:.1f}s"
    _gate(1, "gradient correctness", f"(max rel err {worst:.2e}, {elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 2. clean accuracy reproduction


def test_criterion_2a_breastcancer_accuracy(breastcancer, bc_lr, bc_mlp):
    t0 = time.monotonic()
    Xt, yt = breastcancer.X[breastcancer.split.test], breastcancer.y[breastcancer.split.test]
    acc_lr = bc_lr.accuracy(Xt, yt)
    acc_mlp = bc_mlp.accuracy(Xt, yt)
    assert abs(acc_lr - 0.9386) <= 0.05, f"LR accuracy {acc_lr:.4f} outside 0.9386±0.05"
    assert abs(acc_mlp - 0.9737) <= 0.05, f"MLP accuracy {acc_mlp:.4f} outside 0.9737±0.05"
    elapsed = time.monotonic() - t0
    assert elapsed < 120.0
    _gate(2, "clean accuracy (breast cancer)", f"(LR {acc_lr:.4f}, MLP {acc_mlp:.4f})")


def test_criterion_2b_winequality_red_accuracy():
    entry = builtin.winequality_red_entry(REPO_DATA_DIR)
    if entry is None:
        print("\nACCEPTANCE  2 clean accuracy (wine quality red): SKIP "
              "(raw data not obtainable in this environment; place winequality-red.csv "
              f"under {REPO_DATA_DIR} or run scripts/fetch_winequality.py)")
        pytest.skip("winequality-red.csv not available; see scripts/fetch_winequality.py")
    ds = bench.prepare_dataset(entry, seed=42)
    assert (len(ds.split.train), len(ds.split.val), len(ds.split.test)) == (1119, 160, 320)
    model = mod.train(ds, mod.ModelSpec(kind="lr"), mod.TrainConfig(seed=42))
    acc = model.accuracy(ds.X[ds.split.test], ds.y[ds.split.test])
    assert abs(acc - 0.7219) <= 0.06, f"LR accuracy {acc:.4f} outside 0.7219±0.06"
    _gate(2, "clean accuracy (wine quality red)", f"(LR {acc:.4f})")


# --------------------------------------------------------------------------
# 3. budget invariants


def test_criterion_3_budget_invariants(bc_lr, rng):
    checked = 0
    for method in (atk.GAUSSIAN, atk.FGSM, atk.BIM, atk.PGD):
        for eps in (0.05, 0.3, 1.0):
            X = rng.uniform(0.0, 1.0, size=(900, bc_lr.d_in))
            y = bc_lr.predict_labels(X)
            spec = atk.AttackSpec(method=method, epsilon=eps, seed=7)
            batch = atk.attack_instances(bc_lr, X, y, spec)
            deltas = batch.deltas()
            adv = batch.perturbed()
            assert np.max(np.abs(deltas)) <= eps + 1e-9, (method, eps)
            assert adv.min() >= 0.0 and adv.max() <= 1.0, (method, eps)
            checked += X.shape[0]
    assert checked >= 10_000
    _gate(3, "bounded-attack budget invariants", f"({checked} instances)")


# --------------------------------------------------------------------------
# 4. DeepFool closed form


def test_criterion_4_deepfool_closed_form():
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(100):
        model, x, y, f, w = random_boundary_linear_model(rng)
        spec = atk.AttackSpec(method=atk.DEEPFOOL, epsilon=1.0)
        ex = atk.attack_instances(model, x[None, :], [y], spec).examples[0]
        r_star = -(f / float(w @ w)) * w
        worst = max(worst, float(np.max(np.abs(ex.delta / (1.0 + spec.overshoot) - r_star))))
        assert ex.iterations_used == 1
        assert ex.success, "overshoot must flip the label on a linear model"
    assert worst <= 1e-9, f"projection error {worst:.2e}"
    _gate(4, "DeepFool one-step projection", f"(max coord err {worst:.1e})")


# --------------------------------------------------------------------------
# 5. C&W minimality on linear toys


def test_criterion_5_cw_minimality():
    rng = np.random.default_rng(505)
    t0 = time.monotonic()
    worst_ratio = 0.0
    for _ in range(100):
        model, x, y, f, w = random_boundary_linear_model(rng)
        spec = atk.AttackSpec(method=atk.CW, epsilon=1.0, clip_unbounded=False)
        ex = atk.attack_instances(model, x[None, :], [y], spec).examples[0]
        assert ex.success, "C&W must succeed on every linear toy at unconstrained budget"
        boundary = abs(f) / float(np.linalg.norm(w))
        ratio = float(np.linalg.norm(ex.delta)) / boundary
        worst_ratio = max(worst_ratio, ratio)
        assert ratio <= 1.1, f"perturbation {ratio:.3f}x boundary distance"
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0, f"C&W toys too slow: {elapsed:.1f}s"
    _gate(5, "C&W minimality", f"(worst ratio {worst_ratio:.3f}, {elapsed:.1f}s)")


# --------------------------------------------------------------------------
# 6. metric oracle equivalence


def _naive_metrics(X, X_adv, success, spans, stats, alpha, tol):
    """Independent loop-based implementations of every metric."""
    from scipy.stats import chi2 as chi2_dist

    n, d = X.shape
    asr = sum(1 for s in success if s) / n

    def prox(p):
        total = 0.0
        for i in range(n):
            diff = [X_adv[i, j] - X[i, j] for j in range(d)]
            if p == 1:
                total += sum(abs(v) for v in diff)
            elif p == 2:
                total += math.sqrt(sum(v * v for v in diff))
            else:
                total += max(abs(v) for v in diff)
        return total / n

    num_cols = [lo for lo, hi in spans if hi - lo == 1]
    cat_spans = [(lo, hi) for lo, hi in spans if hi - lo > 1]
    overall_count = num_count = cat_count = 0
    for i in range(n):
        changed = [abs(X_adv[i, j] - X[i, j]) > tol for j in range(d)]
        overall_count += sum(changed)
        num_count += sum(changed[c] for c in num_cols)
        cat_count += sum(any(changed[lo:hi]) for lo, hi in cat_spans)
    sparsity = (
        overall_count / (n * d),
        num_count / (n * len(num_cols)) if num_cols else 0.0,
        cat_count / (n * len(cat_spans)) if cat_spans else 0.0,
    )

    inv = np.linalg.inv(stats.sigma_cov)
    cutoff = chi2_dist.ppf(1.0 - alpha, d)
    outliers = 0
    for i in range(n):
        diff = X_adv[i] - stats.mu
        if float(diff @ inv @ diff) > cutoff:
            outliers += 1
    outlier = outliers / n

    sen_total = 0.0
    for i in range(n):
        sen_total += sum(
            abs(X_adv[i, c] - X[i, c]) / stats.sigma_feat[k]
            for k, c in enumerate(stats.numeric_columns)
        )
    sensitivity = sen_total / n
    return asr, prox, sparsity, outlier, sensitivity


def test_criterion_6_metric_oracle_equivalence():
    rng = np.random.default_rng(606)
    for trial in range(100):
        n = int(rng.integers(1, 21))
        spans = []
        start = 0
        while start < 8:
            width = int(rng.choice([1, 1, 2, 3]))
            width = min(width, 8 - start)
            if width == 0:
                break
            spans.append((start, start + width))
            start += width
        d = start
        X = rng.uniform(0.0, 1.0, size=(n, d))
        mask = rng.random((n, d)) < 0.5
        X_adv = np.clip(X + mask * rng.normal(0.0, 0.3, size=(n, d)), 0.0, 1.0)
        success = rng.integers(0, 2, n).astype(bool)

        A = rng.normal(size=(d, d))
        cov = A @ A.T + 0.2 * np.eye(d)
        numeric_cols = np.array([lo for lo, hi in spans if hi - lo == 1], dtype=np.int64)
        if numeric_cols.size == 0:
            numeric_cols = np.array([0], dtype=np.int64)
        stats = stats_from_moments(rng.uniform(0.2, 0.8, d), cov, numeric_columns=numeric_cols)

        from tabadv.data import EncodingMap

        enc = EncodingMap(spans=tuple(spans), d_encoded=sum(hi - lo for lo, hi in spans if hi - lo > 1), d_total=d)
        batch = batch_from_arrays(X, X_adv, success=success)

        asr_o, prox_o, spar_o, out_o, sen_o = _naive_metrics(
            X, X_adv, success, spans, stats, 0.05, 1e-8
        )
        assert met.asr(batch) == asr_o, trial
        for p, expected in ((1, prox_o(1)), (2, prox_o(2)), (math.inf, prox_o(math.inf))):
            assert abs(met.proximity(batch, p) - expected) <= 1e-12, (trial, p)
        mine = met.sparsity(batch, enc, tol=1e-8)
        assert mine == spar_o, trial
        assert met.outlier_rate(batch, stats, alpha=0.05) == out_o, trial
        assert abs(met.sensitivity(batch, stats) - sen_o) <= 1e-12, trial
    _gate(6, "metric oracle equivalence", "(100 random batches)")


# --------------------------------------------------------------------------
# 7. chi-squared inversion and calibration


def test_criterion_7_chi2_inversion_and_calibration():
    from scipy.special import gammaincinv

    for df in (1, 10, 105):
        oracle = 2.0 * gammaincinv(df / 2.0, 0.95)
        mine = met.chi2_critical(0.05, df)
        assert abs(mine - oracle) <= 1e-2, (df, mine, oracle)

    rng = np.random.default_rng(707)
    d = 6
    A = rng.normal(size=(d, d))
    cov_true = A @ A.T + 0.5 * np.eye(d)
    mu_true = rng.normal(size=d)
    chol = np.linalg.cholesky(cov_true)
    train = mu_true + rng.normal(size=(4000, d)) @ chol.T
    stats = stats_from_moments(
        train.mean(axis=0), np.cov(train, rowvar=False, ddof=1) + 1e-6 * np.eye(d)
    )
    fresh = mu_true + rng.normal(size=(10_000, d)) @ chol.T
    batch = batch_from_arrays(fresh, fresh)
    rate = met.outlier_rate(batch, stats, alpha=0.05)
    assert abs(rate - 0.05) <= 0.02, f"calibration rate {rate:.4f}"
    _gate(7, "chi-squared inversion and calibration", f"(clean outlier rate {rate:.4f})")


# --------------------------------------------------------------------------
# 8. composite-score identities


def test_criterion_8_is_identities():
    for v in (0.5, 0.25, 0.125, 0.0625):
        assert met.weighted_harmonic_mean((v, v, v, v), (1, 1, 1, 1), 1e-6) == v
    rng = np.random.default_rng(808)
    for _ in range(200):
        comps = rng.uniform(0.01, 1.0, 4)
        base = met.weighted_harmonic_mean(comps, (1, 1, 1, 1), 1e-6)
        idx = int(rng.integers(0, 4))
        bumped = comps.copy()
        bumped[idx] += rng.uniform(0.01, 0.5)
        assert met.weighted_harmonic_mean(bumped, (1, 1, 1, 1), 1e-6) > base
    _gate(8, "composite-score identities", "(exact equal-component mean; monotone)")


# --------------------------------------------------------------------------
# 9. qualitative findings at desk scale


def test_criterion_9_qualitative_findings(breastcancer, breastcancer_stats, bc_mlp):
    t0 = time.monotonic()
    ds, stats = breastcancer, breastcancer_stats
    cells = {}
    for method, eps in ((atk.FGSM, 0.3), (atk.BIM, 0.3), (atk.PGD, 0.3), (atk.CW, 1.0)):
        spec = atk.AttackSpec(method=method, epsilon=eps, seed=42)
        batch = atk.run_attack(bc_mlp, ds, spec)
        cells[method] = met.compute_metric_record(batch, stats, ds.encoding)

    for method in (atk.FGSM, atk.BIM, atk.PGD):
        assert cells[method].outlier_rate >= cells[atk.CW].outlier_rate, method
        assert cells[atk.CW].mean_l2 <= cells[method].mean_l2, method
    assert cells[atk.PGD].asr >= cells[atk.FGSM].asr - 0.02
    elapsed = time.monotonic() - t0
    assert elapsed < 300.0
    _gate(
        9, "qualitative findings",
        f"(OR linf {min(cells[m].outlier_rate for m in (atk.FGSM, atk.BIM, atk.PGD)):.2f} "
        f">= CW {cells[atk.CW].outlier_rate:.2f}; "
        f"l2 CW {cells[atk.CW].mean_l2:.3f}; {elapsed:.0f}s)",
    )


# --------------------------------------------------------------------------
# 10. BIM step-size presets through the CLI


def test_criterion_10_bim_preset_comparison(breastcancer_entry, tmp_path):
    out = tmp_path / "out"
    config = tmp_path / "bench.ini"
    config.write_text(
        "\n".join([
            "[run]",
            f"out = {out}",
            "seed = 42",
            "repetitions = 1",
            "datasets = breastcancer",
            "models = lr",
            "attacks = bim",
            "[dataset.breastcancer]",
            f"csv = {breastcancer_entry.csv_path}",
            f"manifest = {breastcancer_entry.manifest_path}",
        ]) + "\n"
    )
    assert cli_main(["attack", "--config", str(config), "--bim-compare"]) == 0
    rows = (out / "bim_comparison.csv").read_text().strip().splitlines()
    assert rows[0] == "dataset,model,epsilon,asr_default,asr_adjusted"
    assert len(rows) == 1 + len(bench.DEFAULT_EPS_GRID)
    for line in rows[1:]:
        _, _, eps, asr_default, asr_adjusted = line.split(",")
        assert float(asr_adjusted) >= float(asr_default) - 0.02, line
    _gate(10, "BIM preset comparison", f"({len(rows) - 1} budgets, adjusted >= default - 0.02)")


# --------------------------------------------------------------------------
# 11. determinism of the full pipeline


def test_criterion_11_full_run_determinism(breastcancer_entry, tmp_path):
    out = tmp_path / "out"
    config = tmp_path / "bench.ini"
    config.write_text(
        "\n".join([
            "[run]",
            f"out = {out}",
            "seed = 42",
            "repetitions = 2",
            "eps_grid = 0.05, 0.3",
            "datasets = breastcancer",
            "models = lr",
            "attacks = gaussian, fgsm, pgd",
            "[dataset.breastcancer]",
            f"csv = {breastcancer_entry.csv_path}",
            f"manifest = {breastcancer_entry.manifest_path}",
        ]) + "\n"
    )
    assert cli_main(["all", "--config", str(config)]) == 0
    first_records = (out / "records.csv").read_bytes()
    first_analyses = (out / "analyses.json").read_bytes()

    assert cli_main(["all", "--config", str(config)]) == 0  # warm caches
    assert (out / "records.csv").read_bytes() == first_records
    assert (out / "analyses.json").read_bytes() == first_analyses

    import shutil

    shutil.rmtree(out)  # cold rerun
    assert cli_main(["all", "--config", str(config)]) == 0
    assert (out / "records.csv").read_bytes() == first_records
    assert (out / "analyses.json").read_bytes() == first_analyses
    _gate(11, "full-run determinism", "(warm and cold reruns byte-identical)")


# --------------------------------------------------------------------------
# 12. plateau, representative-epsilon, and quadrant logic


def test_criterion_12_selection_and_quadrant_logic():
    grid = bench.DEFAULT_EPS_GRID
    curve = list(zip(grid, (0.1, 0.5, 0.9, 0.905, 0.905, 0.91, 0.91)))
    assert bench.plateau_select(curve, delta=0.01) == 0.1
    assert bench.plateau_select(list(zip(grid, [0.4] * 7)), delta=0.01) == 0.01
    assert bench.plateau_select(list(zip(grid, np.linspace(0.1, 0.7, 7))), delta=0.01) == 1.0
    assert bench.representative_epsilon([0.3, 0.1, 0.3]) == 0.3
    assert bench.representative_epsilon([0.1, 0.3, 0.1, 0.3]) == 0.1

    th = bench.QuadrantThresholds(asr_threshold=0.659, is_threshold=0.181)

    def probe(asr, is_score):
        metrics = met.MetricRecord(
            asr=asr, mean_l1=0, mean_l2=0, mean_linf=0, sparsity_rate=0,
            sparsity_rate_num=0, sparsity_rate_cat=0, outlier_rate=0,
            mean_sensitivity=0, is_score=is_score,
        )
        return bench.quadrant_classify(bench.RunRecord("d", "m", "fgsm", 0.3, None, metrics), th)

    quadrants = {probe(0.9, 0.1), probe(0.9, 0.5), probe(0.2, 0.1), probe(0.2, 0.5)}
    assert quadrants == {"EffImp", "EffPer", "IneffImp", "IneffPer"}
    _gate(12, "plateau / representative / quadrant logic")
