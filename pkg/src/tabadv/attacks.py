"""White-box untargeted attacks on [0,1]^d tabular inputs.

Six methods share one contract: given a model and the correctly classified
test instances, produce one perturbed point per instance plus a success
flag re-checked after all clipping. FGSM/BIM/PGD and the Gaussian baseline
stay inside the L-inf ball of radius epsilon by construction; DeepFool and
the Carlini-Wagner L2 attack minimize perturbation size and are clipped
into the ball afterwards (switchable via ``clip_unbounded``).

Every instance owns a random stream derived from (seed, instance position),
so batches are reproducible and safe to shard across workers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import EncodedDataset
from .errors import ContractError
from .models import Adam, TrainedModel

GAUSSIAN = "gaussian"
FGSM = "fgsm"
BIM = "bim"
PGD = "pgd"
DEEPFOOL = "deepfool"
CW = "cw"

METHODS = (GAUSSIAN, FGSM, BIM, PGD, DEEPFOOL, CW)
BOUNDED_METHODS = frozenset({GAUSSIAN, FGSM, BIM, PGD})

_CW_TANH_CLIP = 1e-6
_GRAD_NORM_FLOOR = 1e-24


@dataclass(frozen=True)
class AttackSpec:
    """Method name plus every tunable the six attacks read.

    ``epsilon`` is the L-inf budget for the bounded methods and the post-hoc
    clip radius for the unbounded ones (disable with ``clip_unbounded=False``).
    ``step_size`` defaults to epsilon/steps when left unset.
    """

    method: str
    epsilon: float
    steps: int = 10
    step_size: float | None = None
    overshoot: float = 0.02
    max_iter_deepfool: int = 50
    binary_search_steps: int = 10
    c_init: float = 1e-3
    kappa: float = 0.0
    cw_inner_iters: int = 100
    cw_inner_lr: float = 0.01
    noise_sigma_rule: Callable[[float], float] | None = None
    seed: int = 0
    clip_unbounded: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown attack method {self.method!r}")
        if not self.epsilon > 0.0:
            raise ContractError("epsilon must be positive")
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.step_size is not None and not self.step_size > 0.0:
            raise ContractError("step_size must be positive when given")

    @property
    def effective_step_size(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / self.steps

    @property
    def noise_sigma(self) -> float:
        rule = self.noise_sigma_rule
        return rule(self.epsilon) if rule is not None else self.epsilon


@dataclass
class AdversarialExample:
    x: np.ndarray
    x_adv: np.ndarray
    success: bool
    iterations_used: int

    @property
    def delta(self) -> np.ndarray:
        return self.x_adv - self.x


@dataclass
class AdversarialBatch:
    """One AdversarialExample per eligible (correctly classified) test instance."""

    examples: list[AdversarialExample]
    attack: AttackSpec
    model_id: str = ""
    dataset_id: str = ""
    instance_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.examples)

    def originals(self) -> np.ndarray:
        return np.stack([e.x for e in self.examples])

    def perturbed(self) -> np.ndarray:
        return np.stack([e.x_adv for e in self.examples])

    def deltas(self) -> np.ndarray:
        return self.perturbed() - self.originals()

    def successes(self) -> np.ndarray:
        return np.asarray([e.success for e in self.examples], dtype=bool)


def clip_box_and_ball(x: np.ndarray, x_ref: np.ndarray, epsilon: float) -> np.ndarray:
    """Componentwise clamp into [x_ref - eps, x_ref + eps] intersected with [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if x.shape != x_ref.shape:
        raise ContractError(f"clip operands differ in shape: {x.shape} vs {x_ref.shape}")
    return np.clip(np.clip(x, x_ref - epsilon, x_ref + epsilon), 0.0, 1.0)


def eligible_test_instances(model: TrainedModel, ds: EncodedDataset) -> np.ndarray:
    """Test rows the clean model classifies correctly; the attack population."""
    test = ds.split.test
    correct = model.predict_labels(ds.X[test]) == ds.y[test]
    return test[correct]


def run_attack(
    model: TrainedModel,
    ds: EncodedDataset,
    spec: AttackSpec,
    model_id: str = "",
    dataset_id: str = "",
) -> AdversarialBatch:
    """Attack every eligible test instance and assemble the batch."""
    rows = eligible_test_instances(model, ds)
    if rows.size == 0:
        raise ContractError("no correctly classified test instances to attack")
    return attack_instances(model, ds.X[rows], ds.y[rows], spec,
                            model_id=model_id, dataset_id=dataset_id, instance_ids=rows)


def attack_instances(
    model: TrainedModel,
    X: np.ndarray,
    y,
    spec: AttackSpec,
    model_id: str = "",
    dataset_id: str = "",
    instance_ids: np.ndarray | None = None,
) -> AdversarialBatch:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    x_adv, iters = _ATTACK_FNS[spec.method](model, X, y, spec)

    if spec.method not in BOUNDED_METHODS:
        if spec.clip_unbounded:
            x_adv = clip_box_and_ball(x_adv, X, spec.epsilon)
        else:
            x_adv = np.clip(x_adv, 0.0, 1.0)
    # success is whatever survives the final clipping
    success = model.predict_labels(x_adv) != y

    examples = [
        AdversarialExample(x=X[i], x_adv=x_adv[i], success=bool(success[i]),
                           iterations_used=int(iters[i]))
        for i in range(X.shape[0])
    ]
    if instance_ids is None:
        instance_ids = np.arange(X.shape[0], dtype=np.int64)
    return AdversarialBatch(examples=examples, attack=spec, model_id=model_id,
                            dataset_id=dataset_id, instance_ids=np.asarray(instance_ids))


def _gaussian(model, X, y, spec):
    n, d = X.shape
    sigma = spec.noise_sigma
    noise = np.stack([
        np.random.default_rng((spec.seed, i)).normal(0.0, sigma, size=d) for i in range(n)
    ])
    x_adv = clip_box_and_ball(X + noise, X, spec.epsilon)
    return x_adv, np.zeros(n, dtype=np.int64)


def _fgsm(model, X, y, spec):
    _, grads = model.input_gradients(X, y)
    x_adv = clip_box_and_ball(X + spec.epsilon * np.sign(grads), X, spec.epsilon)
    return x_adv, np.ones(X.shape[0], dtype=np.int64)


def _bim(model, X, y, spec, x_start=None):
    alpha = spec.effective_step_size
    x_t = X.copy() if x_start is None else x_start
    for _ in range(spec.steps):
        _, grads = model.input_gradients(x_t, y)
        x_t = clip_box_and_ball(x_t + alpha * np.sign(grads), X, spec.epsilon)
    return x_t, np.full(X.shape[0], spec.steps, dtype=np.int64)


def _pgd(model, X, y, spec):
    n, d = X.shape
    start = np.stack([
        np.random.default_rng((spec.seed, i)).uniform(-spec.epsilon, spec.epsilon, size=d)
        for i in range(n)
    ])
    x0 = clip_box_and_ball(X + start, X, spec.epsilon)
    return _bim(model, X, y, spec, x_start=x0)


def _deepfool(model, X, y, spec):
    n, d = X.shape
    x_adv = np.empty_like(X)
    iters = np.zeros(n, dtype=np.int64)
    for i in range(n):
        x = X[i]
        r_tot = np.zeros(d)
        x_t = x.copy()
        used = 0
        for t in range(spec.max_iter_deepfool):
            z, g = model.logit_input_gradients(x_t[None, :])
            w = g[0]
            wn2 = float(w @ w)
            if wn2 <= _GRAD_NORM_FLOOR:
                break  # flat logit; no direction to move in
            step = -(float(z[0]) / wn2) * w
            r_tot += step
            x_t = x_t + step
            used = t + 1
            candidate = np.clip(x + (1.0 + spec.overshoot) * r_tot, 0.0, 1.0)
            if model.predict_labels(candidate[None, :])[0] != y[i]:
                break
        x_adv[i] = np.clip(x + (1.0 + spec.overshoot) * r_tot, 0.0, 1.0)
        iters[i] = used
    return x_adv, iters


def _cw(model, X, y, spec):
    """L2-minimal attack: tanh box change of variables, Adam inner loop,
    and a per-instance binary search on the misclassification weight c
    (doubled until a success is seen, bisected afterwards)."""
    n, d = X.shape
    x_boxed = np.clip(X, _CW_TANH_CLIP, 1.0 - _CW_TANH_CLIP)
    u0 = np.arctanh(2.0 * x_boxed - 1.0)
    sign = np.where(y == 1, 1.0, -1.0)  # hinge is max(sign * z, -kappa)

    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    c = np.full(n, spec.c_init)
    best = X.copy()
    best_d2 = np.full(n, np.inf)
    found = np.zeros(n, dtype=bool)

    def consider(x_cand, z):
        delta = x_cand - X
        flipped = (z > 0.0) != (y == 1)
        d2 = np.einsum("ij,ij->i", delta, delta)
        better = flipped & (d2 < best_d2)
        best[better] = x_cand[better]
        best_d2[better] = d2[better]
        found[flipped] = True
        return flipped

    for _ in range(spec.binary_search_steps):
        u = u0.copy()
        opt = Adam(lr=spec.cw_inner_lr)
        success_at_c = np.zeros(n, dtype=bool)
        for _ in range(spec.cw_inner_iters):
            x_cand = (np.tanh(u) + 1.0) / 2.0
            z, g_logit = model.logit_input_gradients(x_cand)
            success_at_c |= consider(x_cand, z)
            active = (sign * z) > -spec.kappa
            g_x = 2.0 * (x_cand - X) + (c * sign * active)[:, None] * g_logit
            g_u = g_x * (1.0 - np.tanh(u) ** 2) / 2.0
            opt.step({"u": u}, {"u": g_u})
        x_cand = (np.tanh(u) + 1.0) / 2.0
        success_at_c |= consider(x_cand, model.predict_logits(x_cand))

        upper = np.where(success_at_c, np.minimum(upper, c), upper)
        lower = np.where(success_at_c, lower, np.maximum(lower, c))
        c = np.where(np.isinf(upper), c * 2.0, (lower + upper) / 2.0)

    x_adv = np.where(found[:, None], best, X)  # failures come back unperturbed
    iters = np.full(n, spec.binary_search_steps * spec.cw_inner_iters, dtype=np.int64)
    return x_adv, iters


_ATTACK_FNS = {
    GAUSSIAN: _gaussian,
    FGSM: _fgsm,
    BIM: _bim,
    PGD: _pgd,
    DEEPFOOL: _deepfool,
    CW: _cw,
}


def export_batch(batch: AdversarialBatch, path, include_delta: bool = False) -> None:
    """Write per-instance results as CSV, or JSON for a .json path."""
    rows = []
    for rid, ex in zip(batch.instance_ids, batch.examples):
        delta = ex.delta
        row = {
            "instance_id": int(rid),
            "success": int(ex.success),
            "l2": float(np.linalg.norm(delta)),
            "linf": float(np.max(np.abs(delta))) if delta.size else 0.0,
            "iterations_used": ex.iterations_used,
        }
        if include_delta:
            row["delta"] = [float(v) for v in delta]
        rows.append(row)

    path = str(path)
    if path.endswith(".json"):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"attack": batch.attack.method, "epsilon": batch.attack.epsilon,
                       "model": batch.model_id, "dataset": batch.dataset_id,
                       "instances": rows}, fh, sort_keys=True)
            fh.write("\n")
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        names = ["instance_id", "success", "l2", "linf", "iterations_used"]
        if include_delta:
            names.append("delta")
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        for row in rows:
            if include_delta:
                row["delta"] = " ".join(repr(v) for v in row["delta"])
            writer.writerow(row)
