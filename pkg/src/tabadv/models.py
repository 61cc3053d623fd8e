"""Differentiable binary classifiers: logistic regression and a small MLP.

Both expose one contract the attack code consumes: a single positive-class
logit z (the implicit negative-class logit is 0, so the predicted label is
1 iff z > 0), the sigmoid cross-entropy loss on that logit, and exact
input gradients of both loss and logit via the tape.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import EncodedDataset
from .errors import ContractError, ShapeError, TrainingError

LR = "lr"
MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    kind: str = LR
    hidden: tuple[int, ...] = (64, 32)
    dropout_p: float = 0.2

    def layer_widths(self) -> tuple[int, ...]:
        return self.hidden

    def __post_init__(self):
        if self.kind not in (LR, MLP):
            raise ContractError(f"unknown model kind {self.kind!r}")
        if self.kind == LR:
            object.__setattr__(self, "hidden", ())  # pure affine baseline
        elif not self.hidden:
            raise ContractError("MLP requires at least one hidden layer")


@dataclass(frozen=True)
class TrainConfig:
    """Fixed protocol: 20 epochs of Adam at batch size 512.

    On desk-scale datasets that protocol degenerates (a 398-row training
    split yields one optimizer step per epoch, 20 steps total, which leaves
    the weights at their init), so ``min_optimizer_steps`` keeps cycling
    epochs until the optimizer has taken at least that many steps. Datasets
    large enough that 20 epochs already exceed the floor are unaffected;
    set it to 0 for the literal fixed-epoch protocol.
    """

    epochs: int = 20
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 42
    min_optimizer_steps: int = 2000


class Adam:
    """Plain Adam over a dict of named parameter arrays, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, p in params.items():
            g = grads[name]
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            mhat = m / (1.0 - self.beta1**self.t)
            vhat = v / (1.0 - self.beta2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def init_params(spec: ModelSpec, d_in: int, rng) -> dict[str, np.ndarray]:
    """Seeded uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out))."""
    widths = list(spec.layer_widths()) + [1]
    params: dict[str, np.ndarray] = {}
    fan_in = d_in
    for i, fan_out in enumerate(widths):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"w{i}"] = rng.uniform(-a, a, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
        fan_in = fan_out
    return params


def _forward(
    params_t: dict[str, ad.Tensor],
    x: ad.Tensor,
    spec: ModelSpec,
    training: bool = False,
    dropout_seed: tuple = (),
) -> ad.Tensor:
    widths = spec.layer_widths()
    h = x
    for i in range(len(widths)):
        h = ad.relu(ad.affine(h, params_t[f"w{i}"], params_t[f"b{i}"]))
        if training and spec.dropout_p > 0.0:
            h = ad.dropout_mask(h, spec.dropout_p, (*dropout_seed, i))
    i = len(widths)
    return ad.affine(h, params_t[f"w{i}"], params_t[f"b{i}"])


@dataclass
class TrainedModel:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    training_log: list[dict] = field(default_factory=list)

    @property
    def d_in(self) -> int:
        return self.params["w0"].shape[0]

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d_in:
            raise ShapeError(f"expected (n, {self.d_in}) inputs, got {X.shape}")
        return X

    def _tensors(self) -> dict[str, ad.Tensor]:
        return {k: ad.Tensor(v) for k, v in self.params.items()}

    def predict_logits(self, X: np.ndarray) -> np.ndarray:
        """Positive-class logits, one per row, evaluation mode (no dropout)."""
        X = self._check(X)
        return _forward(self._tensors(), ad.Tensor(X), self.spec).data.ravel()

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_logits(X) > 0.0).astype(np.int64)

    def accuracy(self, X: np.ndarray, y) -> float:
        y = np.asarray(y)
        if y.size == 0:
            raise ContractError("accuracy of an empty batch is undefined")
        return float(np.mean(self.predict_labels(X) == y))

    def input_gradients(self, X: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
        """Per-example loss and d(loss)/d(input), stacked row-wise."""
        X = self._check(X)
        yv = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        with ad.Tape() as tape:
            x_t = ad.Tensor(X)
            losses = ad.bce_with_logits(_forward(self._tensors(), x_t, self.spec), yv)
            total = ad.sumel(losses)
        grads = ad.backward(tape, total)
        return losses.data.ravel(), grads[x_t]

    def loss_and_input_gradient(self, x: np.ndarray, y) -> tuple[float, np.ndarray]:
        losses, g = self.input_gradients(np.asarray(x, dtype=np.float64)[None, :], [y])
        return float(losses[0]), g[0]

    def logit_input_gradients(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-example logit and d(logit)/d(input), stacked row-wise."""
        X = self._check(X)
        with ad.Tape() as tape:
            x_t = ad.Tensor(X)
            z = _forward(self._tensors(), x_t, self.spec)
            total = ad.sumel(z)
        grads = ad.backward(tape, total)
        return z.data.ravel(), grads[x_t]

    def loss_and_parameter_gradients(self, X: np.ndarray, y) -> tuple[float, dict[str, np.ndarray]]:
        """Summed evaluation-mode loss and its gradient for every parameter."""
        X = self._check(X)
        yv = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        with ad.Tape() as tape:
            params_t = self._tensors()
            losses = ad.bce_with_logits(_forward(params_t, ad.Tensor(X), self.spec), yv)
            total = ad.sumel(losses)
        grads = ad.backward(tape, total)
        return float(total.data), {k: grads[t] for k, t in params_t.items()}


def train(ds: EncodedDataset, spec: ModelSpec, cfg: TrainConfig) -> TrainedModel:
    """Seeded full-batch-shuffled Adam training; deterministic per config."""
    Xtr = ds.X[ds.split.train]
    ytr = ds.y[ds.split.train]
    Xval = ds.X[ds.split.val]
    yval = ds.y[ds.split.val]
    n, d = Xtr.shape

    rng = np.random.default_rng(cfg.seed)
    params = init_params(spec, d, rng)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    model = TrainedModel(spec=spec, params=params)

    steps_per_epoch = math.ceil(n / cfg.batch_size)
    epochs = cfg.epochs
    if cfg.min_optimizer_steps > 0:
        epochs = max(epochs, math.ceil(cfg.min_optimizer_steps / steps_per_epoch))

    log: list[dict] = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for step, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[lo : lo + cfg.batch_size]
            with ad.Tape() as tape:
                params_t = {k: ad.Tensor(v) for k, v in params.items()}
                logits = _forward(
                    params_t, ad.Tensor(Xtr[idx]), spec,
                    training=True, dropout_seed=(cfg.seed, epoch, step),
                )
                loss = ad.mean(ad.bce_with_logits(logits, ytr[idx].reshape(-1, 1)))
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            grads = ad.backward(tape, loss)
            opt.step(params, {k: grads[t] for k, t in params_t.items()})
            batch_losses.append(loss_val)
        log.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(batch_losses)),
                "val_accuracy": model.accuracy(Xval, yval) if len(yval) else float("nan"),
            }
        )
    model.training_log = log
    return model


CHECKPOINT_FORMAT = "tabadv-model-v1"


def save_model(model: TrainedModel, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "spec": {
            "kind": model.spec.kind,
            "hidden": list(model.spec.hidden),
            "dropout_p": model.spec.dropout_p,
        },
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in model.params.items()},
        "training_log": model.training_log,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    spec = ModelSpec(
        kind=doc["spec"]["kind"],
        hidden=tuple(doc["spec"]["hidden"]),
        dropout_p=doc["spec"]["dropout_p"],
    )
    params = {
        k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
        for k, v in doc["params"].items()
    }
    return TrainedModel(spec=spec, params=params, training_log=doc.get("training_log", []))
