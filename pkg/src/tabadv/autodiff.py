"""Minimal reverse-mode differentiation over dense float64 tensors.

Enough machinery to train a logistic regression or small MLP and to
differentiate their losses and logits with respect to the input: an
explicit tape records primitive ops in execution order (which is already
a topological order), and ``backward`` replays it once in reverse.

Ops executed while no tape is active run as plain forward computations,
which is how evaluation mode avoids any recording overhead.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "affine",
    "relu",
    "sigmoid",
    "dropout_mask",
    "bce_with_logits",
    "add",
    "mean",
    "sumel",
    "backward",
    "finite_diff_check",
]


class Tensor:
    """A dense real array node. ``data`` is always float64 and row-major."""

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim and not data.flags.c_contiguous:
            data = np.ascontiguousarray(data)
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class _Record:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp  # out_grad -> tuple of parent grads


class Tape:
    """Ordered record of primitive ops, usable as a context manager."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list[Tape] = []


def _emit(out: Tensor, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    if _TAPE_STACK:
        _TAPE_STACK[-1].records.append(_Record(out, tuple(parents), vjp))
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x of shape (n, d_in), w (d_in, d_out), b (d_out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(
            f"affine expects (n,d_in) x, (d_in,d_out) w, (d_out,) b; "
            f"got {x.data.shape}, {w.data.shape}, {b.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"affine shape mismatch: {x.data.shape} @ {w.data.shape} + {b.data.shape}"
        )
    out = Tensor(x.data @ w.data + b.data)

    def vjp(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _emit(out, (x, w, b), vjp)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); the subgradient at 0 is taken as 0."""
    out = Tensor(np.maximum(x.data, 0.0))

    def vjp(g):
        return (g * (x.data > 0.0),)

    return _emit(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(_sigmoid(x.data))

    def vjp(g):
        s = out.data
        return (g * s * (1.0 - s),)

    return _emit(out, (x,), vjp)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Overflow-free split form.
    pos = z >= 0
    out = np.empty_like(z, dtype=np.float64)
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dropout_mask(x: Tensor, p: float, seed) -> Tensor:
    """Inverted dropout: zero entries with probability p, scale the rest by 1/(1-p).

    Deterministic for a given seed. Callers apply this only in training
    mode; evaluation skips the op entirely, so no rescaling is needed there.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    rng = np.random.default_rng(seed)
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * mask)

    def vjp(g):
        return (g * mask,)

    return _emit(out, (x,), vjp)


def bce_with_logits(z: Tensor, y) -> Tensor:
    """Elementwise binary cross-entropy on logits, in the stable log-sum-exp form.

    ``y`` is a plain array of 0/1 targets and is not differentiated.
    """
    yd = np.asarray(y, dtype=np.float64)
    if yd.shape != z.data.shape:
        raise ShapeError(f"bce targets {yd.shape} do not match logits {z.data.shape}")
    zd = z.data
    out = Tensor(np.maximum(zd, 0.0) - zd * yd + np.log1p(np.exp(-np.abs(zd))))

    def vjp(g):
        return (g * (_sigmoid(zd) - yd),)

    return _emit(out, (z,), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def vjp(g):
        return g, g

    return _emit(out, (a, b), vjp)


def mean(x: Tensor) -> Tensor:
    out = Tensor(x.data.mean())
    n = x.data.size

    def vjp(g):
        return (np.full(x.data.shape, float(g) / n),)

    return _emit(out, (x,), vjp)


def sumel(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def vjp(g):
        return (np.full(x.data.shape, float(g)),)

    return _emit(out, (x,), vjp)


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-replay the tape from a scalar loss.

    Returns a dict mapping every tensor reachable from ``loss`` (inputs and
    parameters included) to its gradient. Repeated calls on the same tape
    are pure and give identical results.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.get(rec.out)
        if g is None:
            continue
        for parent, pg in zip(rec.parents, rec.vjp(g)):
            held = grads.get(parent)
            grads[parent] = pg if held is None else held + pg
    return grads


def finite_diff_check(f: Callable[[np.ndarray], float], x, analytic, h: float = 1e-5) -> float:
    """Max relative error between an analytic gradient and central differences.

    Returns max_i |analytic_i - central_i| / max(1, |central_i|). Quadratics
    are exact under central differences, so the error floor is rounding noise.
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    flat = x.ravel()
    worst = 0.0
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        central = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
        err = abs(analytic.ravel()[i] - central) / max(1.0, abs(central))
        worst = max(worst, err)
    return worst
