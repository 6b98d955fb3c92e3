"""Tape-based reverse-mode differentiation over numpy arrays.

Operations record themselves on the innermost active :class:`Graph`. Outside
of a ``with Graph():`` block they only compute values, which is what
evaluation code uses. Shapes are limited to what feed-forward nets need:
vectors ``(n,)`` and row batches ``(batch, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVectorError, DimensionError, EmptyGraphError, ValidationError

BCE_EPS = 1e-7

_ACTIVE: list["Graph"] = []


class Tensor:
    __slots__ = ("value", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<{type(self).__name__}{label} shape={self.value.shape}>"


class Parameter(Tensor):
    """Leaf tensor updated by optimizers. ``trainable=False`` freezes it."""

    __slots__ = ("grad", "_trainable")

    def __init__(self, value, name=None, trainable=True):
        super().__init__(value, requires_grad=trainable, name=name)
        self.grad = np.zeros_like(self.value)
        self._trainable = trainable

    @property
    def trainable(self):
        return self._trainable

    @trainable.setter
    def trainable(self, flag):
        self._trainable = bool(flag)
        self.requires_grad = bool(flag)

    def zero_grad(self):
        self.grad[...] = 0.0


class Graph:
    """Records primitive operations in execution order."""

    def __init__(self):
        self.nodes = []
        # relu masks / clamp masks seen during the forward pass; lets the
        # gradient checker detect non-differentiable neighbourhoods
        self.kinks = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, out, inputs, backward_fn):
        self.nodes.append((out, inputs, backward_fn))

    def backward(self, root: Tensor):
        if not self.nodes:
            raise EmptyGraphError("backward called on a graph with no recorded operations")
        if root.value.size != 1:
            raise DimensionError(f"backward root must be a scalar, got shape {root.shape}")
        if not any(node[0] is root for node in self.nodes):
            raise ValidationError("backward root was not produced on this graph")
        grads = {id(root): np.ones_like(root.value)}
        for out, inputs, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, fn(g)):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if isinstance(t, Parameter):
                    t.grad += gi
                elif id(t) in grads:
                    grads[id(t)] = grads[id(t)] + gi
                else:
                    grads[id(t)] = gi


def current_graph():
    return _ACTIVE[-1] if _ACTIVE else None


def _val(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _needs(*xs):
    return any(isinstance(x, Tensor) and x.requires_grad for x in xs)


def _emit(value, inputs, backward_fn):
    out = Tensor(value)
    graph = current_graph()
    if graph is not None and _needs(*inputs):
        out.requires_grad = True
        graph.record(out, inputs, backward_fn)
    return out


def _kink(mask):
    graph = current_graph()
    if graph is not None:
        graph.kinks.append(np.packbits(mask).tobytes())


# ---------------------------------------------------------------- linear ops

def affine(x, W, b=None) -> Tensor:
    """``W x (+ b)`` for a vector, or row-wise ``x W^T (+ b)`` for a batch."""
    xv, Wv = _val(x), _val(W)
    if Wv.ndim != 2 or xv.ndim not in (1, 2) or xv.shape[-1] != Wv.shape[1]:
        raise DimensionError(f"affine: W {Wv.shape} incompatible with x {xv.shape}")
    out = xv @ Wv.T
    if b is not None:
        bv = _val(b)
        if bv.shape != (Wv.shape[0],):
            raise DimensionError(f"affine: bias {bv.shape} does not match {Wv.shape[0]} rows")
        out = out + bv

    def back(g):
        if xv.ndim == 1:
            gW = np.outer(g, xv)
            gb = g
        else:
            gW = g.T @ xv
            gb = g.sum(axis=0)
        return g @ Wv, gW, gb

    return _emit(out, (x, W, b), back)


def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise DimensionError(f"add: {av.shape} vs {bv.shape}")
    return _emit(av + bv, (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise DimensionError(f"mul: {av.shape} vs {bv.shape}")
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> Tensor:
    return _emit(_val(a) * c, (a,), lambda g: (g * c,))


def total(a) -> Tensor:
    av = _val(a)
    return _emit(np.asarray(av.sum()), (a,), lambda g: (np.full_like(av, g),))


def weighted_sum(terms, weights=None, offset=0.0) -> Tensor:
    """Scalar ``offset + sum_i w_i * t_i``."""
    terms = list(terms)
    if weights is None:
        weights = [1.0] * len(terms)
    if not terms:
        return Tensor(offset)
    vals = [_val(t) for t in terms]
    for v in vals:
        if v.size != 1:
            raise DimensionError("weighted_sum expects scalar terms")
    out = np.asarray(offset + sum(w * float(v) for w, v in zip(weights, vals)))
    return _emit(out, tuple(terms), lambda g: tuple(g * w * np.ones_like(v) for w, v in zip(weights, vals)))


def concat(parts) -> Tensor:
    parts = list(parts)
    vals = [_val(p) for p in parts]
    sizes = np.cumsum([v.shape[-1] for v in vals])[:-1]
    out = np.concatenate(vals, axis=-1)
    return _emit(out, tuple(parts), lambda g: tuple(np.split(g, sizes, axis=-1)))


def row(W, i: int) -> Tensor:
    Wv = _val(W)

    def back(g):
        gW = np.zeros_like(Wv)
        gW[i] = g
        return (gW,)

    return _emit(Wv[i].copy(), (W,), back)


# ---------------------------------------------------------------- activations

def relu(v) -> Tensor:
    vv = _val(v)
    mask = vv > 0
    _kink(mask)
    return _emit(np.where(mask, vv, 0.0), (v,), lambda g: (g * mask,))


def tanh(v) -> Tensor:
    out = np.tanh(_val(v))
    return _emit(out, (v,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    # split by sign to avoid exp overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(v) -> Tensor:
    out = _sigmoid(np.atleast_1d(_val(v))).reshape(_val(v).shape)
    return _emit(out, (v,), lambda g: (g * out * (1.0 - out),))


def _log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(v) -> Tensor:
    out = np.exp(_log_softmax(_val(v)))

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit(out, (v,), back)


def identity(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(v)


ACTIVATIONS = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "identity": identity,
}


def activation(kind: str, v) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValidationError(f"unknown activation {kind!r}") from None
    return fn(v)


def dropout(v, p: float, rng: np.random.Generator) -> Tensor:
    if p <= 0.0:
        return identity(v)
    mask = (rng.random(_val(v).shape) >= p) / (1.0 - p)
    return _emit(_val(v) * mask, (v,), lambda g: (g * mask,))


# ---------------------------------------------------------------- criteria

def _check_same(name, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{name}: prediction {a.shape} vs gold {b.shape}")


def mse(prediction, gold) -> Tensor:
    """Mean squared error over all elements. Either side may be a Tensor."""
    pv, gv = _val(prediction), _val(gold)
    _check_same("mse", pv, gv)
    diff = pv - gv
    n = diff.size

    def back(g):
        d = g * 2.0 * diff / n
        return d, -d

    return _emit(np.asarray((diff * diff).mean()), (prediction, gold), back)


def _check_distribution(gv, soft):
    if soft:
        ok = np.all(gv >= -1e-12) and np.allclose(gv.sum(axis=-1), 1.0, atol=1e-6)
        if not ok:
            raise ValidationError("cross_entropy: soft gold rows must be probability vectors")
        return
    binary = np.all((gv == 0.0) | (gv == 1.0))
    if not binary or not np.all(gv.sum(axis=-1) == 1.0):
        raise ValidationError("cross_entropy: gold must be one-hot")


def cross_entropy(logits, gold, soft=False) -> Tensor:
    """Softmax cross-entropy from raw logits, averaged over the batch.

    ``gold`` is one-hot unless ``soft`` is set, in which case any probability
    vector is accepted (teacher outputs).
    """
    zv, gv = _val(logits), _val(gold)
    _check_same("cross_entropy", zv, gv)
    _check_distribution(gv, soft)
    logp = _log_softmax(zv)
    batch = 1 if zv.ndim == 1 else zv.shape[0]
    value = -(gv * logp).sum() / batch
    probs = np.exp(logp)

    def back(g):
        # rows of gold sum to 1, so d/dz = softmax(z) - gold
        return g * (probs - gv) / batch, None

    return _emit(np.asarray(value), (logits, gold), back)


def binary_cross_entropy(prob, gold) -> Tensor:
    """Elementwise BCE on probabilities clamped to ``[eps, 1 - eps]``."""
    pv, gv = _val(prob), _val(gold)
    _check_same("binary_cross_entropy", pv, gv)
    inside = (pv > BCE_EPS) & (pv < 1.0 - BCE_EPS)
    _kink(inside)
    pc = np.clip(pv, BCE_EPS, 1.0 - BCE_EPS)
    n = pv.size
    value = -(gv * np.log(pc) + (1.0 - gv) * np.log(1.0 - pc)).mean()

    def back(g):
        d = (-gv / pc + (1.0 - gv) / (1.0 - pc)) / n
        return g * d * inside, None

    return _emit(np.asarray(value), (prob, gold), back)


CRITERIA = {
    "mse": mse,
    "cross_entropy": cross_entropy,
    "binary_cross_entropy": binary_cross_entropy,
}


def loss(criterion: str, prediction, gold, **kw) -> Tensor:
    try:
        fn = CRITERIA[criterion]
    except KeyError:
        raise ValidationError(f"unknown criterion {criterion!r}") from None
    return fn(prediction, gold, **kw)


def cosine(u, v) -> Tensor:
    uv, vv = _val(u), _val(v)
    if uv.shape != vv.shape or uv.ndim != 1:
        raise DimensionError(f"cosine: {uv.shape} vs {vv.shape}")
    nu, nv = np.linalg.norm(uv), np.linalg.norm(vv)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine of a zero-norm vector is undefined")
    c = float(uv @ vv) / (nu * nv)

    def back(g):
        gu = vv / (nu * nv) - c * uv / (nu * nu)
        gv = uv / (nu * nv) - c * vv / (nv * nv)
        return g * gu, g * gv

    return _emit(np.asarray(min(1.0, max(-1.0, c))), (u, v), back)


# ---------------------------------------------------------------- optimizers

class SGD:
    algorithm = "sgd"

    def __init__(self, params, lr=0.01):
        if lr <= 0:
            raise ValidationError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.steps = 0

    def step(self):
        for p in self.params:
            if p.trainable:
                p.value -= self.lr * p.grad
            p.zero_grad()
        self.steps += 1


class Adam:
    algorithm = "adam"

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValidationError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.steps = 0

    def step(self):
        self.steps += 1
        t = self.steps
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.trainable:
                g = p.grad
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


@dataclass
class OptimizerConfig:
    algorithm: str = "adam"
    lr: float = 1e-3

    def build(self, params):
        if self.algorithm == "adam":
            return Adam(params, lr=self.lr)
        if self.algorithm == "sgd":
            return SGD(params, lr=self.lr)
        raise ValidationError(f"unknown optimizer {self.algorithm!r}")


# ---------------------------------------------------------------- checking

@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    excluded: list = field(default_factory=list)

    def __float__(self):
        return self.max_rel_error


def _probe(loss_fn):
    with Graph() as g:
        value = float(_val(loss_fn()))
    return value, tuple(g.kinks)


def grad_check(loss_fn, params, eps=1e-5, max_coords=64, seed=0) -> GradCheckResult:
    """Compare analytic gradients with central differences.

    ``loss_fn`` takes no arguments and returns a scalar built from ``params``.
    Coordinates whose ``+-eps`` neighbourhood crosses a relu kink or a BCE
    clamp boundary are skipped and listed in ``excluded``.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValidationError("eps must lie in [1e-6, 1e-4]")
    params = [p for p in params if p.trainable]
    for p in params:
        p.zero_grad()
    with Graph() as g:
        root = loss_fn()
    g.backward(root)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    _, base_kinks = _probe(loss_fn)

    rng = np.random.default_rng(seed)
    worst, checked, excluded = 0.0, 0, []
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            lp, kp = _probe(loss_fn)
            flat[c] = orig - eps
            lm, km = _probe(loss_fn)
            flat[c] = orig
            if kp != base_kinks or km != base_kinks:
                excluded.append((p.name, int(c)))
                continue
            numeric = (lp - lm) / (2.0 * eps)
            a = ga.reshape(-1)[c]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
            checked += 1
    return GradCheckResult(worst, checked, excluded)
