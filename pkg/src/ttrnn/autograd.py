"""Reverse-mode gradient engine over numpy arrays.

A :class:`Var` wraps a float64 ndarray and remembers how it was
produced; calling :func:`backward` on a scalar output walks the graph
in reverse topological order and accumulates gradients into every
reachable :class:`Parameter`.  Elementwise arithmetic broadcasts like
numpy; backward sums gradients back down to each operand's shape.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    FewerThanTwoSpeakers,
    LabelOutOfRange,
    NonFiniteFunctionValue,
    NonScalarLoss,
    ZeroNormEmbedding,
)


class Var:
    """Node in the computation graph."""

    __slots__ = ("data", "grad", "_parents", "_backward", "_grad_owned")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._grad_owned = False

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        # most nodes have a single consumer: hold the incoming array by
        # reference and only allocate when a second gradient arrives
        if self.grad is None:
            self.grad = g
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    # -- elementwise arithmetic (numpy broadcasting) --------------------

    def __add__(self, other):
        other = wrap(other)
        out = Var(self.data + other.data, (self, other))
        out._backward = lambda g: (
            self.accumulate(_sum_to(g, self.data.shape)),
            other.accumulate(_sum_to(g, other.data.shape)),
        )
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = wrap(other)
        out = Var(self.data * other.data, (self, other))
        out._backward = lambda g: (
            self.accumulate(_sum_to(g * other.data, self.data.shape)),
            other.accumulate(_sum_to(g * self.data, other.data.shape)),
        )
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-wrap(other))

    def __rsub__(self, other):
        return wrap(other) + (-self)

    def __truediv__(self, other):
        return self * wrap(other) ** -1.0

    def __rtruediv__(self, other):
        return wrap(other) * self**-1.0

    def __pow__(self, exponent: float):
        out = Var(self.data**exponent, (self,))
        out._backward = lambda g: self.accumulate(
            g * exponent * self.data ** (exponent - 1.0)
        )
        return out

    # -- structural ops -------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Var(self.data.reshape(shape), (self,))
        out._backward = lambda g: self.accumulate(g.reshape(self.data.shape))
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        out = Var(self.data.transpose(axes), (self,))
        out._backward = lambda g: self.accumulate(g.transpose(inverse))
        return out

    def __getitem__(self, key):
        out = Var(self.data[key], (self,))

        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self.accumulate(full)

        out._backward = back
        return out

    def sum(self, axis=None, keepdims=False):
        out = Var(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- nonlinearities -------------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)
        out = Var(y, (self,))
        out._backward = lambda g: self.accumulate(g * (1.0 - y * y))
        return out

    def sigmoid(self):
        y = 1.0 / (1.0 + np.exp(-self.data))
        out = Var(y, (self,))
        out._backward = lambda g: self.accumulate(g * y * (1.0 - y))
        return out

    def exp(self):
        y = np.exp(self.data)
        out = Var(y, (self,))
        out._backward = lambda g: self.accumulate(g * y)
        return out

    def log(self):
        out = Var(np.log(self.data), (self,))
        out._backward = lambda g: self.accumulate(g / self.data)
        return out


class Parameter(Var):
    """Trainable leaf with a stable name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data)
        self.name = name

    def grad_or_zeros(self) -> np.ndarray:
        # a parameter disconnected from the loss has zero gradient
        return self.grad if self.grad is not None else np.zeros_like(self.data)


def wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def constant(x) -> Var:
    """A graph leaf that never receives gradient updates."""
    return Var(np.asarray(x, dtype=np.float64))


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def matmul(a: Var, b: Var) -> Var:
    a, b = wrap(a), wrap(b)
    out = Var(a.data @ b.data, (a, b))
    out._backward = lambda g: (
        a.accumulate(g @ b.data.T),
        b.accumulate(a.data.T @ g),
    )
    return out


def concat(parts, axis=0) -> Var:
    parts = [wrap(p) for p in parts]
    out = Var(np.concatenate([p.data for p in parts], axis=axis), tuple(parts))
    splits = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            p.accumulate(piece)

    out._backward = back
    return out


def backward(loss: Var) -> None:
    """Accumulate dloss/dx into .grad of every node reachable from loss."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.data.shape}")
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def finite_diff_grad(f, params, eps: float = 1e-6):
    """Central-difference gradients of a scalar function of Parameters.

    Returns one array per parameter; the function is re-evaluated with
    each coordinate perturbed by +/- eps.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f())
            flat[i] = orig - eps
            lo = float(f())
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteFunctionValue("probe produced a non-finite value")
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def tt_layer(cores, x: Var) -> Var:
    """Differentiable TT matrix-vector product for a batch of inputs.

    ``cores`` are Vars shaped (d_k, m_k, r_{k-1}, r_k); ``x`` has shape
    (batch, M).  Mirrors the left-to-right contraction used by the
    numpy kernel so gradients flow into every core.
    """
    x = wrap(x)
    b, m_total = x.data.shape
    t = x.reshape(b, 1, 1, m_total)  # (B, D_done, r, M_rest)
    for core in cores:
        core = wrap(core)
        d, m, r0, r1 = core.data.shape
        dd, mrest = t.data.shape[1], t.data.shape[3] // m
        t = t.reshape(b, dd, r0, m, mrest).transpose(0, 1, 4, 2, 3)
        t = t.reshape(b * dd * mrest, r0 * m)
        g = core.transpose(2, 1, 0, 3).reshape(r0 * m, d * r1)
        t = matmul(t, g).reshape(b, dd, mrest, d, r1)
        t = t.transpose(0, 1, 3, 4, 2).reshape(b, dd * d, r1, mrest)
    return t.reshape(b, t.data.shape[1])


def softmax_cross_entropy(logits: Var, labels) -> Var:
    """Mean negative log softmax probability of the true labels.

    Stabilized by max subtraction; ``logits`` is (K,) or (B, K).
    """
    logits = wrap(logits)
    single = logits.data.ndim == 1
    z = logits.reshape(1, -1) if single else logits
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    bsz, k = z.data.shape
    if labels.size != bsz:
        raise LabelOutOfRange(f"{labels.size} labels for batch of {bsz}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise LabelOutOfRange(f"label out of range for {k} classes")
    shift = constant(z.data.max(axis=1, keepdims=True))
    zs = z - shift
    log_z = zs.exp().sum(axis=1, keepdims=True).log()
    picked = zs[np.arange(bsz), labels].reshape(bsz, 1)
    return (log_z - picked).sum() * (1.0 / bsz)


def cross_entropy(logits, label) -> float:
    """Numerically stable cross-entropy as a plain number."""
    return float(softmax_cross_entropy(wrap(logits), label).data)


def _normalize_rows(v: Var, what: str) -> Var:
    norms = (v * v).sum(axis=-1, keepdims=True) ** 0.5
    if np.any(norms.data <= 0.0):
        raise ZeroNormEmbedding(f"zero-norm {what}")
    return v * norms**-1.0


def ge2e_loss(embeddings: Var, w, b, exclude_self: bool = False) -> Var:
    """Generalized end-to-end loss over (speakers, utterances, dim).

    Similarities are w * cos(e_ji, c_k) + b against per-speaker
    centroids; each utterance pays -S_{ji,j} + logsumexp_k S_{ji,k} and
    the total is the sum over utterances.  Centroids include the
    utterance itself unless ``exclude_self`` is set, in which case the
    own-speaker similarity uses the leave-one-out centroid.
    """
    embeddings = wrap(embeddings)
    w, b = wrap(w), wrap(b)
    if embeddings.data.ndim != 3:
        raise FewerThanTwoSpeakers("expected (speakers, utterances, dim) embeddings")
    n, u, e = embeddings.data.shape
    if n < 2:
        raise FewerThanTwoSpeakers(f"got {n} speaker(s)")
    e_hat = _normalize_rows(embeddings, "embedding")
    centroids = embeddings.mean(axis=1)  # (N, E)
    c_hat = _normalize_rows(centroids, "centroid")
    cos = matmul(e_hat.reshape(n * u, e), c_hat.transpose(1, 0))  # (N*U, N)
    if exclude_self and u > 1:
        loo = (centroids.reshape(n, 1, e) * float(u) - embeddings) * (1.0 / (u - 1))
        loo_hat = _normalize_rows(loo, "centroid")
        own = (e_hat * loo_hat).sum(axis=-1).reshape(n * u)  # cos with own LOO centroid
        mask = np.repeat(np.eye(n), u, axis=0)
        cos = cos * constant(1.0 - mask) + own.reshape(n * u, 1) * constant(mask)
    sims = w * cos + b  # (N*U, N)
    shift = constant(sims.data.max(axis=1, keepdims=True))
    lse = (sims - shift).exp().sum(axis=1).log() + shift.reshape(n * u)
    own_sim = sims[np.arange(n * u), np.repeat(np.arange(n), u)]
    return (lse - own_sim).sum()
