"""Finite-difference verification of every differentiable primitive."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Parameter, backward, finite_diff_grad, ge2e_loss, softmax_cross_entropy, tt_layer
from .cells import TTLSTMCell, run_sequence


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # floor the scale at 1 so exactly-zero gradients compare absolutely
    # instead of amplifying finite-difference rounding noise
    denom = max(float(np.linalg.norm(numeric)), float(np.linalg.norm(analytic)), 1.0)
    return float(np.linalg.norm(analytic - numeric)) / denom


def _check(params, build_loss, eps):
    """Compare backward() gradients against central differences."""
    for p in params:
        p.grad = None
    backward(build_loss())
    analytic = [p.grad_or_zeros().copy() for p in params]
    numeric = finite_diff_grad(lambda: float(build_loss().data), params, eps=eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def _p(rng, shape, name, positive=False):
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return Parameter(data, name)


def run_gradcheck(eps: float = 1e-6, tol: float = 1e-5, only=None, seed: int = 0):
    """Run all primitive checks; returns {name: (max_rel_err, passed)}."""
    rng = np.random.default_rng(seed)
    checks = {}

    a = _p(rng, (3, 4), "a")
    b = _p(rng, (3, 4), "b")
    checks["add"] = ([a, b], lambda: ((a + b) ** 2.0).sum())
    c = _p(rng, (3, 4), "c")
    d = _p(rng, (3, 4), "d")
    checks["mul"] = ([c, d], lambda: ((c * d) * (c + 1.5)).sum())

    ma = _p(rng, (3, 5), "ma")
    mb = _p(rng, (5, 2), "mb")
    checks["matmul"] = ([ma, mb], lambda: (ag.matmul(ma, mb) ** 2.0).sum())

    t1 = _p(rng, (4, 3), "t1")
    checks["tanh"] = ([t1], lambda: (t1.tanh() * t1).sum())
    s1 = _p(rng, (4, 3), "s1")
    checks["sigmoid"] = ([s1], lambda: (s1.sigmoid() ** 2.0).sum())
    e1 = _p(rng, (3, 3), "e1")
    checks["exp"] = ([e1], lambda: ((e1 * 0.5).exp()).sum())
    l1 = _p(rng, (3, 3), "l1", positive=True)
    checks["log"] = ([l1], lambda: (l1.log() * 2.0).sum())

    r1 = _p(rng, (2, 6), "r1")
    checks["reshape"] = ([r1], lambda: (r1.reshape(3, 4).transpose(1, 0) ** 2.0).sum())

    k1 = _p(rng, (2, 3), "k1")
    k2 = _p(rng, (2, 3), "k2")
    checks["concat_chunk"] = (
        [k1, k2],
        lambda: (ag.concat([k1, k2], axis=1)[:, 2:5] ** 2.0).sum(),
    )

    cores = [
        _p(rng, (2, 2, 1, 3), "core0"),
        _p(rng, (2, 2, 3, 2), "core1"),
        _p(rng, (2, 2, 2, 1), "core2"),
    ]
    xin = _p(rng, (2, 8), "xin")
    checks["tt_matvec"] = (
        cores + [xin],
        lambda: (tt_layer(cores, xin) ** 2.0).sum(),
    )

    logits = _p(rng, (4, 5), "logits")
    labels = rng.integers(0, 5, size=4)
    checks["softmax_cross_entropy"] = (
        [logits], lambda: softmax_cross_entropy(logits, labels)
    )

    ca = _p(rng, (3, 6), "ca")
    cb = _p(rng, (3, 6), "cb")

    def cosine_loss():
        na = ((ca * ca).sum(axis=1, keepdims=True)) ** 0.5
        nb = ((cb * cb).sum(axis=1, keepdims=True)) ** 0.5
        return ((ca * na**-1.0) * (cb * nb**-1.0)).sum()

    checks["cosine_similarity"] = ([ca, cb], cosine_loss)

    embs = _p(rng, (3, 2, 5), "embs")
    w = Parameter(np.array(2.0), "w")
    bb = Parameter(np.array(-0.5), "b")
    checks["ge2e"] = ([embs, w, bb], lambda: ge2e_loss(embs, w, bb))

    cell = TTLSTMCell.random_fused(4, 4, (2, 2), (2, 2), (2, 2), rng)
    xs = rng.standard_normal((1, 2, 4))

    def lstm_loss():
        outs, _ = run_sequence(cell, xs)
        return (outs[-1] ** 2.0).sum()

    checks["tt_lstm_2step"] = (cell.parameters(), lstm_loss)

    results = {}
    for name, (params, loss_fn) in checks.items():
        if only and name != only:
            continue
        err = _check(params, loss_fn, eps)
        results[name] = (err, err <= tol)
    return results
