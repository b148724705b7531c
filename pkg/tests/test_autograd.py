"""Gradient engine, losses, and the finite-difference oracle."""

import numpy as np
import pytest

from ttrnn import autograd as ag
from ttrnn.autograd import (
    Parameter,
    backward,
    constant,
    cross_entropy,
    finite_diff_grad,
    ge2e_loss,
    softmax_cross_entropy,
    tt_layer,
    wrap,
)
from ttrnn.errors import (
    FewerThanTwoSpeakers,
    LabelOutOfRange,
    NonFiniteFunctionValue,
    NonScalarLoss,
    ZeroNormEmbedding,
)
from ttrnn.gradcheck import run_gradcheck


class TestBackwardBasics:
    def test_square_gradient(self):
        x = Parameter(np.array(3.0), "x")
        backward(x * x)
        assert x.grad == pytest.approx(6.0)

    def test_linear_map_gradient(self):
        rng = np.random.default_rng(0)
        w = Parameter(rng.standard_normal((3, 4)), "w")
        x = constant(rng.standard_normal((4, 1)))
        backward(ag.matmul(w, x).sum())
        # d sum(Wx) / dW = outer(1, x)
        assert np.allclose(w.grad, np.ones((3, 1)) @ x.data.T, atol=1e-12)

    def test_non_scalar_loss(self):
        x = Parameter(np.ones(3), "x")
        with pytest.raises(NonScalarLoss):
            backward(x * 2.0)

    def test_disconnected_parameter_zero_grad(self):
        x = Parameter(np.array(1.0), "x")
        y = Parameter(np.array(2.0), "y")
        backward(y * y)
        assert np.array_equal(x.grad_or_zeros(), np.zeros(()))

    def test_gradient_accumulates_over_reuse(self):
        x = Parameter(np.array(2.0), "x")
        backward(x * x + x * 3.0)  # d/dx = 2x + 3 = 7
        assert x.grad == pytest.approx(7.0)


class TestFiniteDiff:
    def test_square(self):
        x = Parameter(np.array(3.0), "x")
        (g,) = finite_diff_grad(lambda: float(x.data) ** 2, [x])
        assert g == pytest.approx(6.0, abs=1e-9)

    def test_constant_function(self):
        x = Parameter(np.ones(4), "x")
        (g,) = finite_diff_grad(lambda: 1.5, [x])
        assert np.array_equal(g, np.zeros(4))

    def test_non_finite_probe(self):
        x = Parameter(np.array(0.0), "x")
        with np.errstate(invalid="ignore", divide="ignore"):
            with pytest.raises(NonFiniteFunctionValue):
                finite_diff_grad(lambda: float(np.log(x.data)), [x])


class TestGradcheckSuite:
    def test_all_primitives_pass(self):
        results = run_gradcheck()
        failing = {k: e for k, (e, ok) in results.items() if not ok}
        assert not failing, failing

    def test_covers_end_to_end_lstm(self):
        assert "tt_lstm_2step" in run_gradcheck(only="tt_lstm_2step")

    def test_coarse_eps_fails_somewhere(self):
        results = run_gradcheck(eps=1e-1)
        assert any(not ok for _, ok in results.values())


class TestTTLayer:
    def test_matches_numpy_kernel(self):
        from ttrnn.tt import random_tt_matrix, tt_matvec_cores

        rng = np.random.default_rng(1)
        m = random_tt_matrix(rng, (2, 3), (3, 2), (3,))
        x = rng.standard_normal((4, 6))
        cores = [constant(c) for c in m.cores]
        got = tt_layer(cores, constant(x)).data
        assert np.allclose(got, tt_matvec_cores(m.cores, x), atol=1e-12)


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(np.zeros(5), 0) == pytest.approx(np.log(5.0), abs=1e-12)

    def test_large_margin_drives_loss_to_zero(self):
        logits = np.zeros(4)
        logits[2] = 50.0
        assert cross_entropy(logits, 2) < 1e-20

    def test_hand_value(self):
        # softmax((1,2,3))[2] = e^3/(e^1+e^2+e^3); -log of that
        assert cross_entropy(np.array([1.0, 2.0, 3.0]), 2) == pytest.approx(
            0.40760596444438, abs=1e-9
        )

    def test_matches_naive_formula(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            z = rng.standard_normal(6) * 3.0
            label = int(rng.integers(0, 6))
            naive = -np.log(np.exp(z[label]) / np.exp(z).sum())
            assert cross_entropy(z, label) == pytest.approx(naive, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRange):
            cross_entropy(np.zeros(3), 3)

    def test_batched_mean(self):
        z = np.zeros((4, 3))
        loss = softmax_cross_entropy(constant(z), np.zeros(4, dtype=int))
        assert float(loss.data) == pytest.approx(np.log(3.0), abs=1e-12)


class TestGE2E:
    def test_orthogonal_pair_hand_value(self):
        embs = constant(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))
        loss = float(ge2e_loss(embs, 1.0, 0.0).data)
        per_utt = -1.0 + np.log(np.e + 1.0)
        assert per_utt == pytest.approx(0.31326168751822, abs=1e-9)
        assert loss == pytest.approx(2 * per_utt, abs=1e-9)

    def test_identical_speakers_log_n(self):
        e = np.ones((3, 2, 4))
        loss = float(ge2e_loss(constant(e), 1.0, 0.0).data)
        assert loss == pytest.approx(3 * 2 * np.log(3.0), abs=1e-9)

    def test_per_utterance_terms_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            e = rng.standard_normal((3, 4, 5))
            loss = float(ge2e_loss(constant(e), 2.0, -1.0).data)
            # total is a sum of per-utterance logsumexp-minus-summand terms
            assert loss >= -1e-12

    def test_rotation_invariance(self):
        rng = np.random.default_rng(4)
        e = rng.standard_normal((4, 3, 6))
        base = float(ge2e_loss(constant(e), 3.0, -0.5).data)
        for _ in range(5):
            q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
            rotated = float(ge2e_loss(constant(e @ q), 3.0, -0.5).data)
            assert abs(rotated - base) <= 1e-9

    def test_exclude_self_variant(self):
        rng = np.random.default_rng(5)
        e = rng.standard_normal((3, 4, 5))
        inc = float(ge2e_loss(constant(e), 1.0, 0.0).data)
        exc = float(ge2e_loss(constant(e), 1.0, 0.0, exclude_self=True).data)
        assert inc != exc  # self-inclusion inflates the own similarity

    def test_fewer_than_two_speakers(self):
        with pytest.raises(FewerThanTwoSpeakers):
            ge2e_loss(constant(np.ones((1, 3, 4))), 1.0, 0.0)

    def test_zero_norm_embedding(self):
        e = np.ones((2, 2, 3))
        e[0, 0] = 0.0
        with pytest.raises(ZeroNormEmbedding):
            ge2e_loss(constant(e), 1.0, 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        embs = Parameter(rng.standard_normal((3, 2, 4)), "e")
        w = Parameter(np.array(2.0), "w")
        b = Parameter(np.array(-0.5), "b")

        def loss():
            return ge2e_loss(embs, w, b, exclude_self=True)

        backward(loss())
        num = finite_diff_grad(lambda: float(loss().data), [embs, w])
        for p, n in zip([embs, w], num):
            denom = max(np.linalg.norm(n), 1.0)
            assert np.linalg.norm(p.grad - n) / denom <= 1e-5


class TestVarOps:
    def test_broadcast_add_grad_shapes(self):
        a = Parameter(np.ones((3, 4)), "a")
        b = Parameter(np.ones(4), "b")
        backward((a + b).sum())
        assert a.grad.shape == (3, 4)
        assert b.grad.shape == (4,)
        assert np.array_equal(b.grad, np.full(4, 3.0))

    def test_getitem_backward_accumulates(self):
        a = Parameter(np.arange(4.0), "a")
        backward((a[1] + a[1] + a[3]).sum())
        assert np.array_equal(a.grad, [0.0, 2.0, 0.0, 1.0])

    def test_transpose_round_trip(self):
        a = Parameter(np.arange(6.0).reshape(2, 3), "a")
        backward((a.transpose(1, 0).transpose(1, 0) * a).sum())
        assert np.allclose(a.grad, 2 * a.data)
