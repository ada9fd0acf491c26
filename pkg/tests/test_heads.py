import math

import numpy as np
import pytest

from mtlcap.errors import LabelOutOfRange, ShapeMismatch
from mtlcap.heads import (
    ClassifierHeadParams,
    classification_loss,
    head_forward,
    head_loss_and_grads,
    init_head,
)
from mtlcap.nnops import softmax


def _zero_head(c, hidden, k):
    p = init_head(0, c, hidden, k)
    for arr in p.tensors().values():
        arr[...] = 0.0
    return p


class TestForward:
    def test_zero_everything_gives_uniform(self):
        p = _zero_head(8, 8, 10)
        probs = head_forward(np.zeros((4, 8)), p)
        assert np.allclose(probs, 0.1)

    def test_k40_normalized(self, rng):
        p = init_head(1, 16, 64, 40)
        probs = head_forward(rng.standard_normal((16, 16)), p)
        assert probs.shape == (40,)
        assert abs(probs.sum() - 1.0) < 1e-6
        assert np.all(probs > 0)

    def test_hand_set_logits(self):
        # zero weights everywhere, output bias (1, 0) -> softmax closed form
        p = _zero_head(4, 4, 2)
        p.out_b[...] = [1.0, 0.0]
        probs = head_forward(np.zeros((4, 4)), p)
        e = math.e
        assert probs == pytest.approx([e / (e + 1), 1 / (e + 1)], abs=1e-4)
        assert probs[0] == pytest.approx(0.7311, abs=1e-4)

    def test_shift_invariance(self, rng):
        logits = rng.standard_normal(40)
        assert np.allclose(softmax(logits), softmax(logits + 123.456), atol=1e-9)

    def test_permutation_invariance_of_pooling(self, rng):
        p = init_head(2, 8, 16, 5)
        grid = rng.standard_normal((9, 8))
        perm = rng.permutation(9)
        assert np.allclose(head_forward(grid, p), head_forward(grid[perm], p), atol=1e-12)

    def test_shape_mismatch(self):
        p = init_head(0, 8, 8, 4)
        with pytest.raises(ShapeMismatch):
            head_forward(np.zeros((4, 5)), p)


class TestLoss:
    def test_perfect_prediction(self):
        probs = np.zeros(10)
        probs[3] = 1.0
        assert classification_loss(probs, 3) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_k100(self):
        probs = np.full(100, 0.01)
        assert classification_loss(probs, 42) == pytest.approx(math.log(100), abs=1e-9)

    def test_half_probability(self):
        probs = np.array([0.5, 0.5])
        assert classification_loss(probs, 0) == pytest.approx(math.log(2), abs=1e-9)

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRange):
            classification_loss(np.array([0.5, 0.5]), 2)


class TestGradients:
    def test_logit_gradient_closed_form(self, rng):
        """d(-log softmax[y])/dlogits == probs - one_hot(y) (checked against
        central finite differences)."""
        logits = rng.standard_normal(6)
        y = 2
        probs = softmax(logits)
        analytic = probs.copy()
        analytic[y] -= 1.0
        eps = 1e-6
        for i in range(6):
            lp = logits.copy(); lp[i] += eps
            lm = logits.copy(); lm[i] -= eps
            fd = (-math.log(softmax(lp)[y]) + math.log(softmax(lm)[y])) / (2 * eps)
            assert abs(fd - analytic[i]) < 1e-6

    def test_full_head_finite_differences(self, rng):
        p = init_head(4, 6, 5, 4)
        grid = rng.standard_normal((4, 6))
        label = 1
        _, _, grads, d_ann = head_loss_and_grads(grid, label, p, False)

        def loss():
            return classification_loss(head_forward(grid, p), label)

        eps = 1e-5
        worst = 0.0
        for name, arr in p.tensors().items():
            g = grads[name]
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + eps; lp = loss()
                arr[idx] = old - eps; lm = loss()
                arr[idx] = old
                fd = (lp - lm) / (2 * eps)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd) + abs(g[idx]), 1e-6))
                it.iternext()
        # annotation gradient too
        it = np.nditer(grid, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            old = grid[idx]
            grid[idx] = old + eps; lp = loss()
            grid[idx] = old - eps; lm = loss()
            grid[idx] = old
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(fd - d_ann[idx]) / max(abs(fd) + abs(d_ann[idx]), 1e-6))
            it.iternext()
        assert worst < 1e-4
