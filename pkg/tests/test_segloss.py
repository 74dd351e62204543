import math

import numpy as np
import pytest
import torch

from oracles import ce_oracle, central_difference, lovasz_class_oracle, lovasz_oracle
from xmkd.segloss import LossWeights, cross_entropy, lovasz_grad, lovasz_softmax, modality_loss, total_loss

LOVASZ_PROBS = [[0.1, 0.9], [0.4, 0.6], [0.8, 0.2]]
LOVASZ_LABELS = [1, 1, 0]


def t(x, dtype=torch.float64):
    return torch.tensor(x, dtype=dtype)


def test_lovasz_worked_example_against_oracle():
    # frozen from the set-function oracle
    assert lovasz_class_oracle(LOVASZ_PROBS, LOVASZ_LABELS, 1) == pytest.approx(0.266667, abs=1e-6)
    assert lovasz_class_oracle(LOVASZ_PROBS, LOVASZ_LABELS, 0) == pytest.approx(0.3, abs=1e-12)
    terms = lovasz_softmax(t(LOVASZ_PROBS), torch.tensor(LOVASZ_LABELS), per_class=True)
    assert float(terms[1]) == pytest.approx(4 / 15, abs=1e-12)
    assert float(terms[0]) == pytest.approx(0.3, abs=1e-12)
    assert float(lovasz_softmax(t(LOVASZ_PROBS), torch.tensor(LOVASZ_LABELS))) == pytest.approx(0.283333, abs=1e-6)


def test_lovasz_one_hot_is_zero():
    labels = torch.tensor([0, 2, 1, 2])
    probs = torch.nn.functional.one_hot(labels, 3).double()
    assert float(lovasz_softmax(probs, labels)) == 0.0


def test_lovasz_grad_is_cumulative_jaccard():
    gt = t([1.0, 0.0, 1.0, 0.0])
    g = lovasz_grad(gt)
    # Jaccard loss of successive prefixes: 1/2, 2/3, 1, 1
    expected = np.diff([0.0, 0.5, 2 / 3, 1.0, 1.0])
    np.testing.assert_allclose(g.numpy(), expected, atol=1e-15)


def test_lovasz_all_ignored_warns():
    with pytest.warns(UserWarning):
        out = lovasz_softmax(t([[0.5, 0.5]]), torch.tensor([255]))
    assert float(out) == 0.0


def test_ce_extremes():
    logits = t([[50.0, -50.0], [-50.0, 50.0]])
    assert float(cross_entropy(logits, torch.tensor([0, 1]))) < 1e-10
    assert float(cross_entropy(torch.zeros(3, 4, dtype=torch.float64), torch.tensor([0, 1, 3]))) == pytest.approx(
        math.log(4), abs=1e-12
    )


def test_ce_label_errors():
    with pytest.raises(ValueError):
        cross_entropy(torch.zeros(2, 3), torch.tensor([0, 3]))
    with pytest.warns(UserWarning):
        assert float(cross_entropy(torch.zeros(2, 3), torch.tensor([255, 255]))) == 0.0


def test_ce_and_lovasz_match_oracles():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, K = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        logits = rng.normal(size=(n, K)) * 2
        labels = rng.integers(0, K, n)
        labels[rng.random(n) < 0.2] = 255
        if (labels == 255).all():
            labels[0] = 0
        ce = float(cross_entropy(t(logits), torch.tensor(labels)))
        assert abs(ce - ce_oracle(logits.tolist(), labels.tolist())) < 1e-10
        probs = torch.softmax(t(logits), 1)
        lov = float(lovasz_softmax(probs, torch.tensor(labels)))
        assert abs(lov - lovasz_oracle(probs.tolist(), labels.tolist())) < 1e-10


def test_modality_loss_is_sum():
    rng = np.random.default_rng(1)
    logits, labels = t(rng.normal(size=(8, 3))), torch.tensor(rng.integers(0, 3, 8))
    expected = cross_entropy(logits, labels) + lovasz_softmax(torch.softmax(logits, 1), labels)
    assert float(modality_loss(logits, labels)) == pytest.approx(float(expected), abs=1e-14)


def test_modality_loss_ignores_ignored_rows():
    rng = np.random.default_rng(2)
    logits = t(rng.normal(size=(6, 3)))
    labels = torch.tensor([0, 255, 1, 2, 255, 1])
    base = float(modality_loss(logits, labels))
    logits[1] += 10.0
    logits[4] -= 3.0
    assert float(modality_loss(logits, labels)) == base


def test_modality_loss_gradient():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 3))
    labels = torch.tensor([0, 1, 2, 1, 0, 2])

    def f(arr):
        return float(modality_loss(t(arr), labels))

    xt = t(x).requires_grad_()
    modality_loss(xt, labels).backward()
    num = central_difference(f, x)
    rel = np.abs(xt.grad.numpy() - num).max() / max(np.abs(num).max(), 1e-12)
    assert rel < 1e-4


def test_total_loss():
    one = torch.tensor(1.0, dtype=torch.float64)
    out = total_loss(one, one, one, one, LossWeights(0.1, 0.1))
    assert float(out.total) == pytest.approx(2.2, abs=1e-12)
    out = total_loss(one, 2 * one, 5 * one, 7 * one, LossWeights(0.0, 0.0))
    assert float(out.total) == 3.0
    with pytest.raises(ValueError):
        LossWeights(-0.1, 0.0)
