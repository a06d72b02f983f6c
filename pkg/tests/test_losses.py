import numpy as np
import pytest
from pydantic import ValidationError

from srl_ood.model import ndiff
from srl_ood.model.losses import (
    LossError,
    LossWeights,
    cross_entropy,
    margin_loss,
    mean_cross_entropy,
    ssl_loss,
    total_loss,
)
from srl_ood.model.ndiff import Graph, Tensor


def test_identical_same_class_pair_is_zero():
    H = Tensor([[1.0, 2.0], [1.0, 2.0]])
    assert margin_loss(H, [0, 0], xi=4.0).item() == 0.0


def test_two_point_margin_case():
    H = Tensor([[0.0], [1.0]])
    assert margin_loss(H, [0, 1], xi=2.0).item() == 1.0


def test_inactive_hinge_is_zero():
    H = Tensor([[0.0, 0.0], [0.0, 0.0], [3.0, 0.0], [3.0, 0.0]])
    assert margin_loss(H, [0, 0, 1, 1], xi=9.0).item() == 0.0


def test_margin_needs_pairs():
    with pytest.raises(LossError, match="at least 2"):
        margin_loss(Tensor([[1.0, 2.0]]), [0], xi=1.0)
    with pytest.raises(LossError, match="labels"):
        margin_loss(Tensor(np.zeros((3, 2))), [0, 1], xi=1.0)


def test_margin_is_permutation_and_translation_invariant(rng):
    X = rng.normal(size=(6, 4))
    y = np.array([0, 1, 0, 2, 1, 2])
    base = margin_loss(Tensor(X), y, xi=8.0).item()
    order = rng.permutation(6)
    assert margin_loss(Tensor(X[order]), y[order], xi=8.0).item() == pytest.approx(base, abs=1e-12)
    assert margin_loss(Tensor(X + 5.0), y, xi=8.0).item() == pytest.approx(base, abs=1e-12)
    assert base >= 0.0


def test_scaling_separated_classes_keeps_hinge_off():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [4.0, 0.0], [4.0, 0.0]])
    for s in (1.0, 2.0, 5.0):
        assert margin_loss(Tensor(s * X), [0, 0, 1, 1], xi=10.0).item() == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_margin_gradients(seed):
    rng = np.random.default_rng(seed)
    graph = Graph()
    graph.register("H", rng.normal(size=(6, 4)))
    labels = rng.integers(0, 3, size=6)
    # xi nudged off the pairwise distances so no hinge sits on its kink
    dist = ((graph["H"].data[:, None] - graph["H"].data[None]) ** 2).sum(-1)
    xi = float(np.median(dist)) + 0.0123
    assert ndiff.finite_diff_check(lambda: margin_loss(graph["H"], labels, xi), graph) < 1e-4


def test_cross_entropy_values():
    assert cross_entropy(Tensor([0.0, 0.0, 0.0]), 0).item() == pytest.approx(np.log(3.0))
    assert cross_entropy(Tensor([1000.0, 0.0, 0.0]), 0).item() == pytest.approx(0.0, abs=1e-12)
    assert cross_entropy(Tensor([2.0, 1.0, 0.0]), 1).item() == pytest.approx(1.4076, abs=1e-4)


@pytest.mark.parametrize("seed", range(10))
def test_cross_entropy_gradients(seed):
    graph = Graph()
    graph.register("z", np.random.default_rng(seed).normal(size=5))
    assert ndiff.finite_diff_check(lambda: cross_entropy(graph["z"], seed % 5), graph) < 1e-4


def test_mean_cross_entropy():
    pairs = [(Tensor([0.0, 0.0]), 0), (Tensor([0.0, 0.0, 0.0]), 2)]
    assert mean_cross_entropy(pairs).item() == pytest.approx((np.log(2.0) + np.log(3.0)) / 2)
    with pytest.raises(LossError):
        mean_cross_entropy([])


def test_ssl_loss_without_masked_roles_is_zero():
    assert ssl_loss([]).item() == 0.0


@pytest.mark.parametrize(
    "weights, losses, expected",
    [
        (LossWeights(), (1.0, 1.0, 1.0), 5.0),
        (LossWeights(alpha2=0.0, alpha3=0.0), (0.8, 3.0, 2.0), 0.8),
        (LossWeights(), (0.7, 0.2, 1.1), 2.4),
    ],
)
def test_total_loss_arithmetic(weights, losses, expected):
    l_id, l_margin, l_ssl = (Tensor(v) for v in losses)
    assert total_loss(l_id, l_margin, l_ssl, weights).item() == pytest.approx(expected, abs=1e-12)


def test_total_loss_without_ssl():
    assert total_loss(Tensor(1.0), Tensor(1.0), None, LossWeights()).item() == 4.0


@pytest.mark.parametrize("seed", range(10))
def test_composite_gradients(seed):
    rng = np.random.default_rng(seed)
    graph = Graph()
    graph.register("H", rng.normal(size=(4, 3)))
    graph.register("W", rng.normal(size=(2, 3)))
    graph.register("S", rng.normal(size=(3, 3)))
    labels = [0, 1, 0, 1]

    def f():
        H = graph["H"]
        rows = [ndiff.mean_over_indices(H, [i]) for i in range(4)]
        l_id = mean_cross_entropy([(ndiff.matmul(graph["W"], r), y) for r, y in zip(rows, labels)])
        l_ssl = ssl_loss([(ndiff.matmul(graph["S"], rows[0]), 2)])
        return total_loss(l_id, margin_loss(H, labels, 6.789), l_ssl, LossWeights())

    assert ndiff.finite_diff_check(f, graph) < 1e-4


def test_weights_validation():
    assert LossWeights().margin_for(128) == 256.0
    assert LossWeights(xi=3.0).margin_for(128) == 3.0
    with pytest.raises(ValidationError):
        LossWeights(xi=0.0)
    with pytest.raises(ValidationError):
        LossWeights(alpha1=-1.0)
    with pytest.raises(ValidationError):
        LossWeights(alpha2=float("inf"))
