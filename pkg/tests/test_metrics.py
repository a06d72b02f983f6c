import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from srl_ood.metrics import MetricsError, ScoreSample, auroc, auroc_pairwise, far95

ONE_TO_HUNDRED = np.arange(1, 101, dtype=float)


@pytest.mark.parametrize(
    "id_scores, ood_scores, expected",
    [
        ([0, 1], [2, 3], 1.0),
        ([1, 3], [2, 4], 0.75),
        ([5, 5, 2], [5, 5, 2], 0.5),
        ([2, 3], [0, 1], 0.0),
    ],
)
def test_auroc_examples(id_scores, ood_scores, expected):
    assert auroc(ScoreSample.of(id_scores, ood_scores)) == expected


@pytest.mark.parametrize("seed", range(50))
def test_auroc_equals_pair_counting(seed):
    rng = np.random.default_rng(seed)
    n_id, n_ood = rng.integers(1, 101, size=2)
    # few distinct values on even seeds -> heavy ties
    levels = 4 if seed % 2 == 0 else 10_000
    sample = ScoreSample.of(rng.integers(0, levels, n_id) / 7.0, rng.integers(0, levels, n_ood) / 7.0)
    assert auroc(sample) == auroc_pairwise(sample)


def test_auroc_agrees_with_sklearn(rng):
    id_scores, ood_scores = rng.normal(size=60), rng.normal(0.8, size=40)
    labels = np.r_[np.zeros(60), np.ones(40)]
    expected = roc_auc_score(labels, np.r_[id_scores, ood_scores])
    assert auroc(ScoreSample.of(id_scores, ood_scores)) == pytest.approx(expected, abs=1e-12)


def test_auroc_is_invariant_under_monotone_maps(rng):
    sample = ScoreSample.of(rng.normal(size=30), rng.normal(0.5, size=25))
    mapped = ScoreSample.of(np.exp(sample.id_scores) * 3.0 + 1.0, np.exp(sample.ood_scores) * 3.0 + 1.0)
    assert auroc(mapped) == auroc(sample)


def test_negation_flips_auroc(rng):
    id_scores = rng.integers(0, 5, size=40).astype(float)
    ood_scores = rng.integers(0, 5, size=33).astype(float)
    value = auroc(ScoreSample.of(id_scores, ood_scores))
    flipped = auroc(ScoreSample.of(-id_scores, -ood_scores))
    assert flipped == pytest.approx(1.0 - value, abs=1e-12)


@pytest.mark.parametrize(
    "ood_scores, expected",
    [([200.0] * 10, 0.0), ([0.0] * 10, 1.0), ([50.0, 96.0, 200.0], 1.0 / 3.0)],
)
def test_far95_examples(ood_scores, expected):
    result = far95(ScoreSample.of(ONE_TO_HUNDRED, ood_scores))
    assert result.threshold == 95.0
    assert result.value == pytest.approx(expected)
    assert result.warnings == []


def test_far95_accepts_ties_at_threshold():
    assert far95(ScoreSample.of(ONE_TO_HUNDRED, [95.0, 95.5])).value == 0.5


@pytest.mark.parametrize("n_id, rank", [(20, 19), (21, 20), (40, 38), (1, 1)])
def test_far95_nearest_rank(n_id, rank):
    ids = np.arange(1, n_id + 1, dtype=float)
    assert far95(ScoreSample.of(ids[::-1], [0.0])).threshold == float(rank)


def test_far95_is_monotone_under_upward_shift(rng):
    id_scores, ood_scores = rng.normal(size=50), rng.normal(size=50)
    values = [far95(ScoreSample.of(id_scores, ood_scores + s)).value for s in np.linspace(0.0, 4.0, 9)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_small_id_set_warns(caplog):
    result = far95(ScoreSample.of(np.arange(10.0), [3.0]))
    assert any("unstable percentile" in w for w in result.warnings)
    assert "unstable percentile" in caplog.text


@pytest.mark.parametrize(
    "id_scores, ood_scores",
    [([], [1.0]), ([1.0], []), ([np.nan], [1.0]), ([1.0], [np.inf])],
)
def test_invalid_samples(id_scores, ood_scores):
    with pytest.raises(MetricsError):
        ScoreSample.of(id_scores, ood_scores)
