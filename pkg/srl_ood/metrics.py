"""Threshold-free OOD metrics: AUROC and FAR95.

Scores are oriented higher = more OOD. AUROC treats OOD as the positive class;
FAR95 treats ID as positive and thresholds at 95% true positive rate.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy import stats

from . import config

logger = logging.getLogger("srl-ood.metrics")


class MetricsError(Exception):
    """Exception raised for invalid score samples."""
    pass


@dataclass(frozen=True)
class ScoreSample:
    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        for attr in ("id_scores", "ood_scores"):
            values = np.asarray(getattr(self, attr), dtype=np.float64).reshape(-1)
            if values.size == 0:
                raise MetricsError(f"{attr} is empty")
            if not np.all(np.isfinite(values)):
                raise MetricsError(f"{attr} contains non-finite scores")
            object.__setattr__(self, attr, values)

    @classmethod
    def of(cls, id_scores: Sequence[float], ood_scores: Sequence[float]) -> "ScoreSample":
        return cls(np.asarray(id_scores), np.asarray(ood_scores))


@dataclass(frozen=True)
class Far95Result:
    value: float
    threshold: float
    warnings: List[str] = field(default_factory=list)


def auroc(sample: ScoreSample) -> float:
    """P(random OOD score > random ID score), ties counted 1/2, via midranks."""
    n_id = sample.id_scores.size
    n_ood = sample.ood_scores.size
    ranks = stats.rankdata(np.concatenate([sample.id_scores, sample.ood_scores]))
    # midranks are multiples of 1/2; doubling keeps the U statistic integral
    doubled = int(round(2.0 * ranks[n_id:].sum()))
    u2 = doubled - n_ood * (n_ood + 1)
    return u2 / (2.0 * n_ood * n_id)


def auroc_pairwise(sample: ScoreSample) -> float:
    """Quadratic pair-counting reference for :func:`auroc`."""
    o = sample.ood_scores[:, None]
    i = sample.id_scores[None, :]
    doubled = 2 * int(np.count_nonzero(o > i)) + int(np.count_nonzero(o == i))
    return doubled / (2.0 * o.size * i.size)


def far95(sample: ScoreSample, tpr_percent: int = config.TPR_PERCENT) -> Far95Result:
    """Fraction of OOD scores accepted as ID at the nearest-rank TPR threshold.

    The threshold is the ``ceil(tpr * n_id)``-th smallest ID score; a score at
    or below it is accepted as ID.
    """
    ids = np.sort(sample.id_scores)
    n_id = ids.size
    rank = -(-tpr_percent * n_id // 100)
    tau = float(ids[max(rank, 1) - 1])
    warnings = []
    if n_id < config.MIN_STABLE_ID:
        warnings.append(
            f"unstable percentile: only {n_id} ID scores (< {config.MIN_STABLE_ID})"
        )
        logger.warning("FAR95 threshold from %d ID scores is an unstable percentile", n_id)
    accepted = int(np.count_nonzero(sample.ood_scores <= tau))
    return Far95Result(value=accepted / sample.ood_scores.size, threshold=tau, warnings=warnings)
