"""Training objectives: margin contrastive loss, cross-entropies and their weighted sum."""

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import ndiff
from .ndiff import Tensor


class LossError(Exception):
    """Exception raised for invalid loss inputs."""
    pass


class LossWeights(BaseModel):
    """alpha weights of the total loss and the contrastive margin xi.

    ``xi = None`` resolves to twice the feature width, where squared distances
    between roughly unit-variance features concentrate.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha1: float = Field(1.0, ge=0, allow_inf_nan=False)
    alpha2: float = Field(3.0, ge=0, allow_inf_nan=False)
    alpha3: float = Field(1.0, ge=0, allow_inf_nan=False)
    xi: Optional[float] = Field(None, gt=0, allow_inf_nan=False)

    def margin_for(self, dim: int) -> float:
        return float(self.xi) if self.xi is not None else 2.0 * dim


def margin_loss(H: Tensor, labels: Sequence[int], xi: float) -> Tensor:
    """Margin contrastive loss over a batch of features H (m x d).

    Same-class pairs are pulled together by squared L2 distance; different-class
    pairs are pushed apart until their squared distance reaches ``xi``. Each
    anchor averages over its positives and over its negatives; anchors with no
    positives (or no negatives) contribute nothing to that term. The sum is
    divided by m * d.
    """
    if H.ndim != 2:
        raise LossError(f"margin loss expects a feature matrix, got shape {H.shape}")
    m, d = H.shape
    if m < 2:
        raise LossError(f"margin loss needs at least 2 examples, got {m}")
    y = np.asarray(labels)
    if y.shape != (m,):
        raise LossError(f"{y.shape[0] if y.ndim else 0} labels for {m} feature rows")
    if xi <= 0:
        raise LossError(f"margin must be positive, got {xi}")

    same = y[:, None] == y[None, :]
    positives = same & ~np.eye(m, dtype=bool)
    negatives = ~same
    pos_weight = positives / np.maximum(positives.sum(axis=1, keepdims=True), 1)
    neg_weight = negatives / np.maximum(negatives.sum(axis=1, keepdims=True), 1)

    dist = ndiff.pairwise_sq_dist(H)
    pull = ndiff.sum_all(ndiff.mul(dist, Tensor(pos_weight)))
    hinge = ndiff.relu(ndiff.shift(ndiff.scale(dist, -1.0), xi))
    push = ndiff.sum_all(ndiff.mul(hinge, Tensor(neg_weight)))
    return ndiff.scale(ndiff.add(pull, push), 1.0 / (m * d))


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], shift-stable."""
    return ndiff.cross_entropy(logits, target)


def mean_cross_entropy(pairs: Sequence[Tuple[Tensor, int]]) -> Tensor:
    if not pairs:
        raise LossError("no (logits, target) pairs to average")
    return ndiff.mean([cross_entropy(logits, target) for logits, target in pairs])


def ssl_loss(pairs: Sequence[Tuple[Tensor, int]]) -> Tensor:
    """Mean role-prediction cross-entropy over every masked role of a batch; 0 if none."""
    if not pairs:
        return Tensor(0.0)
    return mean_cross_entropy(pairs)


def total_loss(
    l_id: Union[Tensor, float],
    l_margin: Union[Tensor, float],
    l_ssl: Optional[Union[Tensor, float]],
    weights: LossWeights,
) -> Tensor:
    """alpha1 * L_ID + alpha2 * L_margin + alpha3 * L_SSL; a missing L_SSL counts as 0."""
    total = ndiff.add(
        ndiff.scale(l_id, weights.alpha1),
        ndiff.scale(l_margin, weights.alpha2),
    )
    if l_ssl is not None:
        total = ndiff.add(total, ndiff.scale(l_ssl, weights.alpha3))
    return total
