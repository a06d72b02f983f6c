"""OOD detector fitted on validation features, with four scoring functions.

Every scorer is oriented so that a higher score means "more likely OOD":

    maha    min_c (h - mu_c)^T Sigma^+ (h - mu_c)
    cosine  -max_i cos(h, h_i) over the validation bank
    msp     1 - max_j softmax(logits)_j
    energy  -log sum_j exp(logits_j)
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy import linalg, special

from . import config

logger = logging.getLogger("srl-ood.detector")

SCORERS = ("msp", "energy", "maha", "cosine")


class DetectorError(Exception):
    """Exception raised for detector fitting, scoring or persistence errors."""
    pass


@dataclass(frozen=True)
class Score:
    value: float
    scorer: str


@dataclass(frozen=True)
class Detector:
    """Class means, shared covariance pseudo-inverse and the feature bank.

    ``classifier`` holds the ID classifier weights W (C x d) when the detector
    should also score MSP/energy from raw features.
    """

    class_means: np.ndarray
    cov_pinv: np.ndarray
    bank: np.ndarray
    bank_labels: np.ndarray
    num_classes: int
    classifier: Optional[np.ndarray] = None
    scorer_config: Dict[str, Any] = field(default_factory=dict)

    @property
    def d(self) -> int:
        return int(self.class_means.shape[1])

    def logits(self, H: np.ndarray) -> np.ndarray:
        if self.classifier is None:
            raise DetectorError("detector carries no classifier weights; pass logits explicitly")
        return H @ self.classifier.T


def covariance_pinv(cov: np.ndarray, rtol: float = config.PINV_RTOL) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix by eigendecomposition.

    Negative round-off eigenvalues are clamped to 0 and eigenvalues at or below
    ``rtol * lambda_max`` are dropped.
    """
    eigvals, eigvecs = linalg.eigh(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    top = eigvals.max() if eigvals.size else 0.0
    keep = eigvals > rtol * top
    inv = np.zeros_like(eigvals)
    inv[keep] = 1.0 / eigvals[keep]
    pinv = (eigvecs * inv) @ eigvecs.T
    return (pinv + pinv.T) / 2.0


def fit(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: Optional[int] = None,
    classifier: Optional[np.ndarray] = None,
    rtol: float = config.PINV_RTOL,
    scorer_config: Optional[Dict[str, Any]] = None,
) -> Detector:
    """Fit class means, the shared (1/N) covariance and its pseudo-inverse.

    Rows are put into a canonical order first, so the fit does not depend on
    the order in which features arrive.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DetectorError(f"need a non-empty feature matrix, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise DetectorError(f"{y.size} labels for {X.shape[0]} feature rows")
    if not np.all(np.isfinite(X)):
        raise DetectorError("features contain non-finite values")
    C = int(num_classes) if num_classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= C:
        raise DetectorError(f"labels must lie in [0, {C}), got range [{y.min()}, {y.max()}]")

    order = np.lexsort(tuple(X.T[::-1]) + (y,))
    X, y = X[order], y[order]

    means = np.zeros((C, X.shape[1]))
    for c in range(C):
        rows = X[y == c]
        if rows.shape[0] == 0:
            raise DetectorError(f"empty-class: class {c} has no features")
        means[c] = rows.sum(axis=0) / rows.shape[0]
    centered = X - means[y]
    cov = centered.T @ centered / X.shape[0]
    pinv = covariance_pinv(cov, rtol)

    if classifier is not None:
        classifier = np.asarray(classifier, dtype=np.float64)
        if classifier.shape != (C, X.shape[1]):
            raise DetectorError(f"classifier shape {classifier.shape} does not match ({C}, {X.shape[1]})")

    settings = {"rtol": rtol, "scorers": list(SCORERS)}
    settings.update(scorer_config or {})
    logger.debug("Fitted detector on %d features of width %d (%d classes)", X.shape[0], X.shape[1], C)
    return Detector(
        class_means=means,
        cov_pinv=pinv,
        bank=X,
        bank_labels=y,
        num_classes=C,
        classifier=classifier,
        scorer_config=settings,
    )


def refit_view(det: Detector, width: int) -> Detector:
    """Refit on the first ``width`` feature coordinates (e.g. the [CLS] block only)."""
    if not 0 < width <= det.d:
        raise DetectorError(f"view width {width} outside 1..{det.d}")
    rtol = det.scorer_config.get("rtol", config.PINV_RTOL)
    settings = dict(det.scorer_config, view_width=width)
    return fit(det.bank[:, :width], det.bank_labels, det.num_classes, rtol=rtol, scorer_config=settings)


def _check_width(det: Detector, h: np.ndarray):
    if h.shape[-1] != det.d:
        raise DetectorError(f"feature width {h.shape[-1]} does not match detector width {det.d}")


def _logit_check(logits: np.ndarray):
    if logits.shape[-1] < 2:
        raise DetectorError(f"need at least 2 logits, got {logits.shape[-1]}")


def maha_scores(det: Detector, H: np.ndarray) -> np.ndarray:
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    _check_width(det, H)
    diffs = H[:, None, :] - det.class_means[None, :, :]
    quad = np.einsum("ncd,de,nce->nc", diffs, det.cov_pinv, diffs)
    return np.clip(quad.min(axis=1), 0.0, None)


def cosine_scores(det: Detector, H: np.ndarray) -> np.ndarray:
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    _check_width(det, H)
    norms = np.linalg.norm(H, axis=1)
    bank_norms = np.linalg.norm(det.bank, axis=1)
    if np.any(norms == 0) or np.any(bank_norms == 0):
        raise DetectorError("zero-vector: cosine similarity is undefined for a zero vector")
    sims = (H / norms[:, None]) @ (det.bank / bank_norms[:, None]).T
    return -np.clip(sims.max(axis=1), -1.0, 1.0)


def msp_scores(logits: np.ndarray) -> np.ndarray:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    _logit_check(logits)
    return 1.0 - special.softmax(logits, axis=1).max(axis=1)


def energy_scores(logits: np.ndarray) -> np.ndarray:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    _logit_check(logits)
    return -special.logsumexp(logits, axis=1)


def score_maha(det: Detector, h: np.ndarray) -> Score:
    return Score(float(maha_scores(det, h)[0]), "maha")


def score_cosine(det: Detector, h: np.ndarray) -> Score:
    return Score(float(cosine_scores(det, h)[0]), "cosine")


def score_msp(logits: np.ndarray) -> Score:
    return Score(float(msp_scores(logits)[0]), "msp")


def score_energy(logits: np.ndarray) -> Score:
    return Score(float(energy_scores(logits)[0]), "energy")


def score_all(det: Detector, H: np.ndarray, logits: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """All four scores for a batch of features; logits default to W h."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if logits is None:
        logits = det.logits(H)
    return {
        "msp": msp_scores(logits),
        "energy": energy_scores(logits),
        "maha": maha_scores(det, H),
        "cosine": cosine_scores(det, H),
    }


class DetectorFile(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    format: Literal["SRLOOD-DET-v1"]
    C: int
    d: int
    means: List[List[float]]
    cov_pinv: List[List[float]]
    bank: List[List[float]]
    bank_labels: List[int]
    classifier: Optional[List[List[float]]] = None
    scorer_config: Dict[str, Any] = Field(default_factory=dict, alias="scorer-config")


def save_detector(det: Detector, path: str):
    document = {
        "format": config.DET_FORMAT,
        "C": det.num_classes,
        "d": det.d,
        "means": det.class_means.tolist(),
        "cov_pinv": det.cov_pinv.tolist(),
        "bank": det.bank.tolist(),
        "bank_labels": det.bank_labels.tolist(),
        "classifier": det.classifier.tolist() if det.classifier is not None else None,
        "scorer-config": det.scorer_config,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f)
    logger.info("Detector (%d classes, width %d) saved to %s", det.num_classes, det.d, path)


def load_detector(path: str) -> Detector:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = DetectorFile.model_validate(json.load(f))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise DetectorError(f"cannot read detector {path}: {e}")
    means = np.asarray(document.means, dtype=np.float64)
    if means.shape != (document.C, document.d):
        raise DetectorError(f"means of shape {means.shape} do not match C={document.C}, d={document.d}")
    return Detector(
        class_means=means,
        cov_pinv=np.asarray(document.cov_pinv, dtype=np.float64),
        bank=np.asarray(document.bank, dtype=np.float64),
        bank_labels=np.asarray(document.bank_labels, dtype=np.int64),
        num_classes=document.C,
        classifier=None if document.classifier is None else np.asarray(document.classifier, dtype=np.float64),
        scorer_config=document.scorer_config,
    )
