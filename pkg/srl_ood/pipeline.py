"""Training, evaluation and experiment drivers.

``train`` runs the joint objective (ID cross-entropy, margin contrastive loss
and the masked-role prediction task), periodically fits the detector on the
validation split and keeps the best snapshot. ``evaluate`` scores test sets
with all four scorers and reports AUROC / FAR95 per (OOD set, scorer).
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import config, detector as det_mod, metrics
from .data_io import (
    Corpus,
    CorpusSpec,
    Example,
    Vocabulary,
    export_embeddings,
    gen_corpus,
    load_corpus,
    load_dataset,
    load_embeddings,
    split_by_label,
    write_dataset,
)
from .detector import Detector
from .model import ndiff
from .model.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .model.encoder import (
    EncoderConfig,
    EncoderError,
    EncoderParams,
    featurize,
    id_logits,
    init_params,
    pool_and_concat,
    run_backbone,
    run_head,
    ssl_logits,
)
from .model.losses import LossWeights, margin_loss, mean_cross_entropy, ssl_loss, total_loss
from .model.optim import AdamW, linear_warmup_decay
from .srl import derive_rng, sample_mask

logger = logging.getLogger("srl-ood.train")

CHECKPOINT_FILE = "checkpoint.json"
DETECTOR_FILE = "detector.json"
TRAIN_LOG_FILE = "train_log.jsonl"
VIEWS = ("full", "cls")
ABLATION_STAGES = ("baseline", "+srl", "+srl+ssl")


class PipelineError(Exception):
    """Exception raised for invalid training or evaluation requests."""
    pass


class NumericError(Exception):
    """Exception raised when a loss becomes non-finite."""
    pass


class TrainConfig(BaseModel):
    """Everything that determines a training run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    p_mask: float = Field(0.3, ge=0.0, le=1.0)
    lr: float = Field(3e-4, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    warmup_ratio: float = Field(0.06, ge=0.0, lt=1.0)
    batch_size: int = Field(12, ge=2)
    epochs: int = Field(10, ge=1)
    eval_steps: int = Field(0, ge=0)
    seed: int = config.SEED
    selection_metric: Literal["val_accuracy", "val_maha_auroc"] = "val_accuracy"
    fit_on: Literal["val", "train+val"] = "val"

    @model_validator(mode="after")
    def _check_betas(self):
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        return self


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    """Copy of ``cfg`` whose every seed field is ``seed``."""
    return cfg.model_copy(update={"seed": seed, "encoder": cfg.encoder.model_copy(update={"seed": seed})})


class StepRecord(BaseModel):
    """One optimizer step; evaluation fields are set on evaluation steps only."""

    step: int
    epoch: int
    lr: float
    loss: float
    l_id: float
    l_margin: float
    l_ssl: float
    val_accuracy: Optional[float] = None
    dev_maha_auroc: Optional[float] = None
    selection: Optional[float] = None

    @property
    def evaluated(self) -> bool:
        return self.val_accuracy is not None


@dataclass
class TrainResult:
    best: Checkpoint
    detector: Detector
    log: List[StepRecord]
    best_step: int
    best_metric: float
    config: TrainConfig

    @property
    def evaluations(self) -> List[StepRecord]:
        return [r for r in self.log if r.evaluated]

    @property
    def best_val_accuracy(self) -> float:
        return next(r.val_accuracy for r in self.log if r.step == self.best_step)


class ScorerMetrics(BaseModel):
    auroc: float = Field(ge=0.0, le=1.0)
    far95: float = Field(ge=0.0, le=1.0)


class DetectorInfo(BaseModel):
    num_classes: int
    d: int
    bank_size: int
    view: str


class EvalReport(BaseModel):
    """AUROC / FAR95 per (OOD set, scorer) plus ID accuracy."""

    id_dataset: str
    ood_sets: Dict[str, Dict[str, ScorerMetrics]]
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: int
    id_accuracy: Optional[float] = None
    detector: Optional[DetectorInfo] = None
    warnings: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _all_scorers(self):
        for name, per_scorer in self.ood_sets.items():
            missing = set(det_mod.SCORERS) - set(per_scorer)
            if missing:
                raise ValueError(f"OOD set {name} lacks scorers {sorted(missing)}")
        return self

    def mean_over_scorers(self) -> Tuple[float, float]:
        """(mean AUROC, mean FAR95) over every OOD set and scorer."""
        values = [m for per_scorer in self.ood_sets.values() for m in per_scorer.values()]
        return (
            float(np.mean([m.auroc for m in values])),
            float(np.mean([m.far95 for m in values])),
        )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _encode_split(vocab: Vocabulary, examples: Sequence[Example]):
    return [(vocab.encode(ex.tokens), ex.spans) for ex in examples]


def _labels(examples: Sequence[Example]) -> np.ndarray:
    return np.asarray([ex.label for ex in examples], dtype=np.int64)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffled batches; a trailing batch of one joins the previous batch."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _resolve_encoder(cfg: TrainConfig, vocab: Vocabulary, corpus: Corpus) -> EncoderConfig:
    enc = cfg.encoder
    if enc.vocab_size == 0:
        enc = enc.model_copy(update={"vocab_size": len(vocab)})
    elif enc.vocab_size < len(vocab):
        raise PipelineError(f"vocab_size {enc.vocab_size} is smaller than the vocabulary ({len(vocab)})")
    longest = max(len(ex.tokens) for examples in corpus.splits().values() for ex in examples)
    if longest > enc.max_seq_len:
        raise PipelineError(f"longest sentence has {longest} tokens but max_seq_len is {enc.max_seq_len}")
    return enc


def fit_detector(params: EncoderParams, vocab: Vocabulary, examples: Sequence[Example]) -> Detector:
    """Fit the detector on unmasked features of labelled ID examples."""
    features, _ = featurize(params, _encode_split(vocab, examples))
    labels = _labels(examples)
    if np.any(labels < 0):
        raise PipelineError("detector fitting needs labelled ID examples")
    return det_mod.fit(features, labels, params.num_classes, classifier=params["cls.w"].data.copy())


def _batch_losses(params: EncoderParams, cfg: TrainConfig, items, batch, epoch: int):
    """(total, l_id, l_margin, l_ssl) tensors for one batch."""
    weights = cfg.loss
    use_srl = params.config.use_srl
    features, id_pairs, ssl_pairs = [], [], []
    for index in batch:
        ids, spans, label = items[index]
        x = run_backbone(ids, params)
        H = run_head(x, params)
        h = pool_and_concat(H, ndiff.mean_over_indices(H, [0]), spans).features(use_srl)
        features.append(h)
        id_pairs.append((id_logits(h, params), label))
        if weights.alpha3 > 0:
            mask = sample_mask(spans, cfg.p_mask, derive_rng(cfg.seed, "mask", epoch, int(index)))
            if not mask.empty:
                Hm = run_head(x, params, mask)
                for positions, target in zip(mask.role_positions, mask.targets):
                    ssl_pairs.append((ssl_logits(ndiff.mean_over_indices(Hm, positions), params), target))

    l_id = mean_cross_entropy(id_pairs)
    if weights.alpha2 > 0:
        labels = [items[i][2] for i in batch]
        l_margin = margin_loss(ndiff.stack(features), labels, weights.margin_for(params.config.rep_dim))
    else:
        l_margin = ndiff.Tensor(0.0)
    l_ssl = ssl_loss(ssl_pairs)
    total = total_loss(l_id, l_margin, l_ssl if weights.alpha3 > 0 else None, weights)
    return total, l_id, l_margin, l_ssl


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train(cfg: TrainConfig, corpus: Corpus) -> TrainResult:
    """Train an encoder on ``corpus.train`` and return the best snapshot.

    The best snapshot has the strictly highest selection metric over all
    evaluations; evaluation happens every ``eval_steps`` steps (each epoch end
    when 0) and always after the final step.
    """
    if not corpus.train:
        raise PipelineError("empty train split")
    if not corpus.val:
        raise PipelineError("empty val split")
    if cfg.selection_metric == "val_maha_auroc" and not corpus.dev_ood:
        raise PipelineError("selection by val_maha_auroc needs a dev_ood split")

    C = corpus.num_classes
    extra = corpus.lexicon.words() if corpus.lexicon is not None else ()
    vocab = Vocabulary.build(corpus.train + corpus.val, extra_words=extra)
    enc_cfg = _resolve_encoder(cfg, vocab, corpus)
    try:
        params = init_params(enc_cfg, C)
    except EncoderError as e:
        raise PipelineError(str(e))
    optimizer = AdamW(params.graph, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)

    train_items = [(ids, spans, ex.label) for (ids, spans), ex in zip(_encode_split(vocab, corpus.train), corpus.train)]
    bad = [ex.id for ex in corpus.train + corpus.val if not 0 <= ex.label < C]
    if bad:
        raise PipelineError(f"train/val labels outside [0, {C}): {bad[:5]}")
    val_items = _encode_split(vocab, corpus.val)
    val_labels = _labels(corpus.val)
    fit_examples = corpus.val if cfg.fit_on == "val" else corpus.train + corpus.val

    n_batches = len(_batches(len(train_items), cfg.batch_size, np.random.default_rng(0)))
    total_steps = cfg.epochs * n_batches
    logger.info(
        "Training %d examples, %d classes, %d steps (%d epochs x %d batches), vocab %d",
        len(train_items), C, total_steps, cfg.epochs, n_batches, len(vocab),
    )

    log: List[StepRecord] = []
    best: Optional[Tuple[float, int, Checkpoint, Detector]] = None
    step = 0
    for epoch in range(cfg.epochs):
        for b, batch in enumerate(_batches(len(train_items), cfg.batch_size, derive_rng(cfg.seed, "shuffle", epoch))):
            lr = linear_warmup_decay(step, total_steps, cfg.warmup_ratio, cfg.lr)
            params.graph.zero_grad()
            total, l_id, l_margin, l_ssl = _batch_losses(params, cfg, train_items, batch, epoch)
            if not np.isfinite(total.item()):
                raise NumericError(f"non-finite loss {total.item()} at step {step}")
            ndiff.backward(total)
            optimizer.step(lr)
            step += 1

            record = StepRecord(
                step=step, epoch=epoch, lr=lr, loss=total.item(),
                l_id=l_id.item(), l_margin=l_margin.item(), l_ssl=l_ssl.item(),
            )
            logger.debug(
                "step %d lr %.3e loss %.6f (id %.6f margin %.6f ssl %.6f)",
                step, lr, record.loss, record.l_id, record.l_margin, record.l_ssl,
            )

            at_epoch_end = b == n_batches - 1
            if step == total_steps or (cfg.eval_steps == 0 and at_epoch_end) or (cfg.eval_steps and step % cfg.eval_steps == 0):
                _, val_logits = featurize(params, val_items)
                record.val_accuracy = _accuracy(val_logits, val_labels)
                detector = fit_detector(params, vocab, fit_examples)
                if corpus.dev_ood:
                    record.dev_maha_auroc = _maha_auroc(detector, params, vocab, corpus.val, corpus.dev_ood)
                record.selection = record.val_accuracy if cfg.selection_metric == "val_accuracy" else record.dev_maha_auroc
                logger.info(
                    "step %d/%d lr %.3e loss %.4f val_acc %.4f%s",
                    step, total_steps, lr, record.loss, record.val_accuracy,
                    "" if record.dev_maha_auroc is None else f" dev_maha_auroc {record.dev_maha_auroc:.4f}",
                )
                if best is None or record.selection > best[0]:
                    best = (record.selection, step, Checkpoint.from_params(params, vocab.tokens, step), detector)
            log.append(record)

    best_metric, best_step, ckpt, detector = best
    logger.info("Best %s %.4f at step %d", cfg.selection_metric, best_metric, best_step)
    return TrainResult(
        best=ckpt, detector=detector, log=log, best_step=best_step,
        best_metric=best_metric, config=cfg.model_copy(update={"encoder": enc_cfg}),
    )


def _maha_auroc(detector: Detector, params: EncoderParams, vocab: Vocabulary, id_examples, ood_examples) -> float:
    id_features, _ = featurize(params, _encode_split(vocab, id_examples))
    ood_features, _ = featurize(params, _encode_split(vocab, ood_examples))
    sample = metrics.ScoreSample(
        det_mod.maha_scores(detector, id_features), det_mod.maha_scores(detector, ood_features)
    )
    return metrics.auroc(sample)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(
    ckpt: Checkpoint,
    id_test: Sequence[Example],
    ood_sets: Dict[str, Sequence[Example]],
    detector: Optional[Detector] = None,
    fit_examples: Optional[Sequence[Example]] = None,
    view: str = "full",
    id_dataset: str = "test_id",
    run_config: Optional[Dict[str, Any]] = None,
) -> EvalReport:
    """Score ``id_test`` against every OOD set with all four scorers.

    The detector is either given or fitted on ``fit_examples``. ``view="cls"``
    restricts distance scorers to the [CLS] block of the features.
    """
    if view not in VIEWS:
        raise PipelineError(f"unknown view {view}; expected one of {VIEWS}")
    if not id_test:
        raise PipelineError("empty ID test set")
    params = ckpt.to_params()
    vocab = Vocabulary(ckpt.vocab)
    if detector is None:
        if not fit_examples:
            raise PipelineError("evaluation needs a fitted detector or examples to fit one")
        detector = fit_detector(params, vocab, fit_examples)
    rep_dim = params.config.rep_dim
    if detector.d != rep_dim:
        raise PipelineError(f"dimension mismatch: detector width {detector.d}, checkpoint features {rep_dim}")
    if detector.classifier is None:
        detector = replace(detector, classifier=params["cls.w"].data.copy())
    width = params.config.d_model if view == "cls" else rep_dim
    scoring = det_mod.refit_view(detector, width) if width != rep_dim else detector

    def scores_for(examples):
        features, logits = featurize(params, _encode_split(vocab, examples))
        return features, logits, det_mod.score_all(scoring, features[:, :width], logits)

    _, id_logits_, id_scores = scores_for(id_test)
    id_labels = _labels(id_test)
    id_accuracy = _accuracy(id_logits_, id_labels) if np.all(id_labels >= 0) else None

    warnings: List[str] = []
    results: Dict[str, Dict[str, ScorerMetrics]] = {}
    for name, examples in ood_sets.items():
        if not examples:
            raise PipelineError(f"OOD set {name} is empty")
        _, _, ood_scores = scores_for(examples)
        results[name] = {}
        for scorer in det_mod.SCORERS:
            sample = metrics.ScoreSample(id_scores[scorer], ood_scores[scorer])
            far = metrics.far95(sample)
            for w in far.warnings:
                if w not in warnings:
                    warnings.append(w)
            results[name][scorer] = ScorerMetrics(auroc=metrics.auroc(sample), far95=far.value)

    return EvalReport(
        id_dataset=id_dataset,
        ood_sets=results,
        config=run_config if run_config is not None else {"encoder": params.config.model_dump(mode="json")},
        seed=params.config.seed,
        id_accuracy=id_accuracy,
        detector=DetectorInfo(num_classes=scoring.num_classes, d=scoring.d, bank_size=scoring.bank.shape[0], view=view),
        warnings=warnings,
    )


def evaluate_run(result: TrainResult, corpus: Corpus, view: str = "full") -> EvalReport:
    """Evaluate a training result on the corpus's test splits."""
    return evaluate(
        result.best,
        corpus.test_id,
        {"test_ood": corpus.test_ood},
        detector=result.detector,
        view=view,
        run_config=result.config.model_dump(mode="json"),
    )


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def sweep_mask(cfg: TrainConfig, corpus: Corpus, probabilities: Sequence[float]) -> pd.DataFrame:
    """Train and evaluate one model per masking probability (shared seed)."""
    if len(probabilities) < 2:
        raise PipelineError("a masking sweep needs at least 2 probabilities")
    rows = []
    for p in probabilities:
        try:
            run_cfg = TrainConfig.model_validate({**cfg.model_dump(), "p_mask": p})
        except ValidationError as e:
            raise PipelineError(f"invalid masking probability {p}: {e}")
        logger.info("Masking sweep: p_mask=%.2f", p)
        result = train(run_cfg, corpus)
        mean_auroc, mean_far95 = evaluate_run(result, corpus).mean_over_scorers()
        rows.append({
            "p_mask": float(p),
            "mean_auroc": mean_auroc,
            "mean_far95": mean_far95,
            "val_accuracy": result.best_val_accuracy,
            "max_ssl_loss": max(r.l_ssl for r in result.log),
        })
    return pd.DataFrame(rows, columns=["p_mask", "mean_auroc", "mean_far95", "val_accuracy", "max_ssl_loss"])


@dataclass
class ExperimentResult:
    """Per-seed, per-view, per-scorer metrics and their medians."""

    table: pd.DataFrame
    reports: Dict[Tuple[int, str], EvalReport] = field(default_factory=dict)

    @property
    def summary(self) -> pd.DataFrame:
        return (
            self.table.groupby(["view", "scorer"], sort=True)[["auroc", "far95", "val_accuracy"]]
            .median()
            .reset_index()
        )

    def median(self, view: str, scorer: str, metric: str = "auroc") -> float:
        rows = self.table[(self.table["view"] == view) & (self.table["scorer"] == scorer)]
        if rows.empty:
            raise PipelineError(f"no results for view {view}, scorer {scorer}")
        return float(rows[metric].median())


def run_experiment(
    cfg: TrainConfig, corpus: Corpus, seeds: Sequence[int], views: Sequence[str] = VIEWS
) -> ExperimentResult:
    """One training run per seed, evaluated under every feature view."""
    if not seeds:
        raise PipelineError("no seeds given")
    rows, reports = [], {}
    for seed in seeds:
        result = train(with_seed(cfg, seed), corpus)
        for view in views:
            report = evaluate_run(result, corpus, view=view)
            reports[(seed, view)] = report
            for name, per_scorer in report.ood_sets.items():
                for scorer, m in per_scorer.items():
                    rows.append({
                        "seed": seed, "view": view, "ood_set": name, "scorer": scorer,
                        "auroc": m.auroc, "far95": m.far95, "val_accuracy": result.best_val_accuracy,
                    })
    table = pd.DataFrame(rows, columns=["seed", "view", "ood_set", "scorer", "auroc", "far95", "val_accuracy"])
    experiment = ExperimentResult(table=table, reports=reports)
    for view in views:
        logger.info(
            "Median over %d seeds (%s view): maha AUROC %.4f FAR95 %.4f",
            len(seeds), view, experiment.median(view, "maha"), experiment.median(view, "maha", "far95"),
        )
    return experiment


def ablation_config(cfg: TrainConfig, stage: str) -> TrainConfig:
    """baseline: no role pooling, no masking task; +srl: pooling only; +srl+ssl: both.

    Every stage keeps the trainable head stack and the cross-entropy and margin
    losses, so the baseline is a [CLS]-only encoder of the same depth.
    """
    if stage not in ABLATION_STAGES:
        raise PipelineError(f"unknown ablation stage {stage}")
    use_srl = stage != "baseline"
    alpha3 = cfg.loss.alpha3 if stage == "+srl+ssl" else 0.0
    return cfg.model_copy(update={
        "encoder": cfg.encoder.model_copy(update={"use_srl": use_srl}),
        "loss": cfg.loss.model_copy(update={"alpha3": alpha3}),
    })


def ablate(cfg: TrainConfig, corpus: Corpus) -> Dict[str, EvalReport]:
    reports = {}
    for stage in ABLATION_STAGES:
        logger.info("Ablation stage %s", stage)
        reports[stage] = evaluate_run(train(ablation_config(cfg, stage), corpus), corpus)
    return reports


# ---------------------------------------------------------------------------
# run directories and file-level entry points
# ---------------------------------------------------------------------------


def save_run(result: TrainResult, out_dir: str):
    """Write checkpoint.json, detector.json and train_log.jsonl."""
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(result.best, os.path.join(out_dir, CHECKPOINT_FILE))
    det_mod.save_detector(result.detector, os.path.join(out_dir, DETECTOR_FILE))
    with open(os.path.join(out_dir, TRAIN_LOG_FILE), "w", encoding="utf-8") as f:
        for record in result.log:
            f.write(record.model_dump_json() + "\n")


def load_run(run_dir: str) -> Tuple[Checkpoint, Detector, List[StepRecord]]:
    ckpt = load_checkpoint(os.path.join(run_dir, CHECKPOINT_FILE))
    detector = det_mod.load_detector(os.path.join(run_dir, DETECTOR_FILE))
    log: List[StepRecord] = []
    log_path = os.path.join(run_dir, TRAIN_LOG_FILE)
    if os.path.exists(log_path):
        with open(log_path, "r", encoding="utf-8") as f:
            log = [StepRecord.model_validate_json(line) for line in f if line.strip()]
    return ckpt, detector, log


def load_train_config(path: Optional[str], seed: Optional[int] = None) -> TrainConfig:
    if path is None:
        cfg = TrainConfig()
    else:
        with open(path, "r", encoding="utf-8") as f:
            cfg = TrainConfig.model_validate_json(f.read())
    return with_seed(cfg, seed) if seed is not None else cfg


def load_corpus_spec(path: Optional[str], seed: Optional[int] = None) -> CorpusSpec:
    if path is None:
        spec = CorpusSpec()
    else:
        with open(path, "r", encoding="utf-8") as f:
            spec = CorpusSpec.model_validate_json(f.read())
    return spec.model_copy(update={"seed": seed}) if seed is not None else spec


def generate_dataset(spec: CorpusSpec, out_dir: str) -> Corpus:
    corpus = gen_corpus(spec)
    write_dataset(corpus, out_dir)
    return corpus


def train_to_dir(cfg: TrainConfig, data_dir: str, out_dir: str) -> TrainResult:
    result = train(cfg, load_dataset(data_dir))
    save_run(result, out_dir)
    logger.info("Run saved to %s", out_dir)
    return result


def write_report(report: EvalReport, path: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.model_dump_json(indent=2))


def load_report(path: str) -> EvalReport:
    with open(path, "r", encoding="utf-8") as f:
        return EvalReport.model_validate_json(f.read())


def evaluate_files(
    run_dir: str, id_path: str, ood_paths: Dict[str, str], report_path: Optional[str] = None, view: str = "full"
) -> EvalReport:
    """Evaluate a saved run on corpus files; the ID file keeps only its ID examples."""
    ckpt, detector, _ = load_run(run_dir)
    id_examples, _ = split_by_label(load_corpus(id_path))
    ood_sets = {name: load_corpus(path) for name, path in ood_paths.items()}
    report = evaluate(
        ckpt, id_examples, ood_sets, detector=detector, view=view,
        id_dataset=os.path.splitext(os.path.basename(id_path))[0],
    )
    if report_path:
        write_report(report, report_path)
        logger.info("Report written to %s", report_path)
    return report


def export_to_file(run_dir: str, data_path: str, out_path: str):
    ckpt = load_checkpoint(os.path.join(run_dir, CHECKPOINT_FILE))
    return export_embeddings(ckpt, load_corpus(data_path), out_path)


def fit_from_dump(embeddings_path: str, out_path: str, num_classes: Optional[int] = None) -> Detector:
    """Fit a classifier-free detector from a dump of labelled ID embeddings."""
    dump = load_embeddings(embeddings_path)
    keep = dump.labels >= 0
    if not np.any(keep):
        raise PipelineError(f"{embeddings_path}: no labelled ID embeddings to fit on")
    detector = det_mod.fit(dump.vectors[keep], dump.labels[keep], num_classes)
    det_mod.save_detector(detector, out_path)
    return detector


def score_file(detector_path: str, embeddings_path: str, out_path: Optional[str] = None) -> pd.DataFrame:
    """Score every embedding of a dump; MSP/energy only when the detector has classifier weights."""
    detector = det_mod.load_detector(detector_path)
    dump = load_embeddings(embeddings_path)
    if dump.d != detector.d:
        raise PipelineError(f"dimension mismatch: dump width {dump.d}, detector width {detector.d}")
    if detector.classifier is not None:
        scores = det_mod.score_all(detector, dump.vectors)
    else:
        scores = {"maha": det_mod.maha_scores(detector, dump.vectors), "cosine": det_mod.cosine_scores(detector, dump.vectors)}
    table = pd.DataFrame({"id": dump.ids, "label": dump.labels, **scores})
    if out_path:
        table.to_csv(out_path, index=False)
        logger.info("Scores for %d embeddings written to %s", len(table), out_path)
    return table
