import json
import os
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from srl_ood import detector as det_mod, pipeline
from srl_ood.data_io import Vocabulary, export_embeddings, load_corpus, write_corpus, write_dataset
from srl_ood.model import ndiff
from srl_ood.model.checkpoint import Checkpoint
from srl_ood.model.encoder import encode, id_logits, init_params, pool_and_concat
from srl_ood.model.losses import LossWeights, mean_cross_entropy
from srl_ood.model.optim import AdamW, linear_warmup_decay
from srl_ood.pipeline import (
    EvalReport,
    NumericError,
    PipelineError,
    TrainConfig,
    evaluate,
    evaluate_run,
    train,
)
from srl_ood.srl import derive_rng


def _items(corpus, cfg):
    vocab = Vocabulary.build(corpus.train + corpus.val, corpus.lexicon.words())
    enc = cfg.encoder.model_copy(update={"vocab_size": len(vocab)})
    params = init_params(enc, corpus.num_classes)
    items = [(ids, spans, ex.label) for (ids, spans), ex in zip(pipeline._encode_split(vocab, corpus.train), corpus.train)]
    return params, items


def test_training_is_deterministic(trained, tiny_train_config, tiny_corpus):
    again = train(tiny_train_config, tiny_corpus)
    assert [r.loss for r in again.log] == [r.loss for r in trained.log]
    assert again.best_step == trained.best_step
    for name, array in trained.best.arrays.items():
        assert np.array_equal(again.best.arrays[name], array), name


def test_training_log_shape(trained):
    # 24 examples in batches of 6, 2 epochs
    assert [r.step for r in trained.log] == list(range(1, 9))
    assert [r.epoch for r in trained.log] == [0] * 4 + [1] * 4
    assert [r.step for r in trained.evaluations] == [4, 8]
    assert all(np.isfinite(r.loss) for r in trained.log)
    assert trained.log[0].lr == 0.0


def test_best_snapshot_is_first_maximum(trained):
    selections = [r.selection for r in trained.evaluations]
    best = max(selections)
    first = next(r.step for r in trained.evaluations if r.selection == best)
    assert trained.best_metric == best
    assert trained.best_step == first == trained.best.step
    assert trained.best_val_accuracy == best


def test_eval_every_n_steps_and_after_last(tiny_train_config, tiny_corpus):
    result = train(tiny_train_config.model_copy(update={"eval_steps": 3}), tiny_corpus)
    assert [r.step for r in result.evaluations] == [3, 6, 8]


def _cross_entropy_reference(cfg, corpus):
    """Plain cross-entropy training with the same batches, seed and optimizer; per-step losses and snapshots."""
    vocab = Vocabulary.build(corpus.train + corpus.val, corpus.lexicon.words())
    params = init_params(cfg.encoder.model_copy(update={"vocab_size": len(vocab)}), corpus.num_classes)
    optimizer = AdamW(params.graph, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    encoded = [(vocab.encode(ex.tokens), ex.spans, ex.label) for ex in corpus.train]
    n_batches = -(-len(encoded) // cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    losses, snapshots, step = [], {}, 0
    for epoch in range(cfg.epochs):
        order = derive_rng(cfg.seed, "shuffle", epoch).permutation(len(encoded))
        for start in range(0, len(encoded), cfg.batch_size):
            pairs = []
            for i in order[start:start + cfg.batch_size]:
                ids, spans, label = encoded[i]
                H, h_cls = encode(ids, params)
                pairs.append((id_logits(pool_and_concat(H, h_cls, spans).h, params), label))
            params.graph.zero_grad()
            loss = mean_cross_entropy(pairs)
            ndiff.backward(loss)
            optimizer.step(linear_warmup_decay(step, total_steps, cfg.warmup_ratio, cfg.lr))
            step += 1
            losses.append(loss.item())
            snapshots[step] = params.graph.arrays()
    return losses, snapshots


def test_cross_entropy_only_run_matches_plain_training(tiny_train_config, tiny_corpus):
    # 24 examples in batches of 6: no trailing single to merge
    cfg = tiny_train_config.model_copy(update={"loss": LossWeights(alpha2=0.0, alpha3=0.0)})
    result = train(cfg, tiny_corpus)
    losses, snapshots = _cross_entropy_reference(cfg, tiny_corpus)

    assert len(result.log) == len(losses)
    for record, expected in zip(result.log, losses):
        assert abs(record.loss - expected) < 1e-12, record.step
        assert record.l_margin == 0.0 and record.l_ssl == 0.0
    reference = snapshots[result.best_step]
    for name, array in result.best.arrays.items():
        np.testing.assert_allclose(array, reference[name], rtol=0, atol=1e-12, err_msg=name)


def test_no_masking_leaves_ssl_head_untouched(tiny_train_config, tiny_corpus):
    cfg = tiny_train_config.model_copy(update={"p_mask": 0.0})
    params, items = _items(tiny_corpus, cfg)
    total, _, _, l_ssl = pipeline._batch_losses(params, cfg, items, np.arange(6), epoch=0)
    grads = ndiff.grad_of(total, params.graph)
    assert l_ssl.item() == 0.0
    np.testing.assert_array_equal(grads["ssl.w"], 0.0)


def test_full_masking_trains_ssl_head(tiny_train_config, tiny_corpus):
    cfg = tiny_train_config.model_copy(update={"p_mask": 1.0})
    params, items = _items(tiny_corpus, cfg)
    total, _, _, l_ssl = pipeline._batch_losses(params, cfg, items, np.arange(6), epoch=0)
    grads = ndiff.grad_of(total, params.graph)
    assert l_ssl.item() > 0.0
    assert np.any(grads["ssl.w"] != 0.0)


@pytest.mark.parametrize("n, batch_size, sizes", [(13, 6, [6, 7]), (7, 6, [7]), (25, 12, [12, 13]), (12, 6, [6, 6])])
def test_batches_merge_a_trailing_single(n, batch_size, sizes):
    batches = pipeline._batches(n, batch_size, np.random.default_rng(0))
    assert [len(b) for b in batches] == sizes
    assert sorted(np.concatenate(batches).tolist()) == list(range(n))


def test_non_finite_loss_aborts_with_step(monkeypatch, tiny_train_config, tiny_corpus):
    monkeypatch.setattr(pipeline, "total_loss", lambda *args: ndiff.Tensor(np.nan))
    with pytest.raises(NumericError, match="at step 0"):
        train(tiny_train_config, tiny_corpus)


def test_train_preconditions(tiny_train_config, tiny_corpus):
    with pytest.raises(PipelineError, match="empty val"):
        train(tiny_train_config, replace(tiny_corpus, val=[]))
    with pytest.raises(PipelineError, match="empty train"):
        train(tiny_train_config, replace(tiny_corpus, train=[]))
    with pytest.raises(PipelineError, match="dev_ood"):
        train(tiny_train_config.model_copy(update={"selection_metric": "val_maha_auroc"}), tiny_corpus)
    short = tiny_train_config.model_copy(
        update={"encoder": tiny_train_config.encoder.model_copy(update={"max_seq_len": 4})}
    )
    with pytest.raises(PipelineError, match="max_seq_len"):
        train(short, tiny_corpus)


def test_dev_ood_selection(tiny_train_config, tiny_corpus):
    corpus = replace(tiny_corpus, dev_ood=tiny_corpus.test_ood[:8])
    result = train(tiny_train_config.model_copy(update={"selection_metric": "val_maha_auroc"}), corpus)
    assert all(0.0 <= r.dev_maha_auroc <= 1.0 for r in result.evaluations)
    assert result.best_metric == max(r.dev_maha_auroc for r in result.evaluations)


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(betas=(0.9, 1.0))
    with pytest.raises(ValidationError):
        TrainConfig(p_mask=1.2)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=1)


def test_with_seed_sets_every_seed():
    cfg = pipeline.with_seed(TrainConfig(), 9)
    assert cfg.seed == cfg.encoder.seed == 9


def test_report_covers_every_scorer(trained, tiny_corpus):
    report = evaluate_run(trained, tiny_corpus)
    assert set(report.ood_sets) == {"test_ood"}
    assert set(report.ood_sets["test_ood"]) == set(det_mod.SCORERS)
    assert report.id_dataset == "test_id"
    assert report.detector.d == 32 and report.detector.view == "full"
    assert 0.0 <= report.id_accuracy <= 1.0
    assert any("unstable percentile" in w for w in report.warnings)


def test_identical_ood_set_is_chance(trained, tiny_corpus):
    report = evaluate(trained.best, tiny_corpus.test_id, {"same": tiny_corpus.test_id}, detector=trained.detector)
    for scorer, m in report.ood_sets["same"].items():
        assert m.auroc == 0.5, scorer


def test_cls_view_uses_global_block(trained, tiny_corpus):
    report = evaluate_run(trained, tiny_corpus, view="cls")
    assert report.detector.d == 8 and report.detector.view == "cls"
    with pytest.raises(PipelineError, match="unknown view"):
        evaluate_run(trained, tiny_corpus, view="roles")


def test_evaluation_is_deterministic(trained, tiny_corpus):
    assert evaluate_run(trained, tiny_corpus) == evaluate_run(trained, tiny_corpus)


def test_detector_width_mismatch(trained, tiny_corpus):
    other = det_mod.fit(np.random.default_rng(0).normal(size=(6, 5)), np.array([0, 1] * 3))
    with pytest.raises(PipelineError, match="dimension mismatch"):
        evaluate(trained.best, tiny_corpus.test_id, {"ood": tiny_corpus.test_ood}, detector=other)


def test_evaluate_fits_detector_when_missing(trained, tiny_corpus):
    fitted = evaluate(trained.best, tiny_corpus.test_id, {"ood": tiny_corpus.test_ood}, fit_examples=tiny_corpus.val)
    given = evaluate(trained.best, tiny_corpus.test_id, {"ood": tiny_corpus.test_ood}, detector=trained.detector)
    assert fitted.ood_sets == given.ood_sets
    with pytest.raises(PipelineError, match="fitted detector"):
        evaluate(trained.best, tiny_corpus.test_id, {"ood": tiny_corpus.test_ood})


def test_report_round_trip(tmp_path, trained, tiny_corpus):
    report = evaluate_run(trained, tiny_corpus)
    path = str(tmp_path / "report.json")
    pipeline.write_report(report, path)
    assert pipeline.load_report(path) == report
    document = json.loads(open(path, encoding="utf-8").read())
    assert {"id_dataset", "ood_sets", "config", "seed"} <= set(document)


def test_report_schema_requires_all_scorers():
    with pytest.raises(ValidationError, match="lacks scorers"):
        EvalReport(id_dataset="x", seed=0, ood_sets={"o": {"maha": {"auroc": 0.5, "far95": 0.5}}})


def test_saved_run_reproduces_evaluation(tmp_path, trained, tiny_corpus):
    run_dir = str(tmp_path / "run")
    pipeline.save_run(trained, run_dir)
    ckpt, detector, log = pipeline.load_run(run_dir)
    assert [r.loss for r in log] == [r.loss for r in trained.log]
    reloaded = evaluate(
        ckpt, tiny_corpus.test_id, {"test_ood": tiny_corpus.test_ood},
        detector=detector, run_config=trained.config.model_dump(mode="json"),
    )
    assert reloaded == evaluate_run(trained, tiny_corpus)


def test_evaluate_files(tmp_path, trained, tiny_corpus):
    run_dir = str(tmp_path / "run")
    pipeline.save_run(trained, run_dir)
    id_path, ood_path = str(tmp_path / "test_id.jsonl"), str(tmp_path / "ood.jsonl")
    # OOD lines in the ID file are ignored
    write_corpus(tiny_corpus.test_id + tiny_corpus.test_ood[:3], id_path)
    write_corpus(tiny_corpus.test_ood, ood_path)
    report_path = str(tmp_path / "report.json")
    report = pipeline.evaluate_files(run_dir, id_path, {"test_ood": ood_path}, report_path)
    assert os.path.exists(report_path)
    assert report.id_dataset == "test_id"
    assert report.ood_sets == evaluate_run(trained, tiny_corpus).ood_sets


def test_dump_fitted_detector_matches_training_detector(tmp_path, trained, tiny_corpus):
    emb = str(tmp_path / "val_emb.jsonl")
    export_embeddings(trained.best, tiny_corpus.val, emb)
    det = pipeline.fit_from_dump(emb, str(tmp_path / "det.json"), num_classes=2)
    assert det.classifier is None
    assert np.array_equal(det.class_means, trained.detector.class_means)
    assert np.array_equal(det.cov_pinv, trained.detector.cov_pinv)


def test_score_file(tmp_path, trained, tiny_corpus):
    emb = str(tmp_path / "ood_emb.jsonl")
    export_embeddings(trained.best, tiny_corpus.test_ood, emb)

    full_det = str(tmp_path / "full.json")
    det_mod.save_detector(trained.detector, full_det)
    table = pipeline.score_file(full_det, emb, str(tmp_path / "scores.csv"))
    assert list(table.columns) == ["id", "label", "msp", "energy", "maha", "cosine"]
    assert len(table) == len(tiny_corpus.test_ood)
    assert pd.read_csv(tmp_path / "scores.csv").shape == table.shape

    val_emb = str(tmp_path / "val_emb.jsonl")
    export_embeddings(trained.best, tiny_corpus.val, val_emb)
    bare_det = str(tmp_path / "bare.json")
    pipeline.fit_from_dump(val_emb, bare_det)
    assert list(pipeline.score_file(bare_det, emb).columns) == ["id", "label", "maha", "cosine"]


def test_fit_from_dump_needs_labelled_rows(tmp_path, trained, tiny_corpus):
    emb = str(tmp_path / "ood_emb.jsonl")
    export_embeddings(trained.best, tiny_corpus.test_ood, emb)
    with pytest.raises(PipelineError, match="no labelled ID"):
        pipeline.fit_from_dump(emb, str(tmp_path / "det.json"))


def test_sweep_mask(tiny_train_config, tiny_corpus):
    table = pipeline.sweep_mask(tiny_train_config.model_copy(update={"epochs": 1}), tiny_corpus, [0.0, 0.3])
    assert list(table.columns) == ["p_mask", "mean_auroc", "mean_far95", "val_accuracy", "max_ssl_loss"]
    assert table["p_mask"].tolist() == [0.0, 0.3]
    assert table["mean_auroc"].between(0.0, 1.0).all()
    assert table.loc[0, "max_ssl_loss"] == 0.0
    with pytest.raises(PipelineError, match="at least 2"):
        pipeline.sweep_mask(tiny_train_config, tiny_corpus, [0.3])
    with pytest.raises(PipelineError, match="invalid masking probability"):
        pipeline.sweep_mask(tiny_train_config, tiny_corpus, [1.5, 0.3])


def test_ablation_configs(tiny_train_config):
    base = pipeline.ablation_config(tiny_train_config, "baseline")
    assert not base.encoder.use_srl and base.loss.alpha3 == 0.0
    assert base.encoder.head_layers == tiny_train_config.encoder.head_layers
    assert base.loss.alpha2 == tiny_train_config.loss.alpha2
    srl = pipeline.ablation_config(tiny_train_config, "+srl")
    assert srl.encoder.use_srl and srl.loss.alpha3 == 0.0
    full = pipeline.ablation_config(tiny_train_config, "+srl+ssl")
    assert full.encoder.use_srl and full.loss.alpha3 == tiny_train_config.loss.alpha3
    with pytest.raises(PipelineError):
        pipeline.ablation_config(tiny_train_config, "+ssl")


def test_ablate_runs_every_stage(tiny_train_config, tiny_corpus):
    reports = pipeline.ablate(tiny_train_config.model_copy(update={"epochs": 1}), tiny_corpus)
    assert list(reports) == list(pipeline.ABLATION_STAGES)
    assert reports["baseline"].detector.d == 8
    assert reports["+srl"].detector.d == reports["+srl+ssl"].detector.d == 32


def test_run_experiment(tiny_train_config, tiny_corpus):
    result = pipeline.run_experiment(tiny_train_config.model_copy(update={"epochs": 1}), tiny_corpus, [0, 1])
    assert len(result.table) == 2 * 2 * 4
    assert set(result.reports) == {(s, v) for s in (0, 1) for v in pipeline.VIEWS}
    assert len(result.summary) == 2 * 4
    assert 0.0 <= result.median("full", "maha") <= 1.0
    with pytest.raises(PipelineError):
        result.median("full", "nope")


def test_train_to_dir_and_load(tmp_path, tiny_train_config, tiny_corpus):
    data_dir, run_dir = str(tmp_path / "data"), str(tmp_path / "run")
    write_dataset(tiny_corpus, data_dir)
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(tiny_train_config.model_copy(update={"epochs": 1}).model_dump_json())
    cfg = pipeline.load_train_config(str(cfg_path), seed=4)
    assert cfg.seed == cfg.encoder.seed == 4
    result = pipeline.train_to_dir(cfg, data_dir, run_dir)
    assert sorted(os.listdir(run_dir)) == ["checkpoint.json", "detector.json", "train_log.jsonl"]
    ckpt, _, _ = pipeline.load_run(run_dir)
    assert isinstance(ckpt, Checkpoint) and ckpt.step == result.best_step
    assert load_corpus(os.path.join(data_dir, "val.jsonl")) == tiny_corpus.val
