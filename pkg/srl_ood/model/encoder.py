"""Transformer encoder producing global and role-pooled sentence features.

A stand-in backbone (same block architecture as the head) embeds the tokens.
Masking happens between backbone and head: the backbone output rows of masked
roles are overwritten by a learned MASK vector before the head runs.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .. import config
from ..srl import MaskSpec, RoleSpans, SRLError
from . import ndiff
from .ndiff import Graph, Tensor

logger = logging.getLogger("srl-ood.encoder")

NUM_ROLES = 3


class EncoderError(Exception):
    """Exception raised for invalid encoder configurations or inputs."""
    pass


class EncoderConfig(BaseModel):
    """Shape of the encoder; ``vocab_size = 0`` means "take it from the vocabulary"."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    vocab_size: int = Field(0, ge=0)
    d_model: int = Field(32, ge=1)
    backbone_layers: int = Field(2, ge=0)
    head_layers: int = Field(3, ge=1)
    heads: int = Field(16, ge=1)
    ffn_mult: int = Field(2, ge=1)
    max_seq_len: int = Field(32, ge=2)
    seed: int = config.SEED
    use_srl: bool = True

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.d_model % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        return self

    @property
    def rep_dim(self) -> int:
        """Width of the sentence feature h."""
        return (1 + NUM_ROLES) * self.d_model if self.use_srl else self.d_model


@dataclass
class EncoderParams:
    """Named parameters of one encoder plus the shape they were built for."""

    config: EncoderConfig
    num_classes: int
    graph: Graph

    def __getitem__(self, name: str) -> Tensor:
        return self.graph[name]

    def layer_prefixes(self, stack: str) -> List[str]:
        count = self.config.backbone_layers if stack == "backbone" else self.config.head_layers
        return [f"{stack}.{i}" for i in range(count)]


@dataclass
class Representation:
    """Global [CLS] state, role means and their concatenation h."""

    h_cls: Tensor
    mu_a0: Tensor
    mu_v: Tensor
    mu_a1: Tensor
    h: Tensor

    def features(self, use_srl: bool = True) -> Tensor:
        return self.h if use_srl else self.h_cls


def init_params(cfg: EncoderConfig, num_classes: int) -> EncoderParams:
    """Deterministic initialization from ``cfg.seed``.

    Weights and embeddings are uniform in +-1/sqrt(d_model); layer-norm gains
    start at 1 and every bias at 0.
    """
    if cfg.d_model % cfg.heads:
        raise EncoderError(f"heads ({cfg.heads}) must divide d_model ({cfg.d_model})")
    if cfg.vocab_size < 1:
        raise EncoderError("vocab_size must be set before initializing parameters")
    if num_classes < 2:
        raise EncoderError(f"need at least 2 classes, got {num_classes}")

    rng = np.random.default_rng(cfg.seed)
    d = cfg.d_model
    bound = 1.0 / np.sqrt(d)
    graph = Graph()

    def uniform(*shape):
        return rng.uniform(-bound, bound, size=shape)

    graph.register("tok_emb", uniform(cfg.vocab_size, d))
    graph.register("pos_emb", uniform(cfg.max_seq_len, d))
    graph.register("mask_vec", uniform(d))
    for stack, count in (("backbone", cfg.backbone_layers), ("head", cfg.head_layers)):
        for i in range(count):
            prefix = f"{stack}.{i}"
            for proj in ("wq", "wk", "wv", "wo"):
                graph.register(f"{prefix}.attn.{proj}", uniform(d, d))
                graph.register(f"{prefix}.attn.b{proj[1]}", np.zeros(d))
            graph.register(f"{prefix}.ln1.gamma", np.ones(d))
            graph.register(f"{prefix}.ln1.beta", np.zeros(d))
            graph.register(f"{prefix}.ffn.w1", uniform(d, d * cfg.ffn_mult))
            graph.register(f"{prefix}.ffn.b1", np.zeros(d * cfg.ffn_mult))
            graph.register(f"{prefix}.ffn.w2", uniform(d * cfg.ffn_mult, d))
            graph.register(f"{prefix}.ffn.b2", np.zeros(d))
            graph.register(f"{prefix}.ln2.gamma", np.ones(d))
            graph.register(f"{prefix}.ln2.beta", np.zeros(d))
    graph.register("cls.w", uniform(num_classes, cfg.rep_dim))
    graph.register("ssl.w", uniform(NUM_ROLES, d))

    logger.debug(
        "Initialized encoder with %d tensors (%d values)",
        len(graph.params), sum(t.data.size for t in graph.params.values()),
    )
    return EncoderParams(config=cfg, num_classes=num_classes, graph=graph)


def _linear(x: Tensor, params: EncoderParams, weight: str, bias: str) -> Tensor:
    return ndiff.add_rows(ndiff.matmul(x, params[weight]), params[bias])


def transformer_block(x: Tensor, params: EncoderParams, prefix: str) -> Tensor:
    """Post-norm self-attention block followed by a GELU feed-forward block."""
    heads = params.config.heads
    dh = params.config.d_model // heads
    q = ndiff.split_heads(_linear(x, params, f"{prefix}.attn.wq", f"{prefix}.attn.bq"), heads)
    k = ndiff.split_heads(_linear(x, params, f"{prefix}.attn.wk", f"{prefix}.attn.bk"), heads)
    v = ndiff.split_heads(_linear(x, params, f"{prefix}.attn.wv", f"{prefix}.attn.bv"), heads)
    scores = ndiff.scale(ndiff.matmul(q, ndiff.transpose(k)), 1.0 / np.sqrt(dh))
    attended = ndiff.merge_heads(ndiff.matmul(ndiff.softmax_rows(scores), v))
    out = _linear(attended, params, f"{prefix}.attn.wo", f"{prefix}.attn.bo")
    x = ndiff.layer_norm(ndiff.add(x, out), params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"])

    hidden = ndiff.gelu(_linear(x, params, f"{prefix}.ffn.w1", f"{prefix}.ffn.b1"))
    out = _linear(hidden, params, f"{prefix}.ffn.w2", f"{prefix}.ffn.b2")
    return ndiff.layer_norm(ndiff.add(x, out), params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"])


def run_backbone(tokens: Sequence[int], params: EncoderParams) -> Tensor:
    """Embed token ids and run the backbone stack; returns T x d_model."""
    cfg = params.config
    ids = [int(t) for t in tokens]
    if not ids:
        raise EncoderError("empty token sequence")
    if len(ids) > cfg.max_seq_len:
        raise EncoderError(f"sequence of length {len(ids)} exceeds max_seq_len {cfg.max_seq_len}")
    bad = [t for t in ids if not 0 <= t < cfg.vocab_size]
    if bad:
        raise EncoderError(f"unknown token id(s) {bad} for vocabulary of size {cfg.vocab_size}")
    if ids[0] != config.CLS_ID:
        raise EncoderError(f"position 0 must hold the [CLS] id {config.CLS_ID}, got {ids[0]}")

    x = ndiff.add(
        ndiff.embed(params["tok_emb"], ids),
        ndiff.embed(params["pos_emb"], range(len(ids))),
    )
    for prefix in params.layer_prefixes("backbone"):
        x = transformer_block(x, params, prefix)
    return x


def run_head(x: Tensor, params: EncoderParams, mask_spec: Optional[MaskSpec] = None) -> Tensor:
    """Apply the optional mask to backbone rows, then run the head stack."""
    if mask_spec is not None and mask_spec.positions:
        rows = x.shape[0]
        bad = [p for p in mask_spec.positions if not 0 < p < rows]
        if bad:
            raise EncoderError(f"mask position(s) {bad} outside 1..{rows - 1}")
        x = ndiff.replace_rows(x, params["mask_vec"], mask_spec.positions)
    for prefix in params.layer_prefixes("head"):
        x = transformer_block(x, params, prefix)
    return x


def encode(
    tokens: Sequence[int], params: EncoderParams, mask_spec: Optional[MaskSpec] = None
) -> Tuple[Tensor, Tensor]:
    """Hidden states H (T x d_model) and the [CLS] vector H[0]."""
    H = run_head(run_backbone(tokens, params), params, mask_spec)
    return H, ndiff.mean_over_indices(H, [0])


def pool_and_concat(H: Tensor, h_cls: Tensor, spans: RoleSpans) -> Representation:
    """Role means of H and h = [h_cls; mu_A0; mu_V; mu_A1]; absent roles pool to zeros."""
    rows, width = H.shape
    try:
        spans.check_length(rows)
    except SRLError as e:
        raise EncoderError(str(e))

    def pooled(idx):
        return ndiff.mean_over_indices(H, idx) if idx else Tensor(np.zeros(width))

    mu_a0, mu_v, mu_a1 = pooled(spans.a0), pooled(spans.v), pooled(spans.a1)
    h = ndiff.concat([h_cls, mu_a0, mu_v, mu_a1])
    return Representation(h_cls=h_cls, mu_a0=mu_a0, mu_v=mu_v, mu_a1=mu_a1, h=h)


def id_logits(h: Tensor, params: EncoderParams) -> Tensor:
    """Bias-free class logits W h."""
    expected = (params.config.rep_dim,)
    if h.shape != expected:
        raise EncoderError(f"feature shape {h.shape} does not match classifier input {expected}")
    return ndiff.matmul(params["cls.w"], h)


def ssl_logits(masked_mean: Tensor, params: EncoderParams) -> Tensor:
    """Three-way role logits for the mean head output over one masked role."""
    expected = (params.config.d_model,)
    if masked_mean.shape != expected:
        raise EncoderError(f"masked mean shape {masked_mean.shape} does not match {expected}")
    return ndiff.matmul(params["ssl.w"], masked_mean)


def featurize(
    params: EncoderParams, items: Sequence[Tuple[Sequence[int], RoleSpans]]
) -> Tuple[np.ndarray, np.ndarray]:
    """Unmasked features (N x rep_dim) and class logits (N x C) for a batch."""
    use_srl = params.config.use_srl
    features = np.zeros((len(items), params.config.rep_dim))
    logits = np.zeros((len(items), params.num_classes))
    with ndiff.no_grad():
        for i, (ids, spans) in enumerate(items):
            H, h_cls = encode(ids, params)
            h = pool_and_concat(H, h_cls, spans).features(use_srl)
            features[i] = h.data
            logits[i] = id_logits(h, params).data
    return features, logits
