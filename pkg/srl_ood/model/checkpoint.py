"""Checkpoint persistence.

A checkpoint is one JSON document holding the encoder config, the vocabulary,
the step counter and every named parameter array. Floats are written with
round-trip precision, so a reload reproduces the parameters bit for bit.
"""

import json
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Literal

import numpy as np
from pydantic import BaseModel, ValidationError

from .. import config
from .encoder import EncoderConfig, EncoderParams, init_params
from .ndiff import NdiffError

logger = logging.getLogger("srl-ood.checkpoint")


class CheckpointError(Exception):
    """Exception raised for unreadable or inconsistent checkpoints."""
    pass


class ArrayRecord(BaseModel):
    shape: List[int]
    data: List[float]


class CheckpointFile(BaseModel):
    format: Literal["SRLOOD-CKPT-v1"]
    encoder_config: EncoderConfig
    num_classes: int
    vocab: List[str]
    step: int
    params: Dict[str, ArrayRecord]


@dataclass
class Checkpoint:
    """Frozen snapshot of an encoder: config, vocabulary, step and parameter arrays."""

    config: EncoderConfig
    num_classes: int
    vocab: List[str]
    step: int
    arrays: Dict[str, np.ndarray]

    @classmethod
    def from_params(cls, params: EncoderParams, vocab: List[str], step: int) -> "Checkpoint":
        return cls(
            config=params.config,
            num_classes=params.num_classes,
            vocab=list(vocab),
            step=step,
            arrays=params.graph.arrays(),
        )

    def to_params(self) -> EncoderParams:
        params = init_params(self.config, self.num_classes)
        try:
            params.graph.load_arrays(self.arrays)
        except NdiffError as e:
            raise CheckpointError(f"checkpoint does not fit its own config: {e}")
        return params


def save_checkpoint(ckpt: Checkpoint, path: str):
    document = {
        "format": config.CKPT_FORMAT,
        "encoder_config": ckpt.config.model_dump(mode="json"),
        "num_classes": ckpt.num_classes,
        "vocab": ckpt.vocab,
        "step": ckpt.step,
        "params": {
            name: {"shape": list(array.shape), "data": array.reshape(-1).tolist()}
            for name, array in ckpt.arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f)
    logger.info("Checkpoint (step %d) saved to %s", ckpt.step, path)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = CheckpointFile.model_validate(json.load(f))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    arrays = {}
    for name, record in document.params.items():
        if any(n < 0 for n in record.shape) or len(record.data) != math.prod(record.shape):
            raise CheckpointError(
                f"parameter {name} in {path}: {len(record.data)} values do not fill shape {record.shape}"
            )
        arrays[name] = np.asarray(record.data, dtype=np.float64).reshape(record.shape)
    return Checkpoint(
        config=document.encoder_config,
        num_classes=document.num_classes,
        vocab=document.vocab,
        step=document.step,
        arrays=arrays,
    )
