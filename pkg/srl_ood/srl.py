"""Semantic role spans: rule-based tagging, span-file ingestion and mask sampling.

Only the three PropBank roles A0 (proto-agent), V (predicate) and A1
(proto-patient) are modelled, one predicate frame per sentence.
"""

import json
import logging
import zlib
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

logger = logging.getLogger("srl-ood.srl")

ROLES = ("A0", "V", "A1")
ROLE_LABELS = {role: i for i, role in enumerate(ROLES)}


class SRLError(Exception):
    """Exception raised for invalid role spans, lexicons or span files."""
    pass


def _as_index_tuple(indices: Iterable[int]) -> Tuple[int, ...]:
    return tuple(sorted({int(i) for i in indices}))


@dataclass(frozen=True)
class RoleSpans:
    """Token indices of A0, V and A1 in one sentence ([CLS] at 0 is never a role)."""

    a0: Tuple[int, ...] = ()
    v: Tuple[int, ...] = ()
    a1: Tuple[int, ...] = ()

    def __post_init__(self):
        for attr in ("a0", "v", "a1"):
            object.__setattr__(self, attr, _as_index_tuple(getattr(self, attr)))
        sets = [set(self.a0), set(self.v), set(self.a1)]
        for i in range(3):
            for j in range(i + 1, 3):
                shared = sets[i] & sets[j]
                if shared:
                    raise SRLError(
                        f"overlapping roles: {ROLES[i]} and {ROLES[j]} share {sorted(shared)}"
                    )
        for role, idx in zip(ROLES, (self.a0, self.v, self.a1)):
            if idx and idx[0] <= 0:
                raise SRLError(f"role {role} uses index {idx[0]}; position 0 is reserved for [CLS]")

    def role(self, name: str) -> Tuple[int, ...]:
        try:
            return {"A0": self.a0, "V": self.v, "A1": self.a1}[name]
        except KeyError:
            raise SRLError(f"unknown role {name}")

    def present_roles(self) -> List[str]:
        return [r for r in ROLES if self.role(r)]

    def check_length(self, length: int):
        """Raise if any index falls outside a sentence of ``length`` tokens."""
        for role in ROLES:
            idx = self.role(role)
            if idx and idx[-1] >= length:
                raise SRLError(f"role {role} index {idx[-1]} outside sentence of length {length}")

    def to_dict(self) -> Dict[str, List[int]]:
        return {"A0": list(self.a0), "V": list(self.v), "A1": list(self.a1)}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[int]]) -> "RoleSpans":
        return cls(a0=data.get("A0", ()), v=data.get("V", ()), a1=data.get("A1", ()))


@dataclass(frozen=True)
class RoleLexicon:
    """Content words partitioned into agent nouns, verbs and patient nouns."""

    agents: FrozenSet[str] = field(default_factory=frozenset)
    verbs: FrozenSet[str] = field(default_factory=frozenset)
    patients: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        for attr in ("agents", "verbs", "patients"):
            object.__setattr__(self, attr, frozenset(getattr(self, attr)))

    def validate(self):
        parts = (("A0", self.agents), ("V", self.verbs), ("A1", self.patients))
        for i in range(3):
            for j in range(i + 1, 3):
                shared = parts[i][1] & parts[j][1]
                if shared:
                    raise SRLError(
                        f"ambiguous-lexicon: {sorted(shared)} listed under both "
                        f"{parts[i][0]} and {parts[j][0]}"
                    )

    def role_of(self, token: str) -> Optional[str]:
        if token in self.agents:
            return "A0"
        if token in self.verbs:
            return "V"
        if token in self.patients:
            return "A1"
        return None

    def words(self) -> FrozenSet[str]:
        return self.agents | self.verbs | self.patients

    def to_dict(self) -> Dict[str, List[str]]:
        return {"A0": sorted(self.agents), "V": sorted(self.verbs), "A1": sorted(self.patients)}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[str]]) -> "RoleLexicon":
        lexicon = cls(agents=data.get("A0", ()), verbs=data.get("V", ()), patients=data.get("A1", ()))
        lexicon.validate()
        return lexicon


@dataclass(frozen=True)
class MaskSpec:
    """Roles whose backbone rows get replaced by the MASK vector, with SSL targets."""

    masked_roles: Tuple[str, ...] = ()
    positions: Tuple[int, ...] = ()
    targets: Tuple[int, ...] = ()
    role_positions: Tuple[Tuple[int, ...], ...] = ()

    @classmethod
    def from_roles(cls, spans: RoleSpans, roles: Sequence[str]) -> "MaskSpec":
        role_positions = tuple(spans.role(r) for r in roles)
        positions = _as_index_tuple(i for idx in role_positions for i in idx)
        return cls(
            masked_roles=tuple(roles),
            positions=positions,
            targets=tuple(ROLE_LABELS[r] for r in roles),
            role_positions=role_positions,
        )

    @property
    def empty(self) -> bool:
        return not self.positions


def tag_rules(tokens: Sequence[str], lexicon: RoleLexicon) -> RoleSpans:
    """Tag A0/V/A1 by lexicon lookup; fillers and punctuation get no role."""
    lexicon.validate()
    spans = {role: [] for role in ROLES}
    for i, token in enumerate(tokens):
        if i == 0:
            continue
        role = lexicon.role_of(token)
        if role is not None:
            spans[role].append(i)
    return RoleSpans.from_dict(spans)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, keys...); string keys are hashed stably."""
    entropy = [int(seed)]
    for key in keys:
        entropy.append(zlib.crc32(key.encode("utf-8")) if isinstance(key, str) else int(key))
    return np.random.default_rng(entropy)


def sample_mask(spans: RoleSpans, p_mask: float, rng: np.random.Generator) -> MaskSpec:
    """Mask each present role, in full, with independent probability ``p_mask``.

    One uniform draw is consumed per role whether or not the role is present, so
    the stream stays aligned across sentences.
    """
    if not 0.0 <= p_mask <= 1.0:
        raise SRLError(f"masking probability must lie in [0, 1], got {p_mask}")
    draws = rng.random(len(ROLES))
    chosen = [role for role, u in zip(ROLES, draws) if spans.role(role) and u < p_mask]
    return MaskSpec.from_roles(spans, chosen)


class SpanRecord(BaseModel):
    """One line of a span file."""

    model_config = ConfigDict(extra="forbid")

    id: str
    A0: List[int] = Field(default_factory=list)
    V: List[int] = Field(default_factory=list)
    A1: List[int] = Field(default_factory=list)


def load_spans(path: str) -> Dict[str, RoleSpans]:
    """Read a JSONL span file into example id -> RoleSpans."""
    spans: Dict[str, RoleSpans] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = SpanRecord.model_validate_json(line)
            except ValidationError as e:
                raise SRLError(f"{path}: line {line_no}: malformed span record: {e}")
            if record.id in spans:
                raise SRLError(f"{path}: line {line_no}: duplicate example id {record.id}")
            try:
                spans[record.id] = RoleSpans(a0=record.A0, v=record.V, a1=record.A1)
            except SRLError as e:
                raise SRLError(f"example {record.id}: {e}")
    logger.debug("Loaded spans for %d examples from %s", len(spans), path)
    return spans


def write_spans(spans: Dict[str, RoleSpans], path: str):
    """Write id -> RoleSpans as a JSONL span file."""
    with open(path, "w", encoding="utf-8") as f:
        for example_id, role_spans in spans.items():
            f.write(json.dumps({"id": example_id, **role_spans.to_dict()}) + "\n")
