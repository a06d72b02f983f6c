"""Synthetic corpora with gold role spans, the vocabulary, and file formats.

ID sentences follow templates such as ``F A0 F V F A1 F P``: ``F`` is an
optional filler word, ``A0``/``V``/``A1`` are content words from one class's
lexicon and ``P`` is closing punctuation. The class of a sentence is the
lexicon cluster its content words come from. OOD sentences come in three kinds:

    disjoint-lexicon  content words drawn from held-out vocabulary
    role-swap         class-c agents with class-c' verbs and patients (c != c')
    filler-only       a few fillers and punctuation, no roles at all
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import config
from .model.encoder import EncoderError, featurize
from .srl import ROLES, RoleLexicon, RoleSpans, SRLError, derive_rng

logger = logging.getLogger("srl-ood.data")

DEFAULT_FILLERS = ["the", "a", "this", "that", "really", "slowly", "quite", "so", "um", "well", "just", "very"]
DEFAULT_PUNCTUATION = [".", "!", "?"]
DEFAULT_TEMPLATES = ["F A0 F V F A1 F P", "F F A0 V F A1 P", "A0 F F V A1 F P"]
TEMPLATE_SLOTS = {"F", "A0", "V", "A1", "P"}
SPLITS = ("train", "val", "test_id", "test_ood", "dev_ood")
ATTEMPTS_PER_EXAMPLE = 50


class DataError(Exception):
    """Exception raised for corpus generation, parsing or validation errors."""
    pass


class CorpusSpec(BaseModel):
    """Parameters of a synthetic corpus."""

    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(4, ge=2)
    train: int = Field(200, ge=2)
    val: int = Field(100, ge=1)
    test_id: int = Field(200, ge=1)
    test_ood: int = Field(200, ge=1)
    dev_ood: int = Field(0, ge=0)
    agents_per_class: int = Field(6, ge=1)
    verbs_per_class: int = Field(6, ge=1)
    patients_per_class: int = Field(6, ge=1)
    ood_lexicon_size: int = Field(6, ge=1)
    fillers: List[str] = Field(default_factory=lambda: list(DEFAULT_FILLERS), min_length=1)
    punctuation: List[str] = Field(default_factory=lambda: list(DEFAULT_PUNCTUATION), min_length=1)
    filler_rate: float = Field(0.5, ge=0.0, le=1.0)
    templates: List[str] = Field(default_factory=lambda: list(DEFAULT_TEMPLATES), min_length=1)
    ood_kind: Literal["disjoint-lexicon", "role-swap", "filler-only"] = "disjoint-lexicon"
    seed: int = config.SEED

    @field_validator("templates")
    @classmethod
    def _check_templates(cls, templates):
        for template in templates:
            slots = template.split()
            unknown = set(slots) - TEMPLATE_SLOTS
            if unknown:
                raise ValueError(f"template {template!r} has unknown slots {sorted(unknown)}")
            roles = [s for s in slots if s in ROLES]
            if roles != list(ROLES):
                raise ValueError(f"template {template!r} must hold A0, V, A1 once each, in that order")
            if slots.count("P") != 1 or slots[-1] != "P":
                raise ValueError(f"template {template!r} must end with exactly one P")
        return templates

    @model_validator(mode="after")
    def _check_words(self):
        if set(self.fillers) & set(self.punctuation):
            raise ValueError("fillers and punctuation must be disjoint")
        if config.CLS_TOKEN in self.fillers or config.UNK_TOKEN in self.fillers:
            raise ValueError("special tokens cannot be fillers")
        if self.val < self.num_classes or self.train < self.num_classes:
            raise ValueError("train and val need at least one example per class")
        return self


@dataclass
class Example:
    id: str
    tokens: List[str]
    label: int
    spans: RoleSpans

    @property
    def is_ood(self) -> bool:
        return self.label == config.OOD_LABEL

    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class Corpus:
    """All splits of a dataset plus the role lexicon that produced the spans."""

    train: List[Example]
    val: List[Example]
    test_id: List[Example]
    test_ood: List[Example]
    dev_ood: List[Example] = field(default_factory=list)
    lexicon: Optional[RoleLexicon] = None
    spec: Optional[CorpusSpec] = None

    @property
    def num_classes(self) -> int:
        if self.spec is not None:
            return self.spec.num_classes
        labels = [ex.label for ex in self.train + self.val if not ex.is_ood]
        if not labels:
            raise DataError("cannot infer the class count from empty train/val splits")
        return max(labels) + 1

    def splits(self) -> Dict[str, List[Example]]:
        return {name: getattr(self, name) for name in SPLITS}


class Vocabulary:
    """Token <-> id map with ``[CLS]`` = 0 and ``[UNK]`` = 1."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [config.CLS_TOKEN, config.UNK_TOKEN]:
            raise DataError(f"vocabulary must start with {config.CLS_TOKEN}, {config.UNK_TOKEN}")
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary has duplicate tokens")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, examples: Iterable[Example], extra_words: Iterable[str] = ()) -> "Vocabulary":
        specials = {config.CLS_TOKEN, config.UNK_TOKEN}
        words: Set[str] = set(extra_words)
        for ex in examples:
            words.update(ex.tokens)
        return cls([config.CLS_TOKEN, config.UNK_TOKEN] + sorted(words - specials))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.index.get(t, config.UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def class_lexicons(spec: CorpusSpec) -> List[Dict[str, List[str]]]:
    """Per-class agent/verb/patient word lists."""
    return [
        {
            "A0": [f"ag{c}_{k}" for k in range(spec.agents_per_class)],
            "V": [f"vb{c}_{k}" for k in range(spec.verbs_per_class)],
            "A1": [f"pt{c}_{k}" for k in range(spec.patients_per_class)],
        }
        for c in range(spec.num_classes)
    ]


def held_out_lexicon(spec: CorpusSpec) -> Dict[str, List[str]]:
    n = spec.ood_lexicon_size
    return {
        "A0": [f"agx_{k}" for k in range(n)],
        "V": [f"vbx_{k}" for k in range(n)],
        "A1": [f"ptx_{k}" for k in range(n)],
    }


def role_lexicon(spec: CorpusSpec) -> RoleLexicon:
    """Every content word of the corpus, ID and held-out, by role."""
    words = {role: [] for role in ROLES}
    for lex in class_lexicons(spec) + [held_out_lexicon(spec)]:
        for role in ROLES:
            words[role].extend(lex[role])
    lexicon = RoleLexicon(agents=words["A0"], verbs=words["V"], patients=words["A1"])
    lexicon.validate()
    clash = lexicon.words() & (set(spec.fillers) | set(spec.punctuation))
    if clash:
        raise DataError(f"filler/punctuation words {sorted(clash)} collide with the lexicon")
    return lexicon


def id_capacity(spec: CorpusSpec) -> int:
    """Upper bound on distinct ID sentences the spec can produce."""
    n_fill = len(spec.fillers)
    if spec.filler_rate == 0.0:
        options = 1
    elif spec.filler_rate == 1.0:
        options = n_fill
    else:
        options = n_fill + 1
    variants = sum(options ** t.split().count("F") for t in spec.templates)
    per_class = spec.agents_per_class * spec.verbs_per_class * spec.patients_per_class
    return spec.num_classes * per_class * variants * len(spec.punctuation)


def _realize(
    spec: CorpusSpec, template: str, words: Dict[str, str], rng: np.random.Generator
) -> Tuple[List[str], RoleSpans]:
    tokens = [config.CLS_TOKEN]
    spans = {role: [] for role in ROLES}
    for slot in template.split():
        if slot == "F":
            if rng.random() < spec.filler_rate:
                tokens.append(spec.fillers[rng.integers(len(spec.fillers))])
        elif slot == "P":
            tokens.append(spec.punctuation[rng.integers(len(spec.punctuation))])
        else:
            spans[slot].append(len(tokens))
            tokens.append(words[slot])
    return tokens, RoleSpans.from_dict(spans)


def _pick(lex: Dict[str, List[str]], rng: np.random.Generator) -> Dict[str, str]:
    return {role: lex[role][rng.integers(len(lex[role]))] for role in ROLES}


class _Generator:
    def __init__(self, spec: CorpusSpec):
        self.spec = spec
        self.classes = class_lexicons(spec)
        self.held_out = held_out_lexicon(spec)
        self.seen: Set[str] = set()

    def _unique(self, example_id: str, label: int, draw) -> Example:
        for attempt in range(ATTEMPTS_PER_EXAMPLE):
            tokens, spans = draw(attempt)
            key = " ".join(tokens)
            if key not in self.seen:
                self.seen.add(key)
                return Example(id=example_id, tokens=tokens, label=label, spans=spans)
        raise DataError(
            f"lexicon too small: no unique sentence for {example_id} after "
            f"{ATTEMPTS_PER_EXAMPLE} attempts; enlarge the lexicons or templates"
        )

    def templated(self, rng, words_for):
        def draw(attempt):
            template = self.spec.templates[rng.integers(len(self.spec.templates))]
            return _realize(self.spec, template, words_for(attempt), rng)
        return draw

    def id_split(self, name: str, size: int) -> List[Example]:
        rng = derive_rng(self.spec.seed, "corpus", name)
        labels = rng.permutation(np.arange(size) % self.spec.num_classes)
        return [
            self._unique(
                f"{name}-{i:05d}", int(c),
                self.templated(rng, lambda _, c=int(c): _pick(self.classes[c], rng)),
            )
            for i, c in enumerate(labels)
        ]

    def ood_split(self, name: str, size: int) -> List[Example]:
        rng = derive_rng(self.spec.seed, "corpus", name)
        kind = self.spec.ood_kind
        out = []
        for i in range(size):
            if kind == "disjoint-lexicon":
                draw = self.templated(rng, lambda _: _pick(self.held_out, rng))
            elif kind == "role-swap":
                draw = self.templated(rng, lambda attempt, i=i: self._swapped(i, attempt, rng))
            else:
                draw = self._filler_only(rng)
            out.append(self._unique(f"{name}-{i:05d}", config.OOD_LABEL, draw))
        return out

    def _swapped(self, i: int, attempt: int, rng) -> Dict[str, str]:
        """Agent from class c, verb and patient from class c' != c.

        First attempts walk the word lists with a counter so every content word
        of every class shows up in each role.
        """
        C = self.spec.num_classes
        c, k = i % C, i // C
        c_swap = (c + 1 + k % (C - 1)) % C
        agents = self.classes[c]["A0"]
        verbs = self.classes[c_swap]["V"]
        patients = self.classes[c_swap]["A1"]
        if attempt == 0:
            return {"A0": agents[k % len(agents)], "V": verbs[k % len(verbs)], "A1": patients[k % len(patients)]}
        return {
            "A0": agents[rng.integers(len(agents))],
            "V": verbs[rng.integers(len(verbs))],
            "A1": patients[rng.integers(len(patients))],
        }

    def _filler_only(self, rng):
        def draw(_):
            count = int(rng.integers(3, 6))
            tokens = [config.CLS_TOKEN]
            tokens += [self.spec.fillers[rng.integers(len(self.spec.fillers))] for _ in range(count)]
            tokens.append(self.spec.punctuation[rng.integers(len(self.spec.punctuation))])
            return tokens, RoleSpans()
        return draw


def gen_corpus(spec: CorpusSpec) -> Corpus:
    """Generate every split of ``spec``; sentences are unique across splits."""
    needed = spec.train + spec.val + spec.test_id
    capacity = id_capacity(spec)
    if needed > capacity:
        raise DataError(
            f"lexicon too small: {needed} ID sentences requested but at most {capacity} are distinct"
        )
    lexicon = role_lexicon(spec)
    gen = _Generator(spec)
    corpus = Corpus(
        train=gen.id_split("train", spec.train),
        val=gen.id_split("val", spec.val),
        test_id=gen.id_split("test_id", spec.test_id),
        test_ood=gen.ood_split("test_ood", spec.test_ood),
        dev_ood=gen.ood_split("dev_ood", spec.dev_ood),
        lexicon=lexicon,
        spec=spec,
    )
    logger.info(
        "Generated corpus: %d train, %d val, %d test_id, %d %s OOD (seed %d)",
        len(corpus.train), len(corpus.val), len(corpus.test_id), len(corpus.test_ood),
        spec.ood_kind, spec.seed,
    )
    return corpus


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


class SpanSets(BaseModel):
    model_config = ConfigDict(extra="forbid")

    A0: List[int] = Field(default_factory=list)
    V: List[int] = Field(default_factory=list)
    A1: List[int] = Field(default_factory=list)


class ExampleRecord(BaseModel):
    """One line of a corpus JSONL file."""

    model_config = ConfigDict(extra="forbid")

    id: str
    tokens: List[str] = Field(min_length=1)
    label: int = Field(ge=config.OOD_LABEL)
    srl: SpanSets = Field(default_factory=SpanSets)


def _to_record(ex: Example) -> Dict:
    return {"id": ex.id, "tokens": ex.tokens, "label": ex.label, "srl": ex.spans.to_dict()}


def write_corpus(examples: Sequence[Example], path: str):
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(_to_record(ex)) + "\n")
    logger.debug("Wrote %d examples to %s", len(examples), path)


def load_corpus(path: str) -> List[Example]:
    """Read and validate a corpus JSONL file."""
    examples: List[Example] = []
    seen: Set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = ExampleRecord.model_validate_json(line)
            except ValidationError as e:
                raise DataError(f"{path}: line {line_no}: malformed example: {e}")
            if record.id in seen:
                raise DataError(f"{path}: line {line_no}: duplicate example id {record.id}")
            seen.add(record.id)
            if record.tokens[0] != config.CLS_TOKEN:
                raise DataError(f"example {record.id}: tokens must start with {config.CLS_TOKEN}")
            try:
                spans = RoleSpans.from_dict(record.srl.model_dump())
                spans.check_length(len(record.tokens))
            except SRLError as e:
                raise DataError(f"example {record.id}: {e}")
            examples.append(Example(id=record.id, tokens=record.tokens, label=record.label, spans=spans))
    return examples


def split_by_label(examples: Sequence[Example]) -> Tuple[List[Example], List[Example]]:
    """(ID examples, OOD examples) by the OOD marker label."""
    return [ex for ex in examples if not ex.is_ood], [ex for ex in examples if ex.is_ood]


def apply_spans(examples: Sequence[Example], spans: Dict[str, RoleSpans]) -> List[Example]:
    """Replace gold spans with externally produced ones (e.g. from a span file)."""
    out = []
    for ex in examples:
        if ex.id not in spans:
            raise DataError(f"example {ex.id}: no spans in the span file")
        try:
            spans[ex.id].check_length(len(ex.tokens))
        except SRLError as e:
            raise DataError(f"example {ex.id}: {e}")
        out.append(Example(id=ex.id, tokens=ex.tokens, label=ex.label, spans=spans[ex.id]))
    return out


def write_dataset(corpus: Corpus, directory: str):
    """Lay a corpus out as ``<split>.jsonl`` files plus lexicon.json and spec.json."""
    os.makedirs(directory, exist_ok=True)
    for name, examples in corpus.splits().items():
        if name == "dev_ood" and not examples:
            continue
        write_corpus(examples, os.path.join(directory, f"{name}.jsonl"))
    if corpus.lexicon is not None:
        with open(os.path.join(directory, "lexicon.json"), "w", encoding="utf-8") as f:
            json.dump(corpus.lexicon.to_dict(), f, indent=2)
    if corpus.spec is not None:
        with open(os.path.join(directory, "spec.json"), "w", encoding="utf-8") as f:
            f.write(corpus.spec.model_dump_json(indent=2))
    logger.info("Dataset written to %s", directory)


def load_dataset(directory: str) -> Corpus:
    """Read a directory written by :func:`write_dataset`; lexicon and spec are optional."""
    def split(name: str, required: bool) -> List[Example]:
        path = os.path.join(directory, f"{name}.jsonl")
        if not os.path.exists(path):
            if required:
                raise DataError(f"{directory}: missing {name}.jsonl")
            return []
        return load_corpus(path)

    lexicon = None
    lexicon_path = os.path.join(directory, "lexicon.json")
    if os.path.exists(lexicon_path):
        with open(lexicon_path, "r", encoding="utf-8") as f:
            try:
                lexicon = RoleLexicon.from_dict(json.load(f))
            except (json.JSONDecodeError, SRLError) as e:
                raise DataError(f"{lexicon_path}: {e}")
    spec = None
    spec_path = os.path.join(directory, "spec.json")
    if os.path.exists(spec_path):
        with open(spec_path, "r", encoding="utf-8") as f:
            try:
                spec = CorpusSpec.model_validate_json(f.read())
            except ValidationError as e:
                raise DataError(f"{spec_path}: {e}")

    corpus = Corpus(
        train=split("train", True),
        val=split("val", True),
        test_id=split("test_id", False),
        test_ood=split("test_ood", False),
        dev_ood=split("dev_ood", False),
        lexicon=lexicon,
        spec=spec,
    )
    ids = [ex.id for examples in corpus.splits().values() for ex in examples]
    if len(set(ids)) != len(ids):
        raise DataError(f"{directory}: example ids repeat across splits")
    return corpus


# ---------------------------------------------------------------------------
# embedding dumps
# ---------------------------------------------------------------------------


class EmbeddingHeader(BaseModel):
    format: Literal["SRLOOD-EMB-v1"]
    d: int = Field(ge=1)


class EmbeddingRecord(BaseModel):
    id: str
    label: int = Field(ge=config.OOD_LABEL)
    h: List[float]


@dataclass
class EmbeddingDump:
    ids: List[str]
    labels: np.ndarray
    vectors: np.ndarray

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)


def write_embeddings(dump: EmbeddingDump, path: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": config.EMB_FORMAT, "d": dump.d}) + "\n")
        for example_id, label, h in zip(dump.ids, dump.labels, dump.vectors):
            f.write(json.dumps({"id": example_id, "label": int(label), "h": h.tolist()}) + "\n")
    logger.info("Wrote %d embeddings of width %d to %s", len(dump), dump.d, path)


def export_embeddings(ckpt, examples: Sequence[Example], path: str) -> EmbeddingDump:
    """Unmasked features of every example under a checkpoint, written as a dump."""
    vocab = Vocabulary(ckpt.vocab)
    params = ckpt.to_params()
    items = [(vocab.encode(ex.tokens), ex.spans) for ex in examples]
    try:
        features, _ = featurize(params, items)
    except EncoderError as e:
        raise DataError(f"cannot featurize examples: {e}")
    dump = EmbeddingDump(
        ids=[ex.id for ex in examples],
        labels=np.asarray([ex.label for ex in examples], dtype=np.int64),
        vectors=features,
    )
    write_embeddings(dump, path)
    return dump


def load_embeddings(path: str) -> EmbeddingDump:
    ids, labels, vectors = [], [], []
    header: Optional[EmbeddingHeader] = None
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                if header is None:
                    header = EmbeddingHeader.model_validate_json(line)
                    continue
                record = EmbeddingRecord.model_validate_json(line)
            except ValidationError as e:
                raise DataError(f"{path}: line {line_no}: malformed embedding line: {e}")
            if len(record.h) != header.d:
                raise DataError(
                    f"{path}: line {line_no}: dimension mismatch, record {record.id} has "
                    f"{len(record.h)} values but the header says d={header.d}"
                )
            ids.append(record.id)
            labels.append(record.label)
            vectors.append(record.h)
    if header is None:
        raise DataError(f"{path}: empty embedding dump")
    return EmbeddingDump(
        ids=ids,
        labels=np.asarray(labels, dtype=np.int64),
        vectors=np.asarray(vectors, dtype=np.float64).reshape(len(ids), header.d),
    )
