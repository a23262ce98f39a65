"""Document collections: ingestion, token counting, and synthetic corpora.

A corpus file is newline-delimited JSON, one record per document, with
fields ``id`` (string), ``text`` (string) and an optional ``meta`` object.
File order is preserved everywhere; nothing in this module shuffles.

The synthetic generator plants two kinds of structure that downstream
stages can be tested against: topic clusters (bags of topic-biased
vocabulary) and template groups (near-identical copies of one generated
document, mimicking templated web text that survives exact dedup).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from .errors import ParseError, ValidationError

# Probability that a topic-document token is drawn from the topic's own
# vocabulary slice rather than the corpus-wide vocabulary.
TOPIC_BIAS = 0.85


def count_tokens(text: str, counter: str = "whitespace") -> int:
    """Count proxy tokens in ``text`` under a counter spec.

    Supported specs: ``"whitespace"`` (split on runs of whitespace) and
    ``"chars:<c>"`` (ceiling of length / c). Empty text counts 0 either way.
    """
    if counter == "whitespace":
        return len(text.split())
    if counter.startswith("chars:"):
        try:
            c = int(counter.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad chars-per-token counter spec: {counter!r}")
        if c < 1:
            raise ValidationError(f"chars-per-token must be >= 1, got {c}")
        return math.ceil(len(text) / c)
    raise ValidationError(f"unknown token counter spec: {counter!r}")


@dataclass(frozen=True)
class Document:
    """A single document, the unit of selection."""

    id: str
    text: str
    token_count: int
    meta: dict[str, Any] | None = None


@dataclass(frozen=True)
class DocumentSet:
    """An ordered, immutable collection of documents with unique ids."""

    docs: tuple[Document, ...]
    total_tokens: int

    def __post_init__(self):
        seen: set[str] = set()
        for d in self.docs:
            if d.id in seen:
                raise ValidationError(f"duplicate document id: {d.id!r}")
            seen.add(d.id)
        s = sum(d.token_count for d in self.docs)
        if s != self.total_tokens:
            raise ValidationError(
                f"total_tokens={self.total_tokens} but member sum is {s}"
            )

    @classmethod
    def from_documents(cls, docs: list[Document] | tuple[Document, ...]) -> "DocumentSet":
        docs = tuple(docs)
        return cls(docs=docs, total_tokens=sum(d.token_count for d in docs))

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.docs)

    def __len__(self) -> int:
        return len(self.docs)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.docs)

    def subset(self, keep_ids: set[str] | frozenset[str]) -> "DocumentSet":
        """Documents whose id is in ``keep_ids``, original order preserved."""
        return DocumentSet.from_documents([d for d in self.docs if d.id in keep_ids])


def load_corpus(path: str, token_counter: str = "whitespace") -> DocumentSet:
    """Load a JSONL corpus file, preserving file order.

    Raises :class:`ParseError` (with the line number) for malformed lines
    and :class:`ValidationError` for duplicate ids.
    """
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(rec, dict):
                raise ParseError("record is not an object", lineno)
            if "id" not in rec or "text" not in rec:
                raise ParseError("record missing required field 'id' or 'text'", lineno)
            doc_id, text = rec["id"], rec["text"]
            if not isinstance(doc_id, str) or not isinstance(text, str):
                raise ParseError("'id' and 'text' must be strings", lineno)
            meta = rec.get("meta")
            if meta is not None and not isinstance(meta, dict):
                raise ParseError("'meta' must be an object when present", lineno)
            if doc_id in seen:
                raise ValidationError(f"duplicate document id: {doc_id!r}")
            seen.add(doc_id)
            docs.append(
                Document(
                    id=doc_id,
                    text=text,
                    token_count=count_tokens(text, token_counter),
                    meta=meta,
                )
            )
    return DocumentSet.from_documents(docs)


def write_corpus(docs: DocumentSet, path: str) -> None:
    """Write documents as JSONL (``id``, ``text``, optional ``meta``)."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            rec: dict[str, Any] = {"id": d.id, "text": d.text}
            if d.meta is not None:
                rec["meta"] = d.meta
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for the synthetic corpus generator.

    The generated corpus has ``n_topics * docs_per_topic`` topic documents
    followed by ``n_template_groups * dupes_per_group`` template-group
    members. Each group member is a copy of one generated template with
    every token independently mutated with probability
    ``template_mutation_rate``. Ground-truth labels land in each document's
    ``meta``: ``topic`` (``"none"`` for template members, whose vocabulary
    is corpus-wide) and ``group`` (``"none"`` outside template groups).
    """

    n_topics: int
    docs_per_topic: int
    n_template_groups: int = 0
    dupes_per_group: int = 2
    template_mutation_rate: float = 0.0
    vocab_size: int = 1000
    doc_length_range: tuple[int, int] = (40, 120)
    seed: int = 0

    def __post_init__(self):
        if self.n_topics < 1:
            raise ValidationError("n_topics must be >= 1")
        if self.docs_per_topic < 1:
            raise ValidationError("docs_per_topic must be >= 1")
        if self.n_template_groups < 0:
            raise ValidationError("n_template_groups must be >= 0")
        if self.dupes_per_group < 2:
            raise ValidationError("dupes_per_group must be >= 2")
        if not 0.0 <= self.template_mutation_rate <= 1.0:
            raise ValidationError("template_mutation_rate must be in [0, 1]")
        if self.vocab_size < self.n_topics:
            raise ValidationError("vocab_size must be >= n_topics")
        lo, hi = self.doc_length_range
        if lo > hi:
            raise ValidationError(
                f"doc_length_range min {lo} exceeds max {hi}"
            )
        if lo < 1:
            raise ValidationError("doc_length_range min must be >= 1")

    @property
    def corpus_size(self) -> int:
        return (
            self.n_topics * self.docs_per_topic
            + self.n_template_groups * self.dupes_per_group
        )


def _draw_tokens(
    rng: np.random.Generator,
    length: int,
    topic_lo: int,
    topic_hi: int,
    vocab_size: int,
) -> np.ndarray:
    in_topic = rng.random(length) < TOPIC_BIAS
    topical = rng.integers(topic_lo, topic_hi, size=length)
    background = rng.integers(0, vocab_size, size=length)
    return np.where(in_topic, topical, background)


def synthesize_corpus(spec: SynthSpec) -> DocumentSet:
    """Generate a corpus with planted topics and template groups.

    Deterministic for a fixed spec: the same seed yields a byte-identical
    corpus on every run.
    """
    rng = np.random.default_rng(spec.seed & 0xFFFFFFFFFFFFFFFF)
    vocab = np.array([f"w{i:05d}" for i in range(spec.vocab_size)])
    lo, hi = spec.doc_length_range

    # Contiguous, non-empty vocabulary slice per topic.
    bounds = [
        (t * spec.vocab_size // spec.n_topics, (t + 1) * spec.vocab_size // spec.n_topics)
        for t in range(spec.n_topics)
    ]

    docs: list[Document] = []

    def add(token_ids: np.ndarray, topic: int, group: str) -> None:
        text = " ".join(vocab[token_ids])
        docs.append(
            Document(
                id=f"doc{len(docs):06d}",
                text=text,
                token_count=len(token_ids),
                meta={"topic": f"t{topic}" if topic >= 0 else "none", "group": group},
            )
        )

    for t in range(spec.n_topics):
        t_lo, t_hi = bounds[t]
        for _ in range(spec.docs_per_topic):
            length = int(rng.integers(lo, hi + 1))
            add(_draw_tokens(rng, length, t_lo, t_hi, spec.vocab_size), t, "none")

    # Templates draw from the whole vocabulary, not a topic slice, so each
    # group is a dense clump away from the topic mass (as templated web
    # text is off the natural language distribution).
    for g in range(spec.n_template_groups):
        length = int(rng.integers(lo, hi + 1))
        template = rng.integers(0, spec.vocab_size, size=length)
        for _ in range(spec.dupes_per_group):
            member = template.copy()
            mutate = rng.random(length) < spec.template_mutation_rate
            n_mut = int(mutate.sum())
            if n_mut:
                member[mutate] = rng.integers(0, spec.vocab_size, size=n_mut)
            add(member, -1, f"g{g:03d}")

    out = DocumentSet.from_documents(docs)
    assert len(out) == spec.corpus_size
    return out
