"""Document-level MinHash LSH near-duplicate removal.

Signatures are 20 seeded 64-bit min-hashes by default, banded 20 x 1, so
two documents become duplicate candidates iff any signature position
matches. Candidates are unioned transitively (union-find over band
collisions) and each duplicate group keeps its lexicographically lowest id.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .corpus import DocumentSet
from .errors import ValidationError


@dataclass(frozen=True)
class LshConfig:
    num_hashes: int = 20
    bands: int = 20
    rows_per_band: int = 1
    shingle_width: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.num_hashes < 1:
            raise ValidationError("num_hashes must be >= 1")
        if self.bands * self.rows_per_band != self.num_hashes:
            raise ValidationError(
                f"bands ({self.bands}) x rows_per_band ({self.rows_per_band}) "
                f"must equal num_hashes ({self.num_hashes})"
            )
        if self.shingle_width < 1:
            raise ValidationError("shingle_width must be >= 1")


@dataclass(frozen=True)
class MinHashSignature:
    values: tuple[int, ...]
    shingle_width: int


@dataclass(frozen=True)
class DuplicateGroup:
    group_id: int
    member_ids: tuple[str, ...]


@dataclass(frozen=True)
class DedupResult:
    kept_ids: tuple[str, ...]
    groups: tuple[DuplicateGroup, ...]


def shingles(text: str, w: int) -> frozenset[str]:
    """Contiguous word w-grams of ``text``.

    Texts with fewer than w words yield a singleton set containing the
    whole text, so every document has a non-empty shingle set.
    """
    if w < 1:
        raise ValidationError("shingle width must be >= 1")
    words = text.split()
    if len(words) < w:
        return frozenset({text})
    return frozenset(" ".join(words[i : i + w]) for i in range(len(words) - w + 1))


def _hash64(payload: bytes, seed: int, index: int) -> int:
    key = struct.pack("<QI", seed & 0xFFFFFFFFFFFFFFFF, index)
    return int.from_bytes(
        hashlib.blake2b(payload, digest_size=8, key=key).digest(), "little"
    )


def signature(sh: frozenset[str] | set[str], cfg: LshConfig) -> MinHashSignature:
    """Position i holds the minimum of hash_i over the shingle set."""
    if not sh:
        raise ValidationError("cannot sign an empty shingle set")
    encoded = [s.encode("utf-8") for s in sh]
    values = tuple(
        min(_hash64(e, cfg.seed, i) for e in encoded) for i in range(cfg.num_hashes)
    )
    return MinHashSignature(values=values, shingle_width=cfg.shingle_width)


class _UnionFind:
    """Disjoint sets over integer indices; path compression + union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return
        if self.size[rx] < self.size[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        self.size[rx] += self.size[ry]


def lsh_dedup(docs: DocumentSet, cfg: LshConfig | None = None) -> DedupResult:
    """Collapse near-duplicate documents found by banded MinHash.

    Documents sharing any band bucket are unioned into groups; each group
    keeps its lowest id. Kept ids preserve corpus order. The result is
    independent of corpus permutation up to that keep rule.
    """
    cfg = cfg or LshConfig()
    sigs = [signature(shingles(d.text, cfg.shingle_width), cfg) for d in docs]

    uf = _UnionFind(len(sigs))
    buckets: dict[tuple[int, tuple[int, ...]], int] = {}
    for i, sig in enumerate(sigs):
        for band in range(cfg.bands):
            start = band * cfg.rows_per_band
            key = (band, sig.values[start : start + cfg.rows_per_band])
            first = buckets.setdefault(key, i)
            if first != i:
                uf.union(first, i)

    members: dict[int, list[int]] = {}
    for i in range(len(sigs)):
        members.setdefault(uf.find(i), []).append(i)

    ids = docs.ids
    keep: set[str] = set()
    groups: list[DuplicateGroup] = []
    for root in sorted(members, key=lambda r: min(members[r])):
        idx = members[root]
        group_ids = tuple(ids[i] for i in idx)
        keep.add(min(group_ids))
        if len(idx) > 1:
            groups.append(DuplicateGroup(group_id=len(groups), member_ids=group_ids))

    kept = tuple(i for i in ids if i in keep)
    return DedupResult(kept_ids=kept, groups=tuple(groups))
