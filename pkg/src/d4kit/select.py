"""Data-selection strategies over a clustered embedding space.

Four methods, all document-granular and deterministic:

- ``select_random``: the uniform baseline.
- ``semdedup``: within each cluster, connect members whose cosine
  similarity exceeds 1 - epsilon, collapse each connected component to one
  representative, and bisect epsilon until the kept fraction matches the
  target ratio.
- ``ssl_prototypes``: rank all points globally by distance to their
  centroid and discard the most prototypical (smallest-distance) points.
- ``d4``: semdedup, re-cluster the survivors, then prototypes; the overall
  ratio is the product of the two stage ratios.

The component representative kept by semdedup is the member farthest from
its cluster centroid (diversity-preserving); ``keep_rule="nearest"`` flips
that for sensitivity checks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .cluster import Clustering, KmeansConfig, kmeans_spherical
from .embed import EmbeddingMatrix
from .errors import ValidationError

SEMDEDUP_RATIO_TOL = 0.005
D4_RATIO_TOL = 0.01


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def source_fingerprint(ids: tuple[str, ...] | list[str]) -> str:
    """Stable digest of an id sequence, used to detect source mismatches."""
    h = hashlib.sha256()
    for doc_id in ids:
        h.update(doc_id.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class SelectionResult:
    """The product of a selection method.

    ``kept_ids`` preserve source order; ``scores`` align with ``kept_ids``
    and are method-specific: 0.0 for random, distance to cluster centroid
    for semdedup/prototypes/d4.
    """

    method: str
    r_target: float
    kept_ids: tuple[str, ...]
    scores: tuple[float, ...]
    n_source: int
    fingerprint: str
    epsilon_used: float | None = None
    stages: tuple["SelectionResult", ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.kept_ids) != len(self.scores):
            raise ValidationError("scores must align with kept ids")
        if len(set(self.kept_ids)) != len(self.kept_ids):
            raise ValidationError("kept ids must be unique")

    @property
    def n_kept(self) -> int:
        return len(self.kept_ids)

    @property
    def r_achieved(self) -> float:
        return self.n_kept / self.n_source if self.n_source else 0.0


@dataclass(frozen=True)
class D4Config:
    r_dedup: float = 0.75
    r_proto: float = 1.0
    recluster: bool = True
    kmeans: KmeansConfig = field(default_factory=KmeansConfig)

    def __post_init__(self):
        if not 0.0 < self.r_dedup <= 1.0:
            raise ValidationError("r_dedup must be in (0, 1]")
        if not 0.0 < self.r_proto <= 1.0:
            raise ValidationError("r_proto must be in (0, 1]")

    @property
    def r_overall(self) -> float:
        return self.r_dedup * self.r_proto


def select_random(ids: tuple[str, ...] | list[str], r: float, seed: int = 0) -> SelectionResult:
    """Uniform sample without replacement of round(r * n) ids."""
    if not 0.0 < r <= 1.0:
        raise ValidationError("selection ratio must be in (0, 1]")
    ids = tuple(ids)
    n = len(ids)
    n_keep = _round_half_up(r * n)
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    chosen = np.sort(rng.choice(n, size=n_keep, replace=False))
    kept = tuple(ids[i] for i in chosen)
    return SelectionResult(
        method=f"random(seed={seed})",
        r_target=r,
        kept_ids=kept,
        scores=(0.0,) * len(kept),
        n_source=n,
        fingerprint=source_fingerprint(ids),
    )


class _ClusterSims:
    """Per-cluster member indices and pairwise similarity, computed once."""

    def __init__(self, emb: EmbeddingMatrix, clustering: Clustering):
        X = emb.vectors.astype(np.float64)
        self.clusters: list[tuple[np.ndarray, np.ndarray | None]] = []
        for idx in clustering.members():
            if idx.size == 0:
                continue
            if idx.size == 1:
                self.clusters.append((idx, None))
            else:
                rows = X[idx]
                sims = np.clip(rows @ rows.T, -1.0, 1.0)
                self.clusters.append((idx, sims))

    def kept_count(self, eps: float) -> int:
        thresh = 1.0 - eps
        total = 0
        for idx, sims in self.clusters:
            if sims is None:
                total += 1
            else:
                n_comp, _ = connected_components(csr_matrix(sims > thresh), directed=False)
                total += n_comp
        return total

    def components(self, eps: float) -> list[np.ndarray]:
        """Duplicate components (as global index arrays) at this epsilon."""
        thresh = 1.0 - eps
        out: list[np.ndarray] = []
        for idx, sims in self.clusters:
            if sims is None:
                out.append(idx)
                continue
            n_comp, labels = connected_components(csr_matrix(sims > thresh), directed=False)
            for c in range(n_comp):
                out.append(idx[labels == c])
        return out


def semdedup_kept_counts(
    emb: EmbeddingMatrix, clustering: Clustering, epsilons: list[float]
) -> list[int]:
    """Kept-document counts at each epsilon; a diagnostic for the bisection."""
    sims = _ClusterSims(emb, clustering)
    return [sims.kept_count(e) for e in epsilons]


def _bisect_epsilon(
    sims: _ClusterSims, n: int, r_target: float, tol: float, max_steps: int = 60
) -> tuple[float, float, list[tuple[float, int]]]:
    """Find epsilon whose kept fraction is within tol of the target.

    Returns (epsilon, achieved fraction, trace of evaluated points). The
    kept fraction is non-increasing in epsilon; when the step function
    jumps over the target, the closer side wins, ties toward the smaller
    kept set (larger epsilon).
    """
    trace: list[tuple[float, int]] = []

    def frac(eps: float) -> float:
        kept = sims.kept_count(eps)
        trace.append((eps, kept))
        return kept / n

    lo, f_lo = 0.0, frac(0.0)
    if abs(f_lo - r_target) <= tol:
        return lo, f_lo, trace
    hi, f_hi = 2.0, frac(2.0)
    if abs(f_hi - r_target) <= tol:
        chosen, achieved = hi, f_hi
    elif f_hi > r_target + tol:
        # Even full within-cluster merging keeps too many documents.
        chosen, achieved = hi, f_hi
    else:
        chosen = achieved = None
        for _ in range(max_steps):
            mid = 0.5 * (lo + hi)
            fm = frac(mid)
            if abs(fm - r_target) <= tol:
                chosen, achieved = mid, fm
                break
            if fm > r_target:
                lo, f_lo = mid, fm
            else:
                hi, f_hi = mid, fm
        if chosen is None:
            # Step jump over the target: pick the closer side.
            if abs(f_hi - r_target) <= abs(f_lo - r_target):
                chosen, achieved = hi, f_hi
            else:
                chosen, achieved = lo, f_lo

    # The kept fraction must be monotone non-increasing in epsilon.
    by_eps = sorted(trace)
    counts = [kept for _, kept in by_eps]
    assert all(a >= b for a, b in zip(counts, counts[1:])), "kept count not monotone in epsilon"
    return chosen, achieved, trace


def semdedup(
    emb: EmbeddingMatrix,
    clustering: Clustering,
    r_dedup: float,
    keep_rule: str = "farthest",
    tol: float = SEMDEDUP_RATIO_TOL,
) -> SelectionResult:
    """Semantic dedup: one representative per within-cluster epsilon-component.

    Epsilon is bisected over [0, 2] so the kept fraction lands within
    ``tol`` of ``r_dedup``; if that is unreachable (the kept-fraction step
    function jumps over the target, or the floor of one-per-cluster is
    above it), the closest achievable epsilon is used and a warning is
    recorded on the result.
    """
    if not 0.0 < r_dedup <= 1.0:
        raise ValidationError("r_dedup must be in (0, 1]")
    if keep_rule not in ("farthest", "nearest"):
        raise ValidationError(f"unknown keep_rule: {keep_rule!r}")
    if not emb.normalized:
        raise ValidationError("semdedup requires a normalized embedding matrix")
    clustering.validate_for(emb)

    sims = _ClusterSims(emb, clustering)
    eps, achieved, _ = _bisect_epsilon(sims, emb.n, r_dedup, tol)

    distance = clustering.distance
    ids = emb.ids
    sign = -1.0 if keep_rule == "farthest" else 1.0
    keep_idx: list[int] = []
    for comp in sims.components(eps):
        best = min(comp, key=lambda i: (sign * distance[i], ids[i]))
        keep_idx.append(int(best))
    keep_idx.sort()

    warnings = ()
    if abs(achieved - r_dedup) > tol:
        warnings = (
            f"target kept fraction {r_dedup:.4f} unreachable; "
            f"closest achieved {achieved:.4f} at epsilon {eps:.6g}",
        )
    return SelectionResult(
        method=f"semdedup(r_dedup={r_dedup:g}, keep_rule={keep_rule})",
        r_target=r_dedup,
        kept_ids=tuple(ids[i] for i in keep_idx),
        scores=tuple(float(distance[i]) for i in keep_idx),
        n_source=emb.n,
        fingerprint=source_fingerprint(ids),
        epsilon_used=eps,
        warnings=warnings,
    )


def ssl_prototypes(
    emb: EmbeddingMatrix, clustering: Clustering, r_proto: float
) -> SelectionResult:
    """Discard the round((1 - r) * n) points closest to their centroid.

    Ranking is global across clusters; ties break by discarding the lowest
    id first. Scores are distances to the assigned (nearest) centroid.
    """
    if not 0.0 < r_proto <= 1.0:
        raise ValidationError("r_proto must be in (0, 1]")
    if not emb.normalized:
        raise ValidationError("prototype pruning requires a normalized embedding matrix")
    clustering.validate_for(emb)

    n = emb.n
    n_discard = _round_half_up((1.0 - r_proto) * n)
    ids = emb.ids
    distance = clustering.distance
    order = sorted(range(n), key=lambda i: (distance[i], ids[i]))
    discarded = set(order[:n_discard])
    keep_idx = [i for i in range(n) if i not in discarded]
    return SelectionResult(
        method=f"prototypes(r_proto={r_proto:g})",
        r_target=r_proto,
        kept_ids=tuple(ids[i] for i in keep_idx),
        scores=tuple(float(distance[i]) for i in keep_idx),
        n_source=n,
        fingerprint=source_fingerprint(ids),
    )


def d4(
    emb: EmbeddingMatrix,
    cfg: D4Config,
    clustering: Clustering | None = None,
    artifacts: dict | None = None,
) -> SelectionResult:
    """Dedup, re-cluster the survivors, then prune prototypes.

    Stage 1 runs semdedup at ``cfg.r_dedup`` on a clustering of the full
    matrix (fit here with ``cfg.kmeans`` when not supplied). Stage 2
    re-clusters the surviving rows, with k defaulting to round(sqrt(n'))
    unless ``cfg.kmeans.k`` overrides it; with ``recluster=False`` the
    original centroids and restricted assignments are reused instead.
    Stage 3 applies prototype pruning at ``cfg.r_proto``.

    Passing a dict as ``artifacts`` exposes the intermediate products
    (keys ``stage1_clustering``, ``stage2_embeddings``,
    ``stage2_clustering``) for diagnostics.
    """
    if clustering is None:
        clustering = kmeans_spherical(emb, cfg.kmeans)
    else:
        clustering.validate_for(emb)

    stage1 = semdedup(emb, clustering, cfg.r_dedup)
    kept_set = set(stage1.kept_ids)
    keep_idx = np.array([i for i, doc_id in enumerate(emb.ids) if doc_id in kept_set])
    sub = emb.subset(keep_idx)

    if cfg.recluster:
        sub_clustering = kmeans_spherical(sub, cfg.kmeans)
    else:
        sub_clustering = Clustering(
            centroids=clustering.centroids,
            assignment=clustering.assignment[keep_idx],
            distance=clustering.distance[keep_idx],
            k=clustering.k,
            seed=clustering.seed,
        )

    stage3 = ssl_prototypes(sub, sub_clustering, cfg.r_proto)
    if artifacts is not None:
        artifacts["stage1_clustering"] = clustering
        artifacts["stage2_embeddings"] = sub
        artifacts["stage2_clustering"] = sub_clustering

    warnings = list(stage1.warnings)
    overall = stage3.n_kept / emb.n if emb.n else 0.0
    if abs(overall - cfg.r_overall) > D4_RATIO_TOL:
        warnings.append(
            f"overall kept fraction {overall:.4f} outside {D4_RATIO_TOL} of "
            f"target {cfg.r_overall:.4f}"
        )
    return SelectionResult(
        method=(
            f"d4(r_dedup={cfg.r_dedup:g}, r_proto={cfg.r_proto:g}, "
            f"recluster={str(cfg.recluster).lower()})"
        ),
        r_target=cfg.r_overall,
        kept_ids=stage3.kept_ids,
        scores=stage3.scores,
        n_source=emb.n,
        fingerprint=source_fingerprint(emb.ids),
        epsilon_used=stage1.epsilon_used,
        stages=(stage1, stage3),
        warnings=tuple(warnings),
    )
