"""Analysis machinery for curated corpora and their clusterings.

Covers cluster balance, duplicate-driven-cluster detection (low standard
deviation of member distance to centroid), per-cluster mean-distance
ECDFs, selection overlap matrices, exact nearest-neighbor train/validation
reports, and binned aggregation of externally supplied per-document scores
(before/after selection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import Clustering
from .embed import EmbeddingMatrix
from .errors import ValidationError
from .select import SelectionResult

STD_THRESHOLD = 0.03


@dataclass(frozen=True)
class FlaggedCluster:
    """A cluster whose member distances are suspiciously uniform."""

    cluster_index: int
    std: float
    mean_distance: float
    size: int


@dataclass(frozen=True)
class DiagnosticsReport:
    cluster_balance: float | None
    duplicate_driven: tuple[FlaggedCluster, ...]
    ecdf: tuple[tuple[float, float], ...]
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class OverlapMatrix:
    """Pairwise selected-set intersection, percent of the smaller set."""

    labels: tuple[str, ...]
    cells: np.ndarray

    def cell(self, i: int, j: int) -> float:
        return float(self.cells[i, j])


@dataclass(frozen=True)
class NnEntry:
    valid_id: str
    train_id: str
    distance: float


@dataclass(frozen=True)
class NnReport:
    entries: tuple[NnEntry, ...]
    mean: float
    median: float


@dataclass(frozen=True)
class BinStat:
    count: int
    mean_distance: float | None
    mean_before: float | None
    mean_delta: float | None


@dataclass(frozen=True)
class BinnedScores:
    edges: tuple[float, ...]
    bins: tuple[BinStat, ...]


def cluster_balance(clustering: Clustering) -> float:
    """Mean over unordered nonempty-cluster pairs of smaller/larger size.

    1.0 means perfectly even clusters; values near 0 mean a few clusters
    dominate. Empty clusters are excluded from the pairing.
    """
    if clustering.k < 2:
        raise ValidationError("cluster balance needs k >= 2")
    sizes = np.bincount(clustering.assignment, minlength=clustering.k)
    sizes = np.sort(sizes[sizes > 0]).astype(np.float64)
    m = sizes.shape[0]
    if m < 2:
        raise ValidationError("cluster balance needs at least 2 nonempty clusters")
    # Sorted ascending, so pair (i, j) with i < j has ratio sizes[i]/sizes[j].
    ratios = sizes[:, None] / sizes[None, :]
    total = float(ratios[np.triu_indices(m, k=1)].sum())
    return total / (m * (m - 1) / 2)


def find_duplicate_driven_clusters(
    emb: EmbeddingMatrix,
    clustering: Clustering,
    std_threshold: float = STD_THRESHOLD,
) -> list[FlaggedCluster]:
    """Clusters of >= 2 members whose distance std falls below the threshold.

    Population standard deviation, sorted by ascending std. Tight clusters
    like these are characteristic of templated near-duplicate text.
    """
    clustering.validate_for(emb)
    flagged: list[FlaggedCluster] = []
    for j, idx in enumerate(clustering.members()):
        if idx.size < 2:
            continue
        dists = clustering.distance[idx]
        std = float(np.std(dists))
        if std < std_threshold:
            flagged.append(
                FlaggedCluster(
                    cluster_index=j,
                    std=std,
                    mean_distance=float(dists.mean()),
                    size=int(idx.size),
                )
            )
    flagged.sort(key=lambda f: (f.std, f.cluster_index))
    return flagged


def ecdf_mean_distance(
    emb: EmbeddingMatrix, clustering: Clustering
) -> tuple[tuple[float, float], ...]:
    """Empirical CDF of per-cluster mean member distance to centroid.

    Returns (value, cumulative fraction) pairs with fractions i/k over the
    k nonempty clusters, ending at exactly 1.0.
    """
    clustering.validate_for(emb)
    means = [
        float(clustering.distance[idx].mean())
        for idx in clustering.members()
        if idx.size > 0
    ]
    means.sort()
    m = len(means)
    if m == 0:
        return ()
    return tuple((v, (i + 1) / m) for i, v in enumerate(means))


def ecdf_value(ecdf: tuple[tuple[float, float], ...], x: float) -> float:
    """Evaluate an ECDF at x: the fraction of values <= x."""
    frac = 0.0
    for v, f in ecdf:
        if v <= x:
            frac = f
        else:
            break
    return frac


def selection_overlap(results: list[SelectionResult]) -> OverlapMatrix:
    """Pairwise overlap of kept sets, as a percentage of the smaller set.

    All results must come from the same source id sequence. The matrix is
    exactly symmetric with a 100.0 diagonal.
    """
    if not results:
        raise ValidationError("need at least one selection result")
    first = results[0]
    for r in results[1:]:
        if r.fingerprint != first.fingerprint or r.n_source != first.n_source:
            raise ValidationError(
                f"mismatched source sets: {r.method} vs {first.method}"
            )
    m = len(results)
    kept = [set(r.kept_ids) for r in results]
    cells = np.zeros((m, m), dtype=np.float64)
    for i in range(m):
        cells[i, i] = 100.0
        for j in range(i + 1, m):
            smaller = min(len(kept[i]), len(kept[j]))
            value = 100.0 * len(kept[i] & kept[j]) / smaller if smaller else 0.0
            cells[i, j] = cells[j, i] = value
    return OverlapMatrix(labels=tuple(r.method for r in results), cells=cells)


def nn_to_train(valid_emb: EmbeddingMatrix, train_emb: EmbeddingMatrix) -> NnReport:
    """Exact brute-force nearest neighbor in train for each validation row.

    Ties in distance break toward the lowest train id.
    """
    if valid_emb.d != train_emb.d:
        raise ValidationError(
            f"dimension mismatch: validation {valid_emb.d}, train {train_emb.d}"
        )
    if not (valid_emb.normalized and train_emb.normalized):
        raise ValidationError("both matrices must be normalized")
    if train_emb.n == 0:
        raise ValidationError("train matrix is empty")

    sims = valid_emb.vectors.astype(np.float64) @ train_emb.vectors.astype(np.float64).T
    entries: list[NnEntry] = []
    for i in range(valid_emb.n):
        row = sims[i]
        best = row.max()
        candidates = np.flatnonzero(row == best)
        train_id = min(train_emb.ids[int(c)] for c in candidates)
        entries.append(
            NnEntry(
                valid_id=valid_emb.ids[i],
                train_id=train_id,
                distance=float(np.clip(1.0 - best, 0.0, 2.0)),
            )
        )
    dists = np.array([e.distance for e in entries]) if entries else np.array([0.0])
    return NnReport(
        entries=tuple(entries),
        mean=float(dists.mean()),
        median=float(np.median(dists)),
    )


def binned_score_analysis(
    nn: NnReport,
    score_before: dict[str, float],
    score_after: dict[str, float],
    n_bins: int = 20,
) -> BinnedScores:
    """Aggregate score deltas in equal-width bins of NN distance.

    Per bin: count, mean distance, mean before-score, and mean delta
    (after minus before). Empty bins report count 0 and None means.
    """
    if n_bins < 1:
        raise ValidationError("n_bins must be >= 1")
    for e in nn.entries:
        if e.valid_id not in score_before:
            raise ValidationError(f"score_before missing id: {e.valid_id!r}")
        if e.valid_id not in score_after:
            raise ValidationError(f"score_after missing id: {e.valid_id!r}")
    if not nn.entries:
        raise ValidationError("nearest-neighbor report is empty")

    dists = np.array([e.distance for e in nn.entries])
    lo, hi = float(dists.min()), float(dists.max())
    width = hi - lo
    if width > 0:
        indices = np.minimum(((dists - lo) / width * n_bins).astype(int), n_bins - 1)
    else:
        indices = np.zeros(len(dists), dtype=int)

    edges = tuple(lo + width * i / n_bins for i in range(n_bins + 1))
    bins: list[BinStat] = []
    for b in range(n_bins):
        mask = indices == b
        count = int(mask.sum())
        if count == 0:
            bins.append(BinStat(count=0, mean_distance=None, mean_before=None, mean_delta=None))
            continue
        members = [e for e, m in zip(nn.entries, mask) if m]
        before = np.array([score_before[e.valid_id] for e in members])
        after = np.array([score_after[e.valid_id] for e in members])
        bins.append(
            BinStat(
                count=count,
                mean_distance=float(dists[mask].mean()),
                mean_before=float(before.mean()),
                mean_delta=float((after - before).mean()),
            )
        )
    return BinnedScores(edges=edges, bins=tuple(bins))


def analyze_clustering(
    emb: EmbeddingMatrix,
    clustering: Clustering,
    std_threshold: float = STD_THRESHOLD,
) -> DiagnosticsReport:
    """Bundle balance, duplicate-driven detection, and the ECDF."""
    notes: list[str] = []
    balance: float | None = None
    try:
        balance = cluster_balance(clustering)
    except ValidationError as exc:
        notes.append(f"cluster balance unavailable: {exc}")
    flagged = find_duplicate_driven_clusters(emb, clustering, std_threshold)
    ecdf = ecdf_mean_distance(emb, clustering)
    notes.append(
        f"{len(flagged)} of {clustering.k} clusters flagged duplicate-driven "
        f"(std < {std_threshold:g})"
    )
    return DiagnosticsReport(
        cluster_balance=balance,
        duplicate_driven=tuple(flagged),
        ecdf=ecdf,
        notes=tuple(notes),
    )
