"""Spherical k-means over unit-norm embeddings.

Lloyd iterations with cosine-similarity assignment and renormalized-mean
centroid updates. Initialization samples k distinct data rows under the
seed; k defaults to round(sqrt(n)) when not set explicitly. No cluster
balancing is performed during the fit; balance is reported as a diagnostic
instead.

Empty clusters are repaired by reseeding the empty centroid with the point
currently farthest from its assigned centroid (next-farthest points for
multiple empties). This guarantees no empty clusters in the result as long
as the data has at least k distinct rows.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .embed import EmbeddingMatrix
from .errors import FormatError, ValidationError

MAGIC = b"D4KM"
VERSION = 1
NORM_TOL = 1e-5
DIST_TOL = 1e-5


def default_k(n: int) -> int:
    """Cluster-count heuristic: round(sqrt(n)), at least 1."""
    if n < 1:
        raise ValidationError("point count must be >= 1")
    return max(1, int(math.floor(math.sqrt(n) + 0.5)))


@dataclass(frozen=True)
class KmeansConfig:
    """Fit parameters. ``k=None`` means round(sqrt(n)) at fit time.

    There are no balancing knobs on purpose: the minimum points per
    centroid is effectively 1 and the maximum unbounded, so cluster sizes
    fall where the data puts them (balance is a diagnostic, not a
    constraint).
    """

    k: int | None = None
    iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.iters < 1:
            raise ValidationError("iters must be >= 1")


@dataclass(frozen=True)
class Clustering:
    """k unit-norm centroids plus per-point assignment and cosine distance.

    ``iters_run``, ``seed`` and ``objective_history`` describe the fit that
    produced the clustering; they are not persisted by the binary format.
    """

    centroids: np.ndarray
    assignment: np.ndarray
    distance: np.ndarray
    k: int
    iters_run: int = 0
    seed: int = 0
    objective_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.centroids.ndim != 2 or self.centroids.shape[0] != self.k:
            raise ValidationError("centroids must be a (k, d) matrix")
        if self.assignment.shape != self.distance.shape:
            raise ValidationError("assignment and distance lengths differ")
        if self.n and (self.assignment.min() < 0 or self.assignment.max() >= self.k):
            raise ValidationError("cluster index out of range [0, k)")
        if self.n and (self.distance.min() < 0.0 or self.distance.max() > 2.0):
            raise ValidationError("cosine distances must lie in [0, 2]")
        norms = np.linalg.norm(self.centroids.astype(np.float64), axis=1)
        if self.k and float(np.abs(norms - 1.0).max()) > NORM_TOL:
            raise ValidationError("centroid rows must be unit-norm")

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]

    def validate_for(self, emb: EmbeddingMatrix) -> None:
        """Check that this clustering describes ``emb``."""
        if emb.n != self.n:
            raise ValidationError(f"clustering covers {self.n} points, matrix has {emb.n}")
        if emb.d != self.d:
            raise ValidationError(f"clustering dimension {self.d} != matrix {emb.d}")
        if self.n == 0:
            return
        dots = np.einsum(
            "ij,ij->i",
            emb.vectors.astype(np.float64),
            self.centroids[self.assignment].astype(np.float64),
        )
        worst = float(np.abs(self.distance - np.clip(1.0 - dots, 0.0, 2.0)).max())
        if worst > DIST_TOL:
            raise ValidationError(
                f"stored distances inconsistent with matrix (max error {worst:.2e})"
            )

    def members(self) -> list[np.ndarray]:
        """Point indices per cluster, ascending within each cluster."""
        order = np.argsort(self.assignment, kind="stable")
        sorted_assign = self.assignment[order]
        boundaries = np.searchsorted(sorted_assign, np.arange(self.k + 1))
        return [order[boundaries[j] : boundaries[j + 1]] for j in range(self.k)]


def assign(emb: EmbeddingMatrix, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Assign each row to the centroid with the largest dot product.

    Ties break toward the lowest centroid index. Returns (assignment,
    cosine distance), with distances clipped into [0, 2].
    """
    if centroids.ndim != 2:
        raise ValidationError("centroids must be a 2-d array")
    if emb.d != centroids.shape[1]:
        raise ValidationError(
            f"dimension mismatch: matrix is {emb.d}, centroids are {centroids.shape[1]}"
        )
    norms = np.linalg.norm(centroids.astype(np.float64), axis=1)
    if centroids.shape[0] and float(np.abs(norms - 1.0).max()) > NORM_TOL:
        raise ValidationError("centroids must be unit-norm")
    sims = emb.vectors.astype(np.float64) @ centroids.astype(np.float64).T
    assignment = np.argmax(sims, axis=1).astype(np.uint32)
    best = sims[np.arange(emb.n), assignment]
    distance = np.clip(1.0 - best, 0.0, 2.0)
    return assignment, distance


def _update_centroids(
    X: np.ndarray,
    centroids: np.ndarray,
    assignment: np.ndarray,
    distance: np.ndarray,
    k: int,
) -> np.ndarray:
    sums = np.zeros((k, X.shape[1]), dtype=np.float64)
    np.add.at(sums, assignment, X)
    counts = np.bincount(assignment, minlength=k)
    new = centroids.copy()
    norms = np.linalg.norm(sums, axis=1)
    movable = (counts > 0) & (norms > 0)
    new[movable] = sums[movable] / norms[movable, None]

    empties = np.flatnonzero(counts == 0)
    if empties.size:
        # Farthest points first; each empty centroid grabs the next one.
        order = np.argsort(-distance, kind="stable")
        for j, p in zip(empties, order[: empties.size]):
            new[j] = X[p]
    return new


def kmeans_spherical(
    emb: EmbeddingMatrix,
    cfg: KmeansConfig | None = None,
    init_centroids: np.ndarray | None = None,
) -> Clustering:
    """Fit spherical k-means; deterministic for fixed inputs and seed.

    Runs exactly ``cfg.iters`` Lloyd iterations unless the assignment stops
    changing earlier. ``init_centroids`` overrides the default
    sampled-data-rows initialization (and fixes k to its row count).
    """
    cfg = cfg or KmeansConfig()
    if not emb.normalized:
        raise ValidationError("k-means requires a normalized embedding matrix")
    n = emb.n
    if n < 1:
        raise ValidationError("cannot cluster an empty matrix")

    X = emb.vectors.astype(np.float64)
    if init_centroids is not None:
        C = init_centroids.astype(np.float64).copy()
        if C.ndim != 2 or C.shape[1] != emb.d:
            raise ValidationError("init_centroids must be (k, d)")
        k = C.shape[0]
        if cfg.k is not None and cfg.k != k:
            raise ValidationError("cfg.k disagrees with init_centroids row count")
        norms = np.linalg.norm(C, axis=1)
        if float(np.abs(norms - 1.0).max()) > NORM_TOL:
            raise ValidationError("init_centroids must be unit-norm")
        C /= norms[:, None]
    else:
        k = cfg.k if cfg.k is not None else default_k(n)
        if k > n:
            raise ValidationError(f"k ({k}) exceeds point count ({n})")
        rng = np.random.default_rng(cfg.seed & 0xFFFFFFFFFFFFFFFF)
        C = X[rng.choice(n, size=k, replace=False)].copy()

    assignment, distance = assign(emb, C)
    history = [float(distance.sum())]
    iters_run = 0
    for _ in range(cfg.iters):
        C = _update_centroids(X, C, assignment, distance, k)
        new_assignment, new_distance = assign(emb, C)
        obj = float(new_distance.sum())
        # Lloyd never increases the objective; tolerate only rounding noise.
        assert obj <= history[-1] + 1e-9 * max(1.0, history[-1])
        history.append(obj)
        unchanged = np.array_equal(new_assignment, assignment)
        assignment, distance = new_assignment, new_distance
        iters_run += 1
        if unchanged:
            break

    return Clustering(
        centroids=C,
        assignment=assignment,
        distance=distance,
        k=k,
        iters_run=iters_run,
        seed=cfg.seed,
        objective_history=tuple(history),
    )


def objective(emb: EmbeddingMatrix, clustering: Clustering) -> float:
    """Sum of cosine distances to assigned centroids."""
    clustering.validate_for(emb)
    return float(clustering.distance.sum())


def write_clustering(c: Clustering, path: str) -> None:
    """Persist a clustering (fit metadata is not stored)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIQ", VERSION, c.k, c.d, c.n))
        fh.write(np.ascontiguousarray(c.centroids, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(c.assignment, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(c.distance, dtype="<f4").tobytes())


def read_clustering(path: str) -> Clustering:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}", 0)
    if len(data) < 24:
        raise FormatError("truncated header", len(data))
    version, k, d, n = struct.unpack_from("<IIIQ", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    offset = 24
    need = k * d * 4 + n * 4 + n * 4
    if len(data) < offset + need:
        raise FormatError("truncated payload", len(data))
    centroids = (
        np.frombuffer(data, dtype="<f4", count=k * d, offset=offset)
        .reshape(k, d)
        .astype(np.float64)
    )
    offset += k * d * 4
    assignment = np.frombuffer(data, dtype="<u4", count=n, offset=offset).copy()
    offset += n * 4
    distance = np.frombuffer(data, dtype="<f4", count=n, offset=offset).astype(np.float64)
    offset += n * 4
    if offset != len(data):
        raise FormatError("trailing bytes after distances", offset)
    return Clustering(
        centroids=centroids, assignment=assignment, distance=distance, k=k
    )
