"""Two-codebook product quantization and the inverted multi-index built on it."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

_INDEX_MAGIC = b"MIDXIX"
_INDEX_VERSION = 1
_CHUNK = 1 << 16


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float
    history: list = field(default_factory=list)  # objective after every iteration
    n_iter: int = 0


def _nearest(points, centroids):
    """Nearest centroid per point; ties go to the lowest index (argmin)."""
    c_sq = np.einsum("kd,kd->k", centroids, centroids)
    out = np.empty(len(points), dtype=np.int64)
    for lo in range(0, len(points), _CHUNK):
        block = points[lo:lo + _CHUNK]
        out[lo:lo + _CHUNK] = np.argmin(c_sq[None, :] - 2.0 * block @ centroids.T, axis=1)
    return out


def _sq_dist_to_assigned(points, centroids, labels):
    diff = points - centroids[labels]
    return np.einsum("nd,nd->n", diff, diff)


def _means(points, labels, k, fallback):
    counts = np.bincount(labels, minlength=k)
    sums = np.stack([np.bincount(labels, weights=points[:, d], minlength=k) for d in range(points.shape[1])], axis=1)
    out = fallback.copy()
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz, None]
    return out, counts


def kmeans_plusplus(points, k, rng):
    n = len(points)
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    d2 = _sq_dist_to_assigned(points, centroids[:1], np.zeros(n, dtype=np.int64))
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[j] = points[idx]
        diff = points - centroids[j]
        d2 = np.minimum(d2, np.einsum("nd,nd->n", diff, diff))
    return centroids


def kmeans(points, k: int, iters: int = 20, seed: int = 0, init=None) -> KMeansResult:
    """Lloyd's k-means with k-means++ seeding (or a warm start via ``init``).

    Empty clusters are reseeded with the point farthest from its current
    centroid, so exactly ``k`` centroids are always returned. Stops once
    assignments stop changing or after ``iters`` iterations.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-D array")
    if x.shape[1] == 0:
        raise ValueError("points must have at least one dimension")
    if k < 1:
        raise ValueError("k must be at least 1")
    if init is None:
        centroids = kmeans_plusplus(x, k, np.random.default_rng(seed))
    else:
        centroids = np.array(init, dtype=np.float64)
        if centroids.shape != (k, x.shape[1]):
            raise ValueError(f"init must have shape {(k, x.shape[1])}, got {centroids.shape}")

    labels = _nearest(x, centroids)
    history = []
    n_iter = 0
    for n_iter in range(1, iters + 1):
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            d2 = _sq_dist_to_assigned(x, centroids, labels)
            far = int(np.argmax(d2))
            if d2[far] == 0.0:
                break
            centroids[j] = x[far]
            labels[far] = j
        centroids, _ = _means(x, labels, k, centroids)
        history.append(float(_sq_dist_to_assigned(x, centroids, labels).sum()))
        new_labels = _nearest(x, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    objective = float(_sq_dist_to_assigned(x, centroids, labels).sum())
    return KMeansResult(centroids, labels, objective, history, n_iter)


@dataclass(frozen=True)
class MultiIndex:
    """Inverted multi-index over item embeddings with two codebooks.

    Items of cell ``(k1, k2)`` are ``bucket_items[bucket_offsets[b]:bucket_offsets[b + 1]]``
    with ``b = k1 * K + k2``; within a cell they are sorted by item id.
    """

    codebooks: np.ndarray  # (2, K, D/2)
    assignments: np.ndarray  # (M, 2)
    residuals: np.ndarray  # (M, D)
    bucket_offsets: np.ndarray  # (K*K + 1,)
    bucket_items: np.ndarray  # (M,)
    max_residual_norm: float

    @property
    def num_items(self) -> int:
        return self.residuals.shape[0]

    @property
    def dim(self) -> int:
        return self.residuals.shape[1]

    @property
    def codebook_size(self) -> int:
        return self.codebooks.shape[1]

    @property
    def bucket_of(self) -> np.ndarray:
        return self.assignments[:, 0] * self.codebook_size + self.assignments[:, 1]

    @cached_property
    def positions(self) -> np.ndarray:
        """Flat position of every item inside ``bucket_items``."""
        pos = np.empty(self.num_items, dtype=np.int64)
        pos[self.bucket_items] = np.arange(self.num_items)
        return pos

    @property
    def bucket_sizes(self) -> np.ndarray:
        return np.diff(self.bucket_offsets)

    def bucket(self, k1: int, k2: int) -> np.ndarray:
        b = k1 * self.codebook_size + k2
        return self.bucket_items[self.bucket_offsets[b]:self.bucket_offsets[b + 1]]

    def codeword_part(self) -> np.ndarray:
        """``c1[k1] (+) c2[k2]`` for every item, i.e. the embedding minus its residual."""
        a = self.assignments
        return np.concatenate([self.codebooks[0][a[:, 0]], self.codebooks[1][a[:, 1]]], axis=1)

    def reconstruct(self) -> np.ndarray:
        return self.codeword_part() + self.residuals


def _assemble(embeddings, c1, c2, a1, a2) -> MultiIndex:
    k = len(c1)
    assignments = np.stack([a1, a2], axis=1).astype(np.int64)
    codebooks = np.stack([c1, c2])
    approx = np.concatenate([c1[a1], c2[a2]], axis=1)
    residuals = embeddings - approx
    bucket = a1 * k + a2
    order = np.argsort(bucket, kind="stable")
    offsets = np.zeros(k * k + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(np.bincount(bucket, minlength=k * k))
    norms = np.sqrt(np.einsum("nd,nd->n", residuals, residuals))
    return MultiIndex(
        codebooks=codebooks,
        assignments=assignments,
        residuals=residuals,
        bucket_offsets=offsets,
        bucket_items=order.astype(np.int64),
        max_residual_norm=float(norms.max()) if len(norms) else 0.0,
    )


def _check_embeddings(item_embeddings):
    q = np.asarray(item_embeddings, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] < 1:
        raise ValueError("item embeddings must be a non-empty M x D matrix")
    if q.shape[1] % 2:
        raise ValueError(f"embedding dimension must be even, got D={q.shape[1]}")
    return q


def build_index(item_embeddings, k: int, seed: int = 0, iters: int = 20) -> MultiIndex:
    """Run k-means separately on both halves of every embedding and bucket the items."""
    q = _check_embeddings(item_embeddings)
    half = q.shape[1] // 2
    r1 = kmeans(q[:, :half], k, iters=iters, seed=seed)
    r2 = kmeans(q[:, half:], k, iters=iters, seed=seed + 1)
    return _assemble(q, r1.centroids, r2.centroids, r1.assignments, r2.assignments)


def rebuild(index: MultiIndex, item_embeddings, iters: int = 20) -> MultiIndex:
    """Re-quantize updated embeddings, warm-starting k-means from the previous assignments.

    The first centroids are the means of the new vectors under the old
    partition, so unchanged (or uniformly rescaled) embeddings keep their
    cells and empty clusters fall back to the old codewords.
    """
    q = _check_embeddings(item_embeddings)
    if q.shape != index.residuals.shape:
        raise ValueError(f"expected embeddings of shape {index.residuals.shape}, got {q.shape}")
    half = q.shape[1] // 2
    k = index.codebook_size
    a = index.assignments
    # Warm start from the old partition: its means over the updated vectors.
    init1, _ = _means(q[:, :half], a[:, 0], k, index.codebooks[0])
    init2, _ = _means(q[:, half:], a[:, 1], k, index.codebooks[1])
    r1 = kmeans(q[:, :half], k, iters=iters, init=init1)
    r2 = kmeans(q[:, half:], k, iters=iters, init=init2)
    return _assemble(q, r1.centroids, r2.centroids, r1.assignments, r2.assignments)


def save_index(index: MultiIndex, path) -> None:
    """Flat little-endian layout: header, codebooks, assignments, residuals, buckets."""
    m, d = index.residuals.shape
    k = index.codebook_size
    with open(path, "wb") as fh:
        fh.write(_INDEX_MAGIC)
        fh.write(struct.pack("<IQQQd", _INDEX_VERSION, m, d, k, index.max_residual_norm))
        fh.write(index.codebooks.astype("<f8").tobytes())
        fh.write(index.assignments.astype("<u4").tobytes())
        fh.write(index.residuals.astype("<f8").tobytes())
        fh.write(index.bucket_offsets.astype("<u8").tobytes())
        fh.write(index.bucket_items.astype("<u4").tobytes())


def load_index(path) -> MultiIndex:
    buf = Path(path).read_bytes()
    if buf[:len(_INDEX_MAGIC)] != _INDEX_MAGIC:
        raise ValueError(f"{path}: not a multi-index file")
    pos = len(_INDEX_MAGIC)
    version, m, d, k, cmax = struct.unpack_from("<IQQQd", buf, pos)
    if version != _INDEX_VERSION:
        raise ValueError(f"{path}: unsupported index version {version}")
    pos += struct.calcsize("<IQQQd")

    def take(dtype, count, shape):
        nonlocal pos
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        return arr.reshape(shape)

    codebooks = take("<f8", 2 * k * (d // 2), (2, k, d // 2)).astype(np.float64)
    assignments = take("<u4", 2 * m, (m, 2)).astype(np.int64)
    residuals = take("<f8", m * d, (m, d)).astype(np.float64)
    offsets = take("<u8", k * k + 1, (k * k + 1,)).astype(np.int64)
    items = take("<u4", m, (m,)).astype(np.int64)
    return MultiIndex(codebooks, assignments, residuals, offsets, items, float(cmax))
