"""Diffusion-feature clustering: fuse, reduce, cluster, optimize.

Per-step denoiser features are fused with index-adaptive sigmoid weights,
reduced by PCA, grouped by seeded k-means, and then cleaned up in three
passes: semantic merging of near-duplicate clusters, an optional
depth-guided split-recombine, and isolated-point elimination.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .backends import FeatureStack, SemanticTokenGrid
from .errors import InvalidArgumentError, ShapeMismatchError

log = logging.getLogger(__name__)

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FusionWeights:
    """Sigmoid step weights: early (low-noise) steps dominate the fusion."""

    total_steps: int
    steepness: float = 5.0
    inflection: float = 0.7
    normalized: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidArgumentError("total_steps must be >= 1")
        if self.normalized is None:
            raw = self.raw_weights()
            object.__setattr__(self, "normalized", raw / raw.sum())

    def raw_weights(self) -> np.ndarray:
        t = np.arange(self.total_steps + 1, dtype=float)
        return 1.0 / (1.0 + np.exp(self.steepness * (t / self.total_steps - self.inflection)))


def raw_weight(t: int, total_steps: int, steepness: float = 5.0, inflection: float = 0.7) -> float:
    """Unnormalized fusion weight of one step index."""
    return float(1.0 / (1.0 + np.exp(steepness * (t / total_steps - inflection))))


@dataclass
class ClusterMask:
    """Integer label map over the feature grid; labels contiguous from 0."""

    image_id: str
    labels: np.ndarray  # (h, w) ints in [0, n_clusters)
    n_clusters: int
    provenance: str = "auto"  # auto | external_base | user_edited
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        present = np.unique(self.labels)
        if len(present) != self.n_clusters or present[0] != 0 or present[-1] != self.n_clusters - 1:
            raise InvalidArgumentError(
                f"labels must be contiguous 0..{self.n_clusters - 1}, found {present}"
            )
        if self.provenance not in ("auto", "external_base", "user_edited"):
            raise InvalidArgumentError(f"unknown provenance {self.provenance!r}")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class ClusterOptConfig:
    k_max: int = 10
    merge_threshold: float = 0.85
    isolated_area: int = 8
    use_depth_split: bool = True
    pca_dims: int = 64

    def __post_init__(self):
        if not (0.0 < self.merge_threshold < 1.0):
            raise InvalidArgumentError("merge_threshold must lie in (0, 1)")
        if self.k_max < 2:
            raise InvalidArgumentError("k_max must be >= 2")
        if self.isolated_area < 1:
            raise InvalidArgumentError("isolated_area must be >= 1")
        if self.pca_dims < 1:
            raise InvalidArgumentError("pca_dims must be >= 1")


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


def fuse_features(stack: FeatureStack, weights: FusionWeights) -> FeatureStack:
    """Weighted sum of per-step grids; returns a new stack with ``fused`` set."""
    if weights.total_steps != stack.total_steps:
        raise ShapeMismatchError(
            f"weights cover {weights.total_steps} steps, stack has {stack.total_steps}"
        )
    fused = np.tensordot(weights.normalized, np.stack(stack.per_step), axes=1)
    return FeatureStack(
        image_id=stack.image_id,
        per_step=stack.per_step,
        grid_shape=stack.grid_shape,
        total_steps=stack.total_steps,
        fused=fused,
    )


# ---------------------------------------------------------------------------
# PCA + k-means (seeded, fixed iteration/tolerance contract)
# ---------------------------------------------------------------------------


def _pca_project(x: np.ndarray, dims: int) -> np.ndarray:
    """Deterministic PCA: centered SVD with sign-fixed components."""
    dims = min(dims, x.shape[0], x.shape[1])
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:dims]
    # Fix sign so the largest-magnitude loading of each component is positive.
    flip = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
    flip[flip == 0] = 1.0
    return centered @ (comps * flip[:, None]).T


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = x[rng.integers(n, size=k - i)]
            break
        probs = d2 / total
        centers[i] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def _kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 300, tol: float = 1e-4) -> np.ndarray:
    """Seeded k-means++ with Lloyd iterations; returns per-row labels."""
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new_centers[c] = x[members].mean(axis=0)
            else:
                # Reseed an empty cluster with the point farthest from its center.
                far = d2[np.arange(len(labels)), labels].argmax()
                new_centers[c] = x[far]
        move = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if move <= tol:
            break
    # Collapse duplicate centroids so identical clusters share one label.
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    canon: dict[bytes, int] = {}
    remap = np.arange(k)
    for c in range(k):
        key = np.round(centers[c], 10).tobytes()
        remap[c] = canon.setdefault(key, c)
    return remap[labels]


def relabel_contiguous(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Renumber labels 0..n-1 in row-major first-appearance order."""
    flat = labels.ravel()
    _, first_idx, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_idx))
    return order[inverse].reshape(labels.shape), len(first_idx)


def resize_labels(labels: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize of an integer label map."""
    h1, w1 = labels.shape
    h2, w2 = shape
    rows = np.minimum(((np.arange(h2) + 0.5) * h1 / h2).astype(int), h1 - 1)
    cols = np.minimum(((np.arange(w2) + 0.5) * w1 / w2).astype(int), w1 - 1)
    return labels[np.ix_(rows, cols)]


# ---------------------------------------------------------------------------
# Initial clustering
# ---------------------------------------------------------------------------


def initial_clusters(
    fused: np.ndarray,
    cfg: ClusterOptConfig,
    seed: int,
    image_id: str = "",
) -> ClusterMask:
    """PCA + k-means over per-cell fused feature vectors, k = cfg.k_max."""
    if fused.ndim != 3:
        raise InvalidArgumentError(f"fused features must be (C, h, w), got {fused.shape}")
    c, h, w = fused.shape
    cells = fused.reshape(c, -1).T  # (n, C)

    warnings: tuple[str, ...] = ()
    n_distinct = len(np.unique(cells, axis=0))
    k = cfg.k_max
    if n_distinct < k:
        k = max(n_distinct, 1)
        warnings = (f"only {n_distinct} distinct cells; reduced k to {k}",)

    if k == 1:
        labels = np.zeros((h, w), dtype=np.int64)
        return ClusterMask(image_id=image_id, labels=labels, n_clusters=1, warnings=warnings)

    projected = _pca_project(cells, cfg.pca_dims)
    labels = _kmeans(projected, k, seed)
    labels, n = relabel_contiguous(labels.reshape(h, w))
    return ClusterMask(image_id=image_id, labels=labels, n_clusters=n, warnings=warnings)


# ---------------------------------------------------------------------------
# Cluster optimization passes
# ---------------------------------------------------------------------------


def _cluster_token_means(labels: np.ndarray, tokens: SemanticTokenGrid) -> tuple[dict[int, np.ndarray], list[int]]:
    """Mean semantic token per cluster, on the token grid.

    Returns (descriptor map, clusters with zero valid tokens).
    """
    tok_labels = resize_labels(labels, tokens.grid_shape)
    flat_tokens = tokens.tokens.reshape(-1, tokens.tokens.shape[-1])
    flat_labels = tok_labels.ravel()
    descriptors: dict[int, np.ndarray] = {}
    empty: list[int] = []
    for lab in np.unique(labels):
        members = flat_labels == lab
        if members.any():
            descriptors[int(lab)] = flat_tokens[members].mean(axis=0)
        else:
            empty.append(int(lab))
    return descriptors, empty


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def semantic_merge(
    labels: np.ndarray, tokens: SemanticTokenGrid, threshold: float
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Transitively merge clusters whose mean tokens have cosine >= threshold."""
    descriptors, empty = _cluster_token_means(labels, tokens)
    warnings = tuple(f"cluster {c} has no valid tokens; skipped by semantic merge" for c in empty)
    ids = sorted(descriptors)
    uf = _UnionFind(np.unique(labels).tolist())
    pairs = [
        (_cosine(descriptors[a], descriptors[b]), a, b)
        for i, a in enumerate(ids)
        for b in ids[i + 1 :]
    ]
    for sim, a, b in sorted(pairs, key=lambda p: -p[0]):
        if sim >= threshold:
            uf.union(a, b)
    merged = np.vectorize(uf.find)(labels) if labels.size else labels
    out, _ = relabel_contiguous(merged)
    return out, warnings


def _split_1d_two_means(values: np.ndarray) -> tuple[np.ndarray, float, float] | None:
    """Exact 1-D 2-means via sorted prefix sums; None when all values tie."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    n = len(v)
    if n < 2 or v[0] == v[-1]:
        return None
    prefix = np.concatenate([[0.0], np.cumsum(v)])
    prefix2 = np.concatenate([[0.0], np.cumsum(v**2)])
    best_sse, best_i = np.inf, 1
    for i in range(1, n):
        if v[i] == v[i - 1]:
            continue  # split must separate distinct values
        left = prefix2[i] - prefix[i] ** 2 / i
        right = (prefix2[n] - prefix2[i]) - (prefix[n] - prefix[i]) ** 2 / (n - i)
        if left + right < best_sse:
            best_sse, best_i = left + right, i
    m1 = prefix[best_i] / best_i
    m2 = (prefix[n] - prefix[best_i]) / (n - best_i)
    in_high = np.zeros(n, dtype=bool)
    in_high[order[best_i:]] = True
    return in_high, float(m1), float(m2)


def depth_guided_split(
    labels: np.ndarray, depth: np.ndarray, min_gap_fraction: float = 0.25
) -> np.ndarray:
    """Split clusters whose two depth modes are far apart.

    Within each cluster, run exact 2-means on depth values and split only
    when the sub-means differ by more than ``min_gap_fraction`` of the global
    depth range.
    """
    if depth.shape != labels.shape:
        raise ShapeMismatchError(f"depth grid {depth.shape} vs labels {labels.shape}")
    global_range = float(depth.max() - depth.min())
    if global_range <= 0.0:
        return labels.copy()

    out = labels.copy()
    next_label = int(labels.max()) + 1
    for lab in np.unique(labels):
        cells = labels == lab
        result = _split_1d_two_means(depth[cells])
        if result is None:
            continue
        in_high, m1, m2 = result
        if abs(m2 - m1) > min_gap_fraction * global_range:
            idx = np.flatnonzero(cells.ravel())
            high_idx = idx[in_high]
            out.ravel()[high_idx] = next_label
            next_label += 1
    out, _ = relabel_contiguous(out)
    return out


def eliminate_isolated(labels: np.ndarray, min_area: int) -> np.ndarray:
    """Absorb small 4-connected components into their dominant neighbor.

    Repeats until every remaining component has area >= min_area (or a
    single label covers the grid).
    """
    out = labels.copy()
    while True:
        if len(np.unique(out)) <= 1:
            break
        smallest = None  # (area, first_cell_index, component_mask, label)
        for lab in np.unique(out):
            comp, n_comp = ndimage.label(out == lab, structure=_FOUR_CONN)
            if n_comp == 0:
                continue
            areas = np.bincount(comp.ravel())[1:]
            for ci in np.flatnonzero(areas < min_area):
                mask = comp == ci + 1
                first = int(np.flatnonzero(mask.ravel())[0])
                key = (int(areas[ci]), first)
                if smallest is None or key < smallest[:2]:
                    smallest = (*key, mask, int(lab))
        if smallest is None:
            break
        _, _, mask, lab = smallest
        neighbor = _dominant_neighbor_label(out, mask, lab)
        if neighbor is None:
            break
        out[mask] = neighbor
    out, _ = relabel_contiguous(out)
    return out


def _dominant_neighbor_label(labels: np.ndarray, mask: np.ndarray, own: int) -> int | None:
    ring = ndimage.binary_dilation(mask, structure=_FOUR_CONN) & ~mask
    ring_labels = labels[ring]
    ring_labels = ring_labels[ring_labels != own]
    if ring_labels.size == 0:
        return None
    counts = np.bincount(ring_labels)
    return int(counts.argmax())  # ties resolve to the smaller label


def optimize_clusters(
    mask: ClusterMask,
    fused: np.ndarray,
    depth: np.ndarray | None,
    semantics: SemanticTokenGrid,
    cfg: ClusterOptConfig,
) -> ClusterMask:
    """Three cleanup passes: semantic merge, depth split-recombine, isolated
    point elimination. Passes 1 and 3 never increase the cluster count."""
    labels = mask.labels
    labels, warn1 = semantic_merge(labels, semantics, cfg.merge_threshold)

    if cfg.use_depth_split and depth is not None:
        labels = depth_guided_split(labels, depth)
        labels, _ = semantic_merge(labels, semantics, cfg.merge_threshold)
    elif cfg.use_depth_split and depth is None:
        log.info("depth features unavailable; skipping depth-guided split for %s", mask.image_id)

    labels = eliminate_isolated(labels, cfg.isolated_area)
    labels, n = relabel_contiguous(labels)
    return ClusterMask(
        image_id=mask.image_id,
        labels=labels,
        n_clusters=n,
        provenance=mask.provenance,
        warnings=mask.warnings + warn1,
    )


# ---------------------------------------------------------------------------
# External base masks
# ---------------------------------------------------------------------------


def ingest_base_mask(
    external: np.ndarray,
    grid_shape: tuple[int, int],
    fused: np.ndarray,
    depth: np.ndarray | None,
    semantics: SemanticTokenGrid,
    cfg: ClusterOptConfig,
    image_id: str = "",
) -> ClusterMask:
    """Adopt an externally produced label map, then run cluster optimization.

    Cells labeled below zero are treated as unknown and filled from the
    nearest labeled cell before optimization.
    """
    ext = np.asarray(external, dtype=np.int64)
    resized = resize_labels(ext, grid_shape)
    unknown = resized < 0
    if unknown.all():
        raise InvalidArgumentError("external mask has no labeled cells")
    if unknown.any():
        _, (ri, ci) = ndimage.distance_transform_edt(unknown, return_indices=True)
        resized = resized[ri, ci]
    labels, n = relabel_contiguous(resized)
    base = ClusterMask(
        image_id=image_id, labels=labels, n_clusters=n, provenance="external_base"
    )
    return optimize_clusters(base, fused, depth, semantics, cfg)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def classification_accuracy(
    predicted: ClusterMask, expected_regions: Sequence[np.ndarray]
) -> float:
    """Fraction of expected regions matched one-to-one by a predicted cluster.

    A region counts when some predicted cluster overlaps it with IoU >= 0.5
    and no other expected region claims that same cluster.
    """
    if len(expected_regions) == 0:
        raise InvalidArgumentError("expected_regions must be non-empty")
    labels = predicted.labels
    regions = [np.asarray(r, dtype=bool) for r in expected_regions]
    for r in regions:
        if r.shape != labels.shape:
            raise ShapeMismatchError(f"annotation {r.shape} vs mask {labels.shape}")

    claims: dict[int, list[int]] = {c: [] for c in range(predicted.n_clusters)}
    for ri, region in enumerate(regions):
        for c in range(predicted.n_clusters):
            cluster = labels == c
            inter = np.logical_and(cluster, region).sum()
            union = np.logical_or(cluster, region).sum()
            if union and inter / union >= 0.5:
                claims[c].append(ri)

    correct = 0
    for ri in range(len(regions)):
        if any(cl == [ri] for cl in claims.values()):
            correct += 1
    return correct / len(regions)


def regions_from_annotation(annotation: np.ndarray) -> list[np.ndarray]:
    """Expand an integer annotation grid into boolean region masks.

    Negative values mark unannotated cells.
    """
    ann = np.asarray(annotation)
    return [ann == v for v in np.unique(ann) if v >= 0]
