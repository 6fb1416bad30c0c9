"""Region descriptors and gallery-wide cluster matching.

Each cluster is summarized along three dimensions: statistics of
attention-aggregated features, a mean semantic token, and the minimum
enclosing circle of its cells. Every content cluster is then assigned the
argmax-similarity style cluster pooled across the whole gallery; users may
override individual assignments afterwards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .backends import SemanticTokenGrid
from .clustering import ClusterMask, resize_labels
from .errors import InvalidArgumentError, ShapeMismatchError
from .geometry import Circle, min_enclosing_circle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegionDescriptor:
    cluster_id: int
    image_id: str
    stat_vec: np.ndarray  # channel means ++ channel variances, length 2C
    sem_vec: np.ndarray | None  # mean of valid tokens, absent when none map in
    circle: Circle  # normalized [0, 1] image coordinates
    valid_token_count: int
    area: int


@dataclass(frozen=True)
class SimilarityConfig:
    """Weights for the three match dimensions (default ratio 2:8:1)."""

    lambda_stat: float = 0.25
    lambda_sem: float = 1.0
    lambda_pos: float = 0.125

    def __post_init__(self):
        if min(self.lambda_stat, self.lambda_sem, self.lambda_pos) < 0:
            raise InvalidArgumentError("similarity weights must be >= 0")
        if self.lambda_stat == self.lambda_sem == self.lambda_pos == 0:
            raise InvalidArgumentError("at least one similarity weight must be positive")


@dataclass(frozen=True)
class PerDimScores:
    stat: float
    sem: float
    pos: float
    missing: tuple[str, ...] = ()  # dimensions that contributed 0 (flagged)

    def as_dict(self) -> dict:
        return {"stat": self.stat, "sem": self.sem, "pos": self.pos, "missing": list(self.missing)}


@dataclass(frozen=True)
class MatchEntry:
    content_cluster: int
    style_image: str
    style_cluster: int
    score: float
    per_dim: PerDimScores
    origin: str = "auto"  # auto | user_override

    def as_dict(self) -> dict:
        return {
            "content_cluster": self.content_cluster,
            "style_image": self.style_image,
            "style_cluster": self.style_cluster,
            "score": self.score,
            "per_dim": self.per_dim.as_dict(),
            "origin": self.origin,
        }


@dataclass
class MatchTable:
    entries: list[MatchEntry]

    def __post_init__(self):
        seen = [e.content_cluster for e in self.entries]
        if len(seen) != len(set(seen)):
            raise InvalidArgumentError("each content cluster may appear only once")

    def entry_for(self, content_cluster: int) -> MatchEntry:
        for e in self.entries:
            if e.content_cluster == content_cluster:
                return e
        raise KeyError(content_cluster)

    def as_dict(self) -> dict:
        return {"entries": [e.as_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, data: dict) -> "MatchTable":
        entries = [
            MatchEntry(
                content_cluster=int(e["content_cluster"]),
                style_image=str(e["style_image"]),
                style_cluster=int(e["style_cluster"]),
                score=float(e["score"]),
                per_dim=PerDimScores(
                    stat=float(e["per_dim"]["stat"]),
                    sem=float(e["per_dim"]["sem"]),
                    pos=float(e["per_dim"]["pos"]),
                    missing=tuple(e["per_dim"].get("missing", ())),
                ),
                origin=e.get("origin", "auto"),
            )
            for e in data["entries"]
        ]
        return cls(entries=entries)


# ---------------------------------------------------------------------------
# Descriptors
# ---------------------------------------------------------------------------


def _aggregate_self_attention(x: np.ndarray) -> np.ndarray:
    """Parameter-free self-attention over region cells (Q = K = V = x)."""
    scale = 1.0 / np.sqrt(x.shape[1])
    logits = (x @ x.T) * scale
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p @ x


def describe_regions(
    mask: ClusterMask,
    fused: np.ndarray,
    tokens: SemanticTokenGrid,
    min_tokens: int = 100,
) -> list[RegionDescriptor]:
    """One descriptor per cluster: feature statistics, mean token, circle."""
    if fused.ndim != 3:
        raise InvalidArgumentError(f"fused features must be (C, h, w), got {fused.shape}")
    labels = mask.labels
    if fused.shape[1:] != labels.shape:
        labels = resize_labels(labels, fused.shape[1:])
    h, w = labels.shape
    cells = fused.reshape(fused.shape[0], -1).T  # (n, C)

    tok_labels = resize_labels(mask.labels, tokens.grid_shape)
    flat_tokens = tokens.tokens.reshape(-1, tokens.tokens.shape[-1])
    flat_tok_labels = tok_labels.ravel()

    rows, cols = np.divmod(np.arange(h * w), w)
    xs = (cols + 0.5) / w
    ys = (rows + 0.5) / h

    descriptors = []
    for lab in range(mask.n_clusters):
        member = labels.ravel() == lab
        if not member.any():
            raise InvalidArgumentError(f"cluster {lab} vanished under feature-grid alignment")
        agg = _aggregate_self_attention(cells[member])
        stat_vec = np.concatenate([agg.mean(axis=0), agg.var(axis=0)])

        tok_member = flat_tok_labels == lab
        count = int(tok_member.sum())
        sem_vec = flat_tokens[tok_member].mean(axis=0) if count else None
        if 0 < count < min_tokens:
            log.debug(
                "cluster %d of %s has only %d valid tokens (< %d): thin semantic evidence",
                lab, mask.image_id, count, min_tokens,
            )

        circle = min_enclosing_circle(np.column_stack([xs[member], ys[member]]))
        descriptors.append(
            RegionDescriptor(
                cluster_id=lab,
                image_id=mask.image_id,
                stat_vec=stat_vec,
                sem_vec=sem_vec,
                circle=circle,
                valid_token_count=count,
                area=int(member.sum()),
            )
        )
    return descriptors


# ---------------------------------------------------------------------------
# Similarity
# ---------------------------------------------------------------------------


def _cosine_or_flag(a: np.ndarray | None, b: np.ndarray | None, name: str):
    if a is None or b is None:
        return 0.0, name
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0, name
    return float(np.dot(a, b) / (na * nb)), None


def pairwise_similarity(
    a: RegionDescriptor, b: RegionDescriptor, cfg: SimilarityConfig = SimilarityConfig()
) -> tuple[float, PerDimScores]:
    """Weighted cosine similarity across the three descriptor dimensions.

    A missing semantic vector or a zero-norm vector zeroes that dimension's
    contribution and flags it rather than raising.
    """
    if a.stat_vec.shape != b.stat_vec.shape:
        raise ShapeMismatchError("stat_vec dimensionality mismatch")
    if a.sem_vec is not None and b.sem_vec is not None and a.sem_vec.shape != b.sem_vec.shape:
        raise ShapeMismatchError("sem_vec dimensionality mismatch")

    missing = []
    s_stat, flag = _cosine_or_flag(a.stat_vec, b.stat_vec, "stat")
    if flag:
        missing.append(flag)
    s_sem, flag = _cosine_or_flag(a.sem_vec, b.sem_vec, "sem")
    if flag:
        missing.append(flag)
    pos_a = np.array(a.circle.as_tuple())
    pos_b = np.array(b.circle.as_tuple())
    s_pos, flag = _cosine_or_flag(pos_a, pos_b, "pos")
    if flag:
        missing.append(flag)

    score = cfg.lambda_stat * s_stat + cfg.lambda_sem * s_sem + cfg.lambda_pos * s_pos
    return score, PerDimScores(stat=s_stat, sem=s_sem, pos=s_pos, missing=tuple(missing))


def combined_score(per_dim: PerDimScores, cfg: SimilarityConfig) -> float:
    return cfg.lambda_stat * per_dim.stat + cfg.lambda_sem * per_dim.sem + cfg.lambda_pos * per_dim.pos


# ---------------------------------------------------------------------------
# Gallery matching
# ---------------------------------------------------------------------------


def match_gallery(
    content_regions: list[RegionDescriptor],
    style_regions: list[RegionDescriptor],
    cfg: SimilarityConfig = SimilarityConfig(),
) -> MatchTable:
    """Assign every content cluster its best style cluster from the pool.

    Ties break toward higher semantic similarity, then lower style image id,
    then lower style cluster id. Style clusters may be reused.
    """
    if not content_regions or not style_regions:
        raise InvalidArgumentError("content and style descriptor lists must be non-empty")

    entries = []
    for c in sorted(content_regions, key=lambda r: r.cluster_id):
        best = None
        for s in style_regions:
            score, per_dim = pairwise_similarity(c, s, cfg)
            key = (-score, -per_dim.sem, s.image_id, s.cluster_id)
            if best is None or key < best[0]:
                best = (key, s, score, per_dim)
        _, s, score, per_dim = best
        entries.append(
            MatchEntry(
                content_cluster=c.cluster_id,
                style_image=s.image_id,
                style_cluster=s.cluster_id,
                score=score,
                per_dim=per_dim,
                origin="auto",
            )
        )
    return MatchTable(entries=entries)


def apply_overrides(
    table: MatchTable,
    overrides: list[dict],
    content_regions: list[RegionDescriptor],
    style_regions: list[RegionDescriptor],
    cfg: SimilarityConfig = SimilarityConfig(),
) -> MatchTable:
    """Replace selected assignments with user choices.

    Each override is {content_cluster, style_image, style_cluster}. The
    replacement's score is recomputed for display; user intent wins even at
    zero similarity. Unmentioned entries pass through untouched.
    """
    content_by_id = {r.cluster_id: r for r in content_regions}
    style_by_key = {(r.image_id, r.cluster_id): r for r in style_regions}

    patched = {e.content_cluster: e for e in table.entries}
    for ov in overrides:
        cc = int(ov["content_cluster"])
        key = (str(ov["style_image"]), int(ov["style_cluster"]))
        if cc not in content_by_id:
            raise InvalidArgumentError(f"override references unknown content cluster {cc}")
        if key not in style_by_key:
            raise InvalidArgumentError(
                f"override references unknown style cluster {key[1]} of image {key[0]!r}"
            )
        if cc not in patched:
            raise InvalidArgumentError(f"match table has no entry for content cluster {cc}")
        score, per_dim = pairwise_similarity(content_by_id[cc], style_by_key[key], cfg)
        patched[cc] = MatchEntry(
            content_cluster=cc,
            style_image=key[0],
            style_cluster=key[1],
            score=score,
            per_dim=per_dim,
            origin="user_override",
        )
    return MatchTable(entries=[patched[e.content_cluster] for e in table.entries])


def reapply_overrides_after_rematch(
    auto_table: MatchTable,
    previous: MatchTable,
    content_regions: list[RegionDescriptor],
    style_regions: list[RegionDescriptor],
    cfg: SimilarityConfig = SimilarityConfig(),
) -> MatchTable:
    """Carry user overrides forward over a freshly recomputed auto table."""
    overrides = [
        {
            "content_cluster": e.content_cluster,
            "style_image": e.style_image,
            "style_cluster": e.style_cluster,
        }
        for e in previous.entries
        if e.origin == "user_override"
    ]
    if not overrides:
        return auto_table
    return apply_overrides(auto_table, overrides, content_regions, style_regions, cfg)
