"""Stage composition shared by the CLI and the job service.

Every stage is a thin call into the library modules; nothing here implements
pipeline math of its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .backends import ImageRecord, SemanticTokenGrid, create_backend
from .clustering import (
    ClusterMask,
    ClusterOptConfig,
    FusionWeights,
    fuse_features,
    ingest_base_mask,
    initial_clusters,
    optimize_clusters,
)
from .errors import FeatureUnavailableError
from .matching import (
    MatchTable,
    RegionDescriptor,
    SimilarityConfig,
    describe_regions,
    match_gallery,
)
from .transfer import LossConfig, LossReport, build_attention_plan, guided_sampling, layer_shapes_for

DEFAULT_CONFIG: dict = {
    "backend": {"kind": "synthetic", "seed": 0, "extraction_site": "decoder.penultimate"},
    "inversion_steps": 15,
    "cluster": {
        "k_max": 10,
        "merge_threshold": 0.85,
        "isolated_area": 8,
        "use_depth_split": True,
        "pca_dims": 64,
    },
    "similarity": {"lambda_stat": 0.25, "lambda_sem": 1.0, "lambda_pos": 0.125},
    "transfer": {
        "lambda_c": 0.26,
        "eta": 0.05,
        "opt_steps": 150,
        "denoise_steps": 15,
        "seed": 0,
        "layers": None,
        "start_jitter": 0.0,
    },
}


def merge_config(overrides: dict | None) -> dict:
    """Deep-merge ``overrides`` over the pipeline defaults.

    ``transfer.seed`` seeds the whole run: it propagates to ``backend.seed``
    unless the backend seed was set explicitly.
    """
    def deep(base, over):
        out = dict(base)
        for k, v in (over or {}).items():
            out[k] = deep(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
        return out

    merged = deep(DEFAULT_CONFIG, overrides or {})
    explicit_backend_seed = bool(overrides) and "seed" in (overrides.get("backend") or {})
    if not explicit_backend_seed:
        merged["backend"]["seed"] = int(merged["transfer"]["seed"])
    return merged


def cluster_config(cfg: dict) -> ClusterOptConfig:
    c = cfg["cluster"]
    return ClusterOptConfig(
        k_max=int(c["k_max"]),
        merge_threshold=float(c["merge_threshold"]),
        isolated_area=int(c["isolated_area"]),
        use_depth_split=bool(c["use_depth_split"]),
        pca_dims=int(c["pca_dims"]),
    )


def similarity_config(cfg: dict) -> SimilarityConfig:
    s = cfg["similarity"]
    return SimilarityConfig(
        lambda_stat=float(s["lambda_stat"]),
        lambda_sem=float(s["lambda_sem"]),
        lambda_pos=float(s["lambda_pos"]),
    )


def loss_config(cfg: dict) -> LossConfig:
    t = cfg["transfer"]
    layers = t.get("layers")
    return LossConfig(
        lambda_c=float(t["lambda_c"]),
        eta=float(t["eta"]),
        opt_steps=int(t["opt_steps"]),
        layer_ids=None if layers is None else tuple(int(x) for x in layers),
    )


def backend_from_config(cfg: dict):
    return create_backend(cfg["backend"])


@dataclass
class MaskBundle:
    """Mask plus the intermediates later stages reuse."""

    image: ImageRecord
    mask: ClusterMask
    fused: np.ndarray
    tokens: SemanticTokenGrid
    depth: np.ndarray | None
    descriptors: list[RegionDescriptor] = field(default_factory=list)


def image_features(backend, image: ImageRecord, cfg: dict):
    """Fused features, tokens, and optional depth for one image."""
    steps = int(cfg["inversion_steps"])
    stack, _ = backend.invert_and_extract(image, steps)
    fused = fuse_features(stack, FusionWeights(total_steps=steps)).fused
    tokens = backend.semantic_tokens(image)
    try:
        depth = backend.depth_features(image)
    except FeatureUnavailableError:
        depth = None
    return fused, tokens, depth, stack.grid_shape


def rebuild_bundle(backend, image: ImageRecord, mask: ClusterMask, cfg: dict) -> MaskBundle:
    """Reconstitute a MaskBundle around a persisted mask (restart path)."""
    fused, tokens, depth, _ = image_features(backend, image, cfg)
    descriptors = describe_regions(mask, fused, tokens)
    return MaskBundle(
        image=image, mask=mask, fused=fused, tokens=tokens, depth=depth, descriptors=descriptors
    )


def compute_mask_bundle(
    backend,
    image: ImageRecord,
    cfg: dict,
    base_mask: np.ndarray | None = None,
) -> MaskBundle:
    """Stage 1 for one image: invert, fuse, cluster, optimize, describe."""
    ccfg = cluster_config(cfg)
    fused, tokens, depth, grid_shape = image_features(backend, image, cfg)
    if base_mask is not None:
        mask = ingest_base_mask(
            base_mask, grid_shape, fused, depth, tokens, ccfg, image_id=image.id
        )
    else:
        seed = int(cfg["backend"]["seed"])
        mask = initial_clusters(fused, ccfg, seed=seed, image_id=image.id)
        mask = optimize_clusters(mask, fused, depth, tokens, ccfg)
    descriptors = describe_regions(mask, fused, tokens)
    return MaskBundle(
        image=image, mask=mask, fused=fused, tokens=tokens, depth=depth, descriptors=descriptors
    )


def compute_matches(
    content: MaskBundle, styles: Sequence[MaskBundle], cfg: dict
) -> MatchTable:
    """Stage 2: pool all style descriptors and match every content cluster."""
    pooled = [d for b in styles for d in b.descriptors]
    return match_gallery(content.descriptors, pooled, similarity_config(cfg))


def run_transfer(
    backend,
    content: MaskBundle,
    styles: Sequence[MaskBundle],
    matches: MatchTable,
    cfg: dict,
    on_step: Callable[[LossReport, np.ndarray], None] | None = None,
    job_id: str = "job",
) -> tuple[np.ndarray, list[LossReport]]:
    """Stage 3: build the sparse-attention plan and run guided sampling."""
    lcfg = loss_config(cfg)
    layers = list(lcfg.layer_ids) if lcfg.layer_ids is not None else backend.default_loss_layers()
    shapes = layer_shapes_for(backend, content.image.shape, layers)
    plan = build_attention_plan(
        content.mask, {b.image.id: b.mask for b in styles}, matches, shapes
    )
    return guided_sampling(
        content.image,
        [b.image for b in styles],
        plan,
        backend,
        lcfg,
        denoise_steps=int(cfg["transfer"]["denoise_steps"]),
        start_jitter=float(cfg["transfer"].get("start_jitter", 0.0)),
        job_id=job_id,
        on_step=on_step,
    )
