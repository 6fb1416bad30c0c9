"""Energy-guided sampling with regional style losses.

During DDIM sampling the current latent's self-attention features are pulled
toward those of matched style regions (regional style loss) while the query
features stay anchored to the content branch (global content loss). The
combined energy drives Adam updates of the latent between denoising steps.

Gradients are derived analytically: the losses are L1 over softmax-attention
outputs, and the backend maps attention cotangents back to the latent via its
vector-Jacobian product.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .backends import AttentionBundle, ImageRecord, LatentState
from .clustering import ClusterMask, resize_labels
from .errors import GuidedSamplingError, InvalidArgumentError, ShapeMismatchError
from .matching import MatchTable

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Configuration and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossConfig:
    lambda_c: float = 0.26
    eta: float = 0.05
    opt_steps: int = 150
    layer_ids: tuple[int, ...] | None = None  # None: backend's last six layers
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lambda_c < 0:
            raise InvalidArgumentError("lambda_c must be >= 0")
        if self.eta <= 0:
            raise InvalidArgumentError("eta must be > 0")
        if self.opt_steps < 1:
            raise InvalidArgumentError("opt_steps must be >= 1")


@dataclass(frozen=True)
class LossReport:
    step: int
    rsl: float
    gcl: float
    total: float
    per_pair_rsl: tuple[float, ...]


# ---------------------------------------------------------------------------
# Sparse attention plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanPair:
    content_cluster: int
    style_image: str
    style_cluster: int


@dataclass
class LayerPlan:
    layer_id: int
    spatial_shape: tuple[int, int]
    content_masks: list[np.ndarray]  # bool (N,), one per pair
    style_indices: list[np.ndarray]  # int cell indices into the style image's grid


@dataclass
class SparseAttentionPlan:
    pairs: list[PlanPair]
    layers: list[LayerPlan]


def build_attention_plan(
    content_mask: ClusterMask,
    style_masks: dict[str, ClusterMask],
    matches: MatchTable,
    layer_shapes: Sequence[tuple[int, tuple[int, int]]],
) -> SparseAttentionPlan:
    """Resize cluster masks to each attention resolution and pair them up.

    Every content cell is active in exactly one pair's mask at every layer;
    a region that vanishes at a coarse layer simply contributes nothing
    there (logged).
    """
    pairs = [
        PlanPair(e.content_cluster, e.style_image, e.style_cluster) for e in matches.entries
    ]
    covered = {p.content_cluster for p in pairs}
    expected = set(range(content_mask.n_clusters))
    if covered != expected:
        raise InvalidArgumentError(
            f"match table covers clusters {sorted(covered)}, mask has {sorted(expected)}"
        )

    layers = []
    for layer_id, shape in layer_shapes:
        content_labels = resize_labels(content_mask.labels, shape).ravel()
        style_labels = {
            img: resize_labels(m.labels, shape).ravel() for img, m in style_masks.items()
        }
        content_masks, style_indices = [], []
        for p in pairs:
            if p.style_image not in style_labels:
                raise InvalidArgumentError(f"no style mask for image {p.style_image!r}")
            cmask = content_labels == p.content_cluster
            sidx = np.flatnonzero(style_labels[p.style_image] == p.style_cluster)
            if not cmask.any():
                log.info(
                    "content cluster %d vanishes at layer %d (%s); zero loss there",
                    p.content_cluster, layer_id, shape,
                )
            if sidx.size == 0:
                log.info(
                    "style cluster %d of %s vanishes at layer %d; zero loss there",
                    p.style_cluster, p.style_image, layer_id,
                )
            content_masks.append(cmask)
            style_indices.append(sidx)
        layers.append(
            LayerPlan(
                layer_id=layer_id,
                spatial_shape=shape,
                content_masks=content_masks,
                style_indices=style_indices,
            )
        )
    return SparseAttentionPlan(pairs=pairs, layers=layers)


def layer_shapes_for(backend, image_shape: tuple[int, int], layer_ids: Sequence[int]):
    latent = backend.latent_grid_shape(image_shape)
    return [(lid, backend.attention_spatial_shape(lid, latent)) for lid in layer_ids]


# ---------------------------------------------------------------------------
# Attention forward/backward
# ---------------------------------------------------------------------------


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    return p


def masked_attention(
    Q: np.ndarray, K: np.ndarray, V: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Softmax(QK^T/sqrt(d))V evaluated only on masked query rows.

    Unmasked rows are zero. K and V may be pre-sliced to any cell subset;
    an empty mask (or empty key set) yields a zero matrix.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (Q.shape[0],):
        raise ShapeMismatchError(f"mask length {mask.shape} vs {Q.shape[0]} queries")
    out = np.zeros((Q.shape[0], V.shape[1] if V.size else Q.shape[1]))
    if not mask.any() or K.shape[0] == 0:
        return out
    p = _softmax_rows(Q[mask] @ K.T / math.sqrt(Q.shape[1]))
    out[mask] = p @ V
    return out


def _attention_forward(Qm: np.ndarray, K: np.ndarray, V: np.ndarray):
    p = _softmax_rows(Qm @ K.T / math.sqrt(Qm.shape[1]))
    return p @ V, p


def _attention_backward(g: np.ndarray, p: np.ndarray, Qm: np.ndarray, K: np.ndarray, V: np.ndarray):
    """Cotangents of out = softmax(Qm K^T / sqrt(d)) V for all three inputs."""
    scale = 1.0 / math.sqrt(Qm.shape[1])
    dV = p.T @ g
    dp = g @ V.T
    ds = p * (dp - (dp * p).sum(axis=1, keepdims=True))
    dQm = ds @ K * scale
    dK = ds.T @ Qm * scale
    return dQm, dK, dV


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _rsl_layer(
    gen: AttentionBundle,
    style_bundles: dict[str, AttentionBundle],
    layer_plan: LayerPlan,
    pairs: Sequence[PlanPair],
    accumulate: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
) -> np.ndarray:
    """Per-pair regional style loss at one layer; optionally accumulates
    gradients w.r.t. the generated bundle into ``accumulate``."""
    if gen.spatial_shape != layer_plan.spatial_shape:
        raise ShapeMismatchError(
            f"layer {layer_plan.layer_id}: bundle {gen.spatial_shape} vs plan "
            f"{layer_plan.spatial_shape}"
        )
    per_pair = np.zeros(len(pairs))
    for i, pair in enumerate(pairs):
        cmask = layer_plan.content_masks[i]
        sidx = layer_plan.style_indices[i]
        if not cmask.any() or sidx.size == 0:
            continue
        style = style_bundles[pair.style_image]
        if style.spatial_shape != layer_plan.spatial_shape:
            raise ShapeMismatchError(
                f"layer {layer_plan.layer_id}: style bundle {style.spatial_shape} vs "
                f"plan {layer_plan.spatial_shape}"
            )
        Qm = gen.Q[cmask]
        Kg, Vg = gen.K[cmask], gen.V[cmask]
        Ks, Vs = style.K[sidx], style.V[sidx]

        self_out, p_self = _attention_forward(Qm, Kg, Vg)
        ref_out, p_ref = _attention_forward(Qm, Ks, Vs)
        diff = self_out - ref_out
        per_pair[i] = np.abs(diff).sum()

        if accumulate is not None:
            dQ, dK, dV = accumulate
            g = np.sign(diff)
            dq1, dk1, dv1 = _attention_backward(g, p_self, Qm, Kg, Vg)
            dq2, _, _ = _attention_backward(-g, p_ref, Qm, Ks, Vs)
            dQ[cmask] += dq1 + dq2
            dK[cmask] += dk1
            dV[cmask] += dv1
    return per_pair


def regional_style_loss(
    gen_bundles: Sequence[AttentionBundle],
    style_bundles: dict[str, Sequence[AttentionBundle]],
    plan: SparseAttentionPlan,
) -> tuple[float, np.ndarray]:
    """Regional style energy: sum over layers and matched pairs of the L1
    gap between in-region self-attention and region-vs-style attention."""
    if len(gen_bundles) != len(plan.layers):
        raise ShapeMismatchError("one generated bundle per planned layer required")
    per_pair = np.zeros(len(plan.pairs))
    for li, layer_plan in enumerate(plan.layers):
        styles_at_layer = {img: bundles[li] for img, bundles in style_bundles.items()}
        per_pair += _rsl_layer(gen_bundles[li], styles_at_layer, layer_plan, plan.pairs, None)
    return float(per_pair.sum()), per_pair


def global_content_loss(
    gen_Q: Sequence[np.ndarray], content_Q: Sequence[np.ndarray]
) -> float:
    """L1 distance between generated and content-branch queries, all layers."""
    total = 0.0
    for q, qc in zip(gen_Q, content_Q, strict=True):
        if q.shape != qc.shape:
            raise ShapeMismatchError(f"query shapes differ: {q.shape} vs {qc.shape}")
        total += float(np.abs(q - qc).sum())
    return total


def total_loss(rsl: float, gcl: float, cfg: LossConfig) -> float:
    return rsl + cfg.lambda_c * gcl


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    """Bias-corrected Adam direction; state persists across the whole run."""

    def __init__(self, shape, betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def direction(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Energy evaluation with gradient
# ---------------------------------------------------------------------------


def loss_and_grad(
    backend,
    latent: LatentState,
    layers: Sequence[int],
    content_bundles: Sequence[AttentionBundle],
    style_bundles: dict[str, Sequence[AttentionBundle]],
    plan: SparseAttentionPlan,
    cfg: LossConfig,
):
    """Evaluate the combined energy at ``latent`` and its latent gradient."""
    gen_bundles = backend.sample_step_attention(latent, layers)

    per_pair = np.zeros(len(plan.pairs))
    cotangents = []
    gcl = 0.0
    for li, layer_plan in enumerate(plan.layers):
        gen = gen_bundles[li]
        dQ = np.zeros_like(gen.Q)
        dK = np.zeros_like(gen.K)
        dV = np.zeros_like(gen.V)
        styles_at_layer = {img: bundles[li] for img, bundles in style_bundles.items()}
        per_pair += _rsl_layer(gen, styles_at_layer, layer_plan, plan.pairs, (dQ, dK, dV))

        qc = content_bundles[li].Q
        if qc.shape != gen.Q.shape:
            raise ShapeMismatchError(f"content query shape mismatch at layer {gen.layer_id}")
        gcl += float(np.abs(gen.Q - qc).sum())
        dQ += cfg.lambda_c * np.sign(gen.Q - qc)
        cotangents.append((dQ, dK, dV))

    rsl = float(per_pair.sum())
    total = total_loss(rsl, gcl, cfg)
    dz = backend.attention_vjp(latent, layers, cotangents)
    return rsl, per_pair, gcl, total, dz


# ---------------------------------------------------------------------------
# Guided sampling
# ---------------------------------------------------------------------------


def _inner_step_schedule(opt_steps: int, denoise_steps: int) -> list[int]:
    """ceil(opt/denoise) inner steps per denoising step, remainder dropped
    from the end of the schedule."""
    inner = math.ceil(opt_steps / denoise_steps)
    counts = [inner] * denoise_steps
    excess = inner * denoise_steps - opt_steps
    i = denoise_steps - 1
    while excess > 0:
        take = min(excess, counts[i])
        counts[i] -= take
        excess -= take
        i -= 1
    return counts


def guided_sampling(
    content: ImageRecord,
    styles: Sequence[ImageRecord],
    plan: SparseAttentionPlan,
    backend,
    cfg: LossConfig = LossConfig(),
    denoise_steps: int = 15,
    start_jitter: float = 0.0,
    job_id: str = "job",
    on_step: Callable[[LossReport, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, list[LossReport]]:
    """Run DDIM sampling from the content inversion, nudging the latent with
    Adam steps on the regional-style + content energy.

    Emits one LossReport per optimization step (cfg.opt_steps in total) and
    returns the decoded final image. Deterministic for a fixed backend seed.
    """
    if denoise_steps < 1:
        raise InvalidArgumentError("denoise_steps must be >= 1")
    layers = list(cfg.layer_ids) if cfg.layer_ids is not None else backend.default_loss_layers()
    if len(layers) != len(plan.layers) or any(
        lid != lp.layer_id for lid, lp in zip(layers, plan.layers)
    ):
        raise InvalidArgumentError("plan layers do not match configured layer ids")

    z0_c = backend.encode_image(content)
    eps_c = backend.image_noise(content)
    ab = backend.alpha_bar(denoise_steps)
    a = np.sqrt(ab)
    b = np.sqrt(1.0 - ab)

    z = a[denoise_steps] * z0_c + b[denoise_steps] * eps_c
    if start_jitter > 0.0:
        from .backends import _derived_rng, image_digest

        jit = _derived_rng(image_digest(content), backend.seed, "start-jitter")
        z = z + start_jitter * jit.normal(size=z.shape)

    adam = Adam(z.shape, betas=cfg.adam_betas, eps=cfg.adam_eps)
    schedule = _inner_step_schedule(cfg.opt_steps, denoise_steps)
    reports: list[LossReport] = []
    global_step = 0

    for t in range(denoise_steps, 0, -1):
        z0_hat = (z - b[t] * eps_c) / a[t]
        z = a[t - 1] * z0_hat + b[t - 1] * eps_c

        content_lat = LatentState(
            ref_id=content.id, z=a[t - 1] * z0_c + b[t - 1] * eps_c, timestep=t - 1
        )
        content_bundles = backend.sample_step_attention(content_lat, layers)
        style_bundles = {
            s.id: backend.sample_step_attention(
                LatentState(ref_id=s.id, z=backend.noised_latent(s, t - 1, denoise_steps), timestep=t - 1),
                layers,
            )
            for s in styles
        }

        for _ in range(schedule[denoise_steps - t]):
            gen_lat = LatentState(ref_id=job_id, z=z, timestep=t - 1)
            rsl, per_pair, gcl, total, dz = loss_and_grad(
                backend, gen_lat, layers, content_bundles, style_bundles, plan, cfg
            )
            global_step += 1
            if not np.isfinite(total) or not np.isfinite(dz).all():
                raise GuidedSamplingError(
                    f"non-finite loss or gradient at optimization step {global_step} "
                    f"(denoise step {t}, layers {layers})"
                )
            z = z - cfg.eta * adam.direction(dz)
            report = LossReport(
                step=global_step,
                rsl=rsl,
                gcl=gcl,
                total=total,
                per_pair_rsl=tuple(float(x) for x in per_pair),
            )
            reports.append(report)
            if on_step is not None:
                on_step(report, z)

    assert global_step == cfg.opt_steps
    return backend.decode_latent(z), reports
