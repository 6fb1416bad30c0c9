"""Feature providers: denoiser intermediates, semantic tokens, depth, latents.

Two implementations share one interface. ``SyntheticBackend`` derives every
feature from seeded pseudo-random smooth fields blended with block statistics
of the input image, so downstream clustering and sampling behave like the
real pipeline while staying fast, CPU-only, and bit-deterministic.
``DiffusionBackend`` is the hook for a pretrained latent-diffusion model; it
is referenced by weights URI and degrades to a clear error when the weights
(or an accelerator) are absent, never to a silent synthetic swap.

All providers are immutable after construction and safe to share across
concurrent jobs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    BackendUnavailableError,
    FeatureUnavailableError,
    InvalidArgumentError,
    LayerRangeError,
    ResolutionError,
    ShapeMismatchError,
)

# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageRecord:
    """An input image: unit-interval RGB pixels plus bookkeeping."""

    id: str
    pixels: np.ndarray  # (H, W, 3) floats in [0, 1]
    role: str = "content"  # "content" | "style"
    source_path: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidArgumentError(f"pixels must be (H, W, 3), got {px.shape}")
        if px.shape[0] <= 0 or px.shape[1] <= 0:
            raise InvalidArgumentError("image must be non-empty")
        if px.min() < 0.0 or px.max() > 1.0:
            raise InvalidArgumentError("pixel values must lie in [0, 1]")
        if self.role not in ("content", "style"):
            raise InvalidArgumentError(f"unknown role {self.role!r}")
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass
class FeatureStack:
    """Per-timestep denoiser feature grids for one image, plus the fusion."""

    image_id: str
    per_step: list[np.ndarray]  # T+1 grids, each (C, h, w)
    grid_shape: tuple[int, int]
    total_steps: int
    fused: np.ndarray | None = None

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidArgumentError("total_steps must be >= 1")
        if len(self.per_step) != self.total_steps + 1:
            raise ShapeMismatchError(
                f"expected {self.total_steps + 1} per-step grids, got {len(self.per_step)}"
            )
        shapes = {g.shape for g in self.per_step}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"per-step grids disagree on shape: {shapes}")
        (c, h, w) = self.per_step[0].shape
        if (h, w) != tuple(self.grid_shape):
            raise ShapeMismatchError("grid_shape does not match per-step grids")
        if self.fused is not None and self.fused.shape != (c, h, w):
            raise ShapeMismatchError("fused grid shape mismatch")


@dataclass(frozen=True)
class SemanticTokenGrid:
    """One semantic token per patch cell."""

    image_id: str
    tokens: np.ndarray  # (gh, gw, D)
    grid_shape: tuple[int, int]

    def __post_init__(self):
        if self.tokens.ndim != 3 or self.tokens.shape[:2] != tuple(self.grid_shape):
            raise ShapeMismatchError(
                f"tokens shape {self.tokens.shape} vs grid {self.grid_shape}"
            )


@dataclass(frozen=True)
class LatentState:
    """A denoiser latent at a given timestep."""

    ref_id: str  # image id or job id
    z: np.ndarray  # (C', h', w')
    timestep: int


@dataclass(frozen=True)
class AttentionBundle:
    """Q/K/V captured from one self-attention layer."""

    layer_id: int
    Q: np.ndarray  # (N, d)
    K: np.ndarray
    V: np.ndarray
    spatial_shape: tuple[int, int]

    def __post_init__(self):
        n, d = self.Q.shape
        if self.K.shape != (n, d) or self.V.shape != (n, d):
            raise ShapeMismatchError("Q, K, V must share (N, d)")
        if self.spatial_shape[0] * self.spatial_shape[1] != n:
            raise ShapeMismatchError("spatial_shape product must equal N")


# ---------------------------------------------------------------------------
# Seeded derivation helpers
# ---------------------------------------------------------------------------


def _derived_rng(*parts) -> np.random.Generator:
    """RNG keyed by a hash of heterogeneous parts; stable across processes."""
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bytes):
            h.update(b"b" + p)
        elif isinstance(p, str):
            h.update(b"s" + p.encode("utf-8"))
        elif isinstance(p, (int, np.integer)):
            h.update(b"i" + int(p).to_bytes(16, "big", signed=True))
        elif isinstance(p, float):
            h.update(b"f" + np.float64(p).tobytes())
        else:
            raise TypeError(f"unhashable rng part: {type(p)}")
        h.update(b"\x00")
    return np.random.default_rng(int.from_bytes(h.digest()[:8], "big"))


def image_digest(image: ImageRecord) -> bytes:
    px = np.ascontiguousarray(image.pixels, dtype=np.float32)
    h = hashlib.sha256()
    h.update(np.asarray(px.shape, dtype=np.int64).tobytes())
    h.update(px.tobytes())
    return h.digest()


def _block_stats(pixels: np.ndarray, stride: int) -> dict[str, np.ndarray]:
    """Per-block image statistics on a stride x stride grid.

    Returns mean color planes, mean luminance, mean |gradient| along each
    axis, and luminance standard deviation: enough structure for synthetic
    features to track real region boundaries.
    """
    H, W, _ = pixels.shape
    h, w = H // stride, W // stride
    blocks = pixels[: h * stride, : w * stride].reshape(h, stride, w, stride, 3)
    mean_rgb = blocks.mean(axis=(1, 3))  # (h, w, 3)

    y = pixels @ np.array([0.2126, 0.7152, 0.0722])
    yb = y[: h * stride, : w * stride].reshape(h, stride, w, stride)
    mean_y = yb.mean(axis=(1, 3))
    std_y = np.sqrt(np.clip((yb**2).mean(axis=(1, 3)) - mean_y**2, 0.0, None))

    gx = np.zeros_like(y)
    gx[:, 1:] = np.abs(np.diff(y, axis=1))
    gy = np.zeros_like(y)
    gy[1:, :] = np.abs(np.diff(y, axis=0))
    gxb = gx[: h * stride, : w * stride].reshape(h, stride, w, stride).mean(axis=(1, 3))
    gyb = gy[: h * stride, : w * stride].reshape(h, stride, w, stride).mean(axis=(1, 3))

    return {
        "rgb": mean_rgb,
        "y": mean_y,
        "gx": gxb,
        "gy": gyb,
        "std_y": std_y,
    }


def _downsample2(x: np.ndarray) -> np.ndarray:
    """2x2 block mean over the trailing two axes."""
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


# ---------------------------------------------------------------------------
# Synthetic backend
# ---------------------------------------------------------------------------

# Weights applied to block statistics before they enter feature channels and
# token descriptors. Gradient/std terms are boosted so texture separates
# clusters as strongly as luminance does.
_TOKEN_BIAS = 0.35
_TOKEN_GRAD_WEIGHT = 2.0
_TOKEN_STD_WEIGHT = 1.5


class SyntheticBackend:
    """Deterministic CPU-only provider for every learned-model feature.

    Feature grids are seeded smooth random fields keyed by a hash of
    (image bytes, step index, extraction site, seed), blended with block
    statistics of the image so that clustering on synthetic features still
    tracks image structure. Accepts images whose sides are multiples of
    ``grid_stride``.
    """

    kind = "synthetic"
    grid_stride = 32
    feature_stride = 16
    token_stride = 16
    latent_stride = 16
    feature_channels = 64
    latent_channels = 4
    token_dim = 32
    attention_dim = 8
    n_attention_layers = 8

    def __init__(
        self,
        seed: int = 0,
        extraction_site: str = "decoder.penultimate",
        noise_amplitude: float = 0.15,
        depth_enabled: bool = True,
        attention_dim: int | None = None,
    ):
        self.seed = int(seed)
        self.extraction_site = extraction_site
        self.noise_amplitude = float(noise_amplitude)
        self.depth_enabled = bool(depth_enabled)
        if attention_dim is not None:
            self.attention_dim = int(attention_dim)
        # Orthonormal token projection: cosine similarities in descriptor
        # space survive the lift to token space exactly.
        g = _derived_rng(self.seed, "token-projection").normal(size=(self.token_dim, 5))
        q, _ = np.linalg.qr(g)
        self._token_proj = q[:, :5]
        self._attn_proj = {
            (layer, name): _derived_rng(self.seed, "attn-proj", layer, name).normal(
                size=(self.latent_channels, self.attention_dim)
            )
            / np.sqrt(self.latent_channels)
            for layer in range(self.n_attention_layers)
            for name in ("Q", "K", "V")
        }

    # -- resolution contracts ------------------------------------------------

    def validate_resolution(self, image: ImageRecord) -> None:
        H, W = image.shape
        if H % self.grid_stride or W % self.grid_stride:
            raise ResolutionError(
                f"image {image.id!r} is {H}x{W}; the synthetic backend requires "
                f"multiples of {self.grid_stride}"
            )

    def feature_grid_shape(self, image_shape: tuple[int, int]) -> tuple[int, int]:
        return image_shape[0] // self.feature_stride, image_shape[1] // self.feature_stride

    def latent_grid_shape(self, image_shape: tuple[int, int]) -> tuple[int, int]:
        return image_shape[0] // self.latent_stride, image_shape[1] // self.latent_stride

    # -- denoiser features -----------------------------------------------------

    def invert_and_extract(self, image: ImageRecord, steps: int) -> tuple[FeatureStack, LatentState]:
        """DDIM-style inversion: per-step feature grids plus the noised latent."""
        if steps < 1:
            raise InvalidArgumentError("steps must be >= 1")
        self.validate_resolution(image)

        digest = image_digest(image)
        h, w = self.feature_grid_shape(image.shape)
        stats = _block_stats(image.pixels, self.feature_stride)
        base = np.concatenate(
            [
                np.moveaxis(stats["rgb"], -1, 0),
                stats["y"][None],
                _TOKEN_GRAD_WEIGHT * stats["gx"][None],
                _TOKEN_GRAD_WEIGHT * stats["gy"][None],
                _TOKEN_STD_WEIGHT * stats["std_y"][None],
            ],
            axis=0,
        )  # (7, h, w)

        n_noise = self.feature_channels - base.shape[0]
        per_step = []
        for t in range(steps + 1):
            rng = _derived_rng(digest, self.seed, self.extraction_site, "features", t)
            raw = rng.normal(size=(n_noise, h, w))
            smooth = ndimage.uniform_filter(raw, size=(1, 5, 5), mode="reflect")
            grid = np.concatenate([base, self.noise_amplitude * smooth], axis=0)
            per_step.append(grid)

        stack = FeatureStack(
            image_id=image.id,
            per_step=per_step,
            grid_shape=(h, w),
            total_steps=steps,
        )
        z0 = self.encode_image(image)
        eps = self.image_noise(image)
        a, b = self._ab(steps, steps)
        latent = LatentState(ref_id=image.id, z=a * z0 + b * eps, timestep=steps)
        return stack, latent

    # -- semantic tokens -------------------------------------------------------

    def semantic_tokens(self, image: ImageRecord) -> SemanticTokenGrid:
        H, W = image.shape
        if H % self.token_stride or W % self.token_stride:
            raise ResolutionError(
                f"image {image.id!r} is {H}x{W}; token patches require multiples "
                f"of {self.token_stride}"
            )
        stats = _block_stats(image.pixels, self.token_stride)
        desc = np.stack(
            [
                np.full_like(stats["y"], _TOKEN_BIAS),
                stats["y"] - 0.5,
                _TOKEN_GRAD_WEIGHT * stats["gx"],
                _TOKEN_GRAD_WEIGHT * stats["gy"],
                _TOKEN_STD_WEIGHT * stats["std_y"],
            ],
            axis=-1,
        )  # (gh, gw, 5)
        tokens = desc @ self._token_proj.T  # (gh, gw, D)
        return SemanticTokenGrid(image_id=image.id, tokens=tokens, grid_shape=tokens.shape[:2])

    # -- depth -----------------------------------------------------------------

    def depth_features(self, image: ImageRecord) -> np.ndarray:
        """Smooth depth proxy on the clustering grid (luminance ramp)."""
        if not self.depth_enabled:
            raise FeatureUnavailableError("depth provider disabled for this backend")
        self.validate_resolution(image)
        stats = _block_stats(image.pixels, self.feature_stride)
        d = stats["y"]
        lo, hi = d.min(), d.max()
        if hi - lo < 1e-12:
            return np.zeros_like(d)
        return (d - lo) / (hi - lo)

    # -- latents and schedule ---------------------------------------------------

    def encode_image(self, image: ImageRecord) -> np.ndarray:
        self.validate_resolution(image)
        stats = _block_stats(image.pixels, self.latent_stride)
        return np.concatenate([np.moveaxis(stats["rgb"], -1, 0), stats["y"][None]], axis=0)

    def decode_latent(self, z: np.ndarray) -> np.ndarray:
        rgb = np.clip(z[:3], 0.0, 1.0)
        up = np.repeat(np.repeat(rgb, self.latent_stride, axis=1), self.latent_stride, axis=2)
        return np.moveaxis(up, 0, -1)

    def image_noise(self, image: ImageRecord) -> np.ndarray:
        h, w = self.latent_grid_shape(image.shape)
        rng = _derived_rng(image_digest(image), self.seed, "latent-noise")
        return rng.normal(size=(self.latent_channels, h, w))

    def alpha_bar(self, total_steps: int) -> np.ndarray:
        """Cumulative signal fraction, linear from 1 at t=0 down to 0.3 at t=T."""
        t = np.arange(total_steps + 1, dtype=float)
        return 1.0 - 0.7 * t / total_steps

    def _ab(self, t: int, total_steps: int) -> tuple[float, float]:
        ab = self.alpha_bar(total_steps)[t]
        return float(np.sqrt(ab)), float(np.sqrt(1.0 - ab))

    def noised_latent(self, image: ImageRecord, t: int, total_steps: int) -> np.ndarray:
        """Closed-form forward noising of the image's clean latent."""
        a, b = self._ab(t, total_steps)
        return a * self.encode_image(image) + b * self.image_noise(image)

    # -- attention --------------------------------------------------------------

    def attention_layer_ids(self) -> list[int]:
        return list(range(self.n_attention_layers))

    def default_loss_layers(self) -> list[int]:
        """The last six self-attention layers."""
        return self.attention_layer_ids()[-6:]

    def attention_spatial_shape(self, layer_id: int, latent_shape: tuple[int, int]) -> tuple[int, int]:
        h, w = latent_shape
        if layer_id < self.n_attention_layers // 2:
            return h, w
        return h // 2, w // 2

    def _layer_cells(self, z: np.ndarray, layer_id: int) -> tuple[np.ndarray, tuple[int, int]]:
        h, w = z.shape[1], z.shape[2]
        shape = self.attention_spatial_shape(layer_id, (h, w))
        grid = z if shape == (h, w) else _downsample2(z)
        cells = grid.reshape(grid.shape[0], -1).T  # (N, C')
        return cells, shape

    def sample_step_attention(self, latent: LatentState, layer_ids: Sequence[int]) -> list[AttentionBundle]:
        """Capture Q/K/V per requested layer; never mutates the latent."""
        self._check_layers(layer_ids)
        bundles = []
        for layer in layer_ids:
            cells, shape = self._layer_cells(latent.z, layer)
            bundles.append(
                AttentionBundle(
                    layer_id=layer,
                    Q=cells @ self._attn_proj[(layer, "Q")],
                    K=cells @ self._attn_proj[(layer, "K")],
                    V=cells @ self._attn_proj[(layer, "V")],
                    spatial_shape=shape,
                )
            )
        return bundles

    def attention_vjp(
        self,
        latent: LatentState,
        layer_ids: Sequence[int],
        cotangents: Iterable[tuple[np.ndarray, np.ndarray, np.ndarray]],
    ) -> np.ndarray:
        """Adjoint of ``sample_step_attention``: maps (dQ, dK, dV) per layer
        back to a gradient with respect to the latent tensor."""
        self._check_layers(layer_ids)
        z = latent.z
        dz = np.zeros_like(z)
        for layer, (dq, dk, dv) in zip(layer_ids, cotangents):
            d_cells = (
                dq @ self._attn_proj[(layer, "Q")].T
                + dk @ self._attn_proj[(layer, "K")].T
                + dv @ self._attn_proj[(layer, "V")].T
            )  # (N, C')
            h, w = self.attention_spatial_shape(layer, (z.shape[1], z.shape[2]))
            d_grid = d_cells.T.reshape(z.shape[0], h, w)
            if (h, w) == (z.shape[1], z.shape[2]):
                dz += d_grid
            else:
                dz += np.repeat(np.repeat(d_grid, 2, axis=1), 2, axis=2) / 4.0
        return dz

    def _check_layers(self, layer_ids: Sequence[int]) -> None:
        valid = set(self.attention_layer_ids())
        for layer in layer_ids:
            if layer not in valid:
                raise LayerRangeError(
                    f"layer {layer} outside backend range 0..{self.n_attention_layers - 1}"
                )

    def run_metadata(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "extraction_site": self.extraction_site,
            "feature_channels": self.feature_channels,
            "grid_stride": self.grid_stride,
        }


# ---------------------------------------------------------------------------
# Diffusion backend stub
# ---------------------------------------------------------------------------


@dataclass
class DiffusionBackend:
    """Pretrained latent-diffusion provider, loaded lazily from a weights URI.

    This build ships without model weights or an accelerator; every call
    degrades to ``BackendUnavailableError`` pointing at the synthetic
    fallback rather than silently substituting it.
    """

    weights_uri: str = ""
    seed: int = 0
    extraction_site: str = "decoder.penultimate"
    kind: str = field(default="diffusion", init=False)

    def _unavailable(self) -> BackendUnavailableError:
        return BackendUnavailableError(
            f"diffusion backend weights {self.weights_uri!r} are not loadable in "
            "this environment; use the synthetic backend (backend.kind='synthetic') "
            "for a deterministic CPU fallback"
        )

    def invert_and_extract(self, image: ImageRecord, steps: int):
        raise self._unavailable()

    def semantic_tokens(self, image: ImageRecord):
        raise self._unavailable()

    def depth_features(self, image: ImageRecord):
        raise self._unavailable()

    def sample_step_attention(self, latent: LatentState, layer_ids: Sequence[int]):
        raise self._unavailable()


def create_backend(config: dict | None = None):
    """Build a backend from a ``backend.*`` config mapping.

    Recognized keys: ``kind`` (synthetic | diffusion), ``seed``,
    ``weights_uri``, ``extraction_site``.
    """
    cfg = dict(config or {})
    kind = cfg.get("kind", "synthetic")
    seed = int(cfg.get("seed", 0))
    site = cfg.get("extraction_site", "decoder.penultimate")
    if kind == "synthetic":
        return SyntheticBackend(seed=seed, extraction_site=site)
    if kind == "diffusion":
        return DiffusionBackend(weights_uri=cfg.get("weights_uri", ""), seed=seed, extraction_site=site)
    raise InvalidArgumentError(f"unknown backend kind {kind!r}")
