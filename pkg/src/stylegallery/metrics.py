"""Evaluation harness: block-matched style score, Gram loss, ArtFID.

Images are split into 16 non-overlapping 128x128 blocks; a pluggable
extractor turns each block into a feature vector. Stylized and style blocks
are put in optimal one-to-one correspondence (Hungarian assignment) under
cosine distance for the style score and under L1 Gram distance for the Gram
loss. FID and LPIPS come from external providers; this module owns only the
ArtFID composition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from PIL import Image
from scipy.optimize import linear_sum_assignment

from .backends import ImageRecord
from .errors import InvalidArgumentError, ShapeMismatchError

log = logging.getLogger(__name__)

BLOCK_SIZE = 128
BLOCK_GRID = (4, 4)
CANVAS = BLOCK_SIZE * BLOCK_GRID[0]  # 512


@dataclass(frozen=True)
class BlockFeatureSet:
    image_id: str
    blocks: np.ndarray  # (16, F), row-major over the 4x4 block grid
    block_grid: tuple[int, int] = BLOCK_GRID

    def __post_init__(self):
        expected = self.block_grid[0] * self.block_grid[1]
        if self.blocks.ndim != 2 or self.blocks.shape[0] != expected:
            raise ShapeMismatchError(
                f"expected {expected} block vectors, got {self.blocks.shape}"
            )


@dataclass(frozen=True)
class MetricReport:
    style: float
    gram: float
    fid: float | None = None
    lpips: float | None = None
    artfid: float | None = None

    def __post_init__(self):
        if self.fid is not None and self.lpips is not None and self.artfid is not None:
            expected = (1.0 + self.fid) * (1.0 + self.lpips)
            if abs(self.artfid - expected) > 1e-9:
                raise InvalidArgumentError("artfid does not match (1+fid)*(1+lpips)")

    def as_dict(self) -> dict:
        return {
            "style": self.style,
            "gram": self.gram,
            "fid": self.fid,
            "lpips": self.lpips,
            "artfid": self.artfid,
        }


class BlockFeatureExtractor(Protocol):
    """Per-block feature provider (a VGG site in production)."""

    name: str

    def extract(self, block: np.ndarray) -> np.ndarray: ...


class SyntheticBlockExtractor:
    """Histogram + gradient statistics; deterministic, model-free."""

    name = "synthetic-histogram"
    bins = 8

    def extract(self, block: np.ndarray) -> np.ndarray:
        hists = [
            np.histogram(block[:, :, c], bins=self.bins, range=(0.0, 1.0))[0]
            for c in range(3)
        ]
        hist = np.concatenate(hists) / block[:, :, 0].size
        y = block @ np.array([0.2126, 0.7152, 0.0722])
        gx = np.abs(np.diff(y, axis=1)).mean() if y.shape[1] > 1 else 0.0
        gy = np.abs(np.diff(y, axis=0)).mean() if y.shape[0] > 1 else 0.0
        stats = np.array([y.mean(), y.std(), gx, gy])
        return np.concatenate([hist, stats])


def _normalize_canvas(pixels: np.ndarray) -> np.ndarray:
    """Center-crop to square and resize to the 512x512 metric canvas."""
    H, W, _ = pixels.shape
    if (H, W) == (CANVAS, CANVAS):
        return pixels
    side = min(H, W)
    top, left = (H - side) // 2, (W - side) // 2
    cropped = pixels[top : top + side, left : left + side]
    img = Image.fromarray(np.round(cropped * 255.0).astype(np.uint8))
    resized = img.resize((CANVAS, CANVAS), Image.BILINEAR)
    log.debug("resized %dx%d image to metric canvas", H, W)
    return np.asarray(resized, dtype=float) / 255.0


def block_features(image: ImageRecord, extractor: BlockFeatureExtractor) -> BlockFeatureSet:
    """16 per-block feature vectors over the normalized 512x512 canvas."""
    px = _normalize_canvas(image.pixels)
    vectors = []
    for bi in range(BLOCK_GRID[0]):
        for bj in range(BLOCK_GRID[1]):
            block = px[
                bi * BLOCK_SIZE : (bi + 1) * BLOCK_SIZE,
                bj * BLOCK_SIZE : (bj + 1) * BLOCK_SIZE,
            ]
            vectors.append(extractor.extract(block))
    return BlockFeatureSet(image_id=image.id, blocks=np.asarray(vectors))


# ---------------------------------------------------------------------------
# Assignment machinery
# ---------------------------------------------------------------------------


def hungarian_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Optimal one-to-one assignment minimizing total cost."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise InvalidArgumentError(f"cost matrix must be 2-D, got {cost.shape}")
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, float(cost[rows, cols].sum())


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; zero-norm rows contribute 0 (flagged)."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    degenerate = (na == 0).sum() + (nb == 0).sum()
    if degenerate:
        log.warning("%d zero-norm block vectors; their similarities set to 0", degenerate)
    safe_a = np.where(na[:, None] == 0, 0.0, a / np.where(na[:, None] == 0, 1.0, na[:, None]))
    safe_b = np.where(nb[:, None] == 0, 0.0, b / np.where(nb[:, None] == 0, 1.0, nb[:, None]))
    return safe_a @ safe_b.T


def style_score(stylized: BlockFeatureSet, style: BlockFeatureSet) -> float:
    """Mean cosine similarity of Hungarian-matched blocks (higher is better)."""
    if stylized.blocks.shape[1] != style.blocks.shape[1]:
        raise ShapeMismatchError("block feature dimensions differ")
    sims = _cosine_matrix(stylized.blocks, style.blocks)
    rows, cols, _ = hungarian_assignment(1.0 - sims)
    return float(sims[rows, cols].mean())


def _gram(v: np.ndarray) -> np.ndarray:
    return np.outer(v, v)


def gram_loss(stylized: BlockFeatureSet, style: BlockFeatureSet) -> float:
    """Mean L1 distance between Gram matrices of matched blocks (lower is
    better). Matching minimizes the same L1 Gram distance."""
    if stylized.blocks.shape[1] != style.blocks.shape[1]:
        raise ShapeMismatchError("block feature dimensions differ")
    grams_a = np.einsum("bi,bj->bij", stylized.blocks, stylized.blocks)
    grams_b = np.einsum("bi,bj->bij", style.blocks, style.blocks)
    dist = np.abs(grams_a[:, None] - grams_b[None, :]).sum(axis=(2, 3))
    rows, cols, _ = hungarian_assignment(dist)
    return float(dist[rows, cols].mean())


def art_fid(fid: float, lpips: float) -> float:
    """Composite quality score (1 + FID) * (1 + LPIPS)."""
    if fid < 0 or lpips < 0:
        raise InvalidArgumentError("fid and lpips must be non-negative")
    return (1.0 + fid) * (1.0 + lpips)


def build_report(
    style: float, gram: float, fid: float | None = None, lpips: float | None = None
) -> MetricReport:
    artfid = art_fid(fid, lpips) if fid is not None and lpips is not None else None
    return MetricReport(style=style, gram=gram, fid=fid, lpips=lpips, artfid=artfid)


def evaluate_pair(
    stylized: ImageRecord,
    style: ImageRecord,
    extractor: BlockFeatureExtractor | None = None,
    fid: float | None = None,
    lpips: float | None = None,
) -> MetricReport:
    extractor = extractor or SyntheticBlockExtractor()
    fa = block_features(stylized, extractor)
    fb = block_features(style, extractor)
    return build_report(style_score(fa, fb), gram_loss(fa, fb), fid=fid, lpips=lpips)
