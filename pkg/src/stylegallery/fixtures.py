"""Deterministic fixture images with region annotations.

The sweep suite drives clustering evaluation: each image is a composition of
flat and checker-textured grayscale zones whose token-descriptor angles are
engineered so that low merge thresholds over-merge distinct regions while a
0.95 threshold leaves one multi-texture region fragmented. Zones sit on the
16px feature/token lattice, so block statistics are exact per cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import ImageRecord

CELL = 16  # fixture lattice, matches the synthetic backend's feature stride


@dataclass(frozen=True)
class Zone:
    rows: tuple[int, int]  # half-open, in lattice cells
    cols: tuple[int, int]
    tone: float
    contrast: float = 0.0  # checker amplitude; 0 means flat
    region: int = 0  # annotation id


@dataclass(frozen=True)
class AnnotatedFixture:
    name: str
    image: ImageRecord
    annotation: np.ndarray  # (cells, cells) region ids


def _paint(zones: list[Zone], cells: int) -> tuple[np.ndarray, np.ndarray]:
    size = cells * CELL
    px = np.zeros((size, size))
    ann = -np.ones((cells, cells), dtype=int)
    yy, xx = np.mgrid[0:size, 0:size]
    checker = ((xx // 8) + (yy // 8)) % 2  # 8px checks, two per lattice cell
    for z in zones:
        r0, r1 = z.rows[0] * CELL, z.rows[1] * CELL
        c0, c1 = z.cols[0] * CELL, z.cols[1] * CELL
        patch = z.tone + z.contrast * (checker[r0:r1, c0:c1] - 0.5)
        px[r0:r1, c0:c1] = patch
        ann[z.rows[0] : z.rows[1], z.cols[0] : z.cols[1]] = z.region
    assert (ann >= 0).all(), "zones must tile the image"
    px = np.clip(px, 0.0, 1.0)
    return np.repeat(px[:, :, None], 3, axis=2), ann


def sweep_suite(cells: int = 16) -> list[AnnotatedFixture]:
    """Five annotated images for the merge-threshold sweep."""
    n = cells
    half = n // 2
    specs = {
        # Wide tone separation plus one textured zone: stable at every threshold.
        "baseline": [
            Zone((0, n), (0, half), tone=0.14, region=0),
            Zone((0, half), (half, n), tone=0.86, region=1),
            Zone((half, n), (half, n), tone=0.50, contrast=0.50, region=2),
        ],
        # Neighboring tones: the whole image over-merges once the threshold
        # drops to 0.75 and below.
        "close-tones": [
            Zone((0, n), (0, 4), tone=0.10, region=0),
            Zone((0, 5), (4, n), tone=0.42, region=1),
            Zone((5, 11), (4, n), tone=0.68, region=2),
            Zone((11, n), (4, n), tone=0.90, contrast=0.65, region=3),
        ],
        # One region built from three texture intensities: coherent at 0.85,
        # fragmented at 0.95.
        "striped-region": [
            Zone((0, n), (0, n), tone=0.12, region=0),
            Zone((3, 13), (4, 7), tone=0.80, contrast=0.00, region=1),
            Zone((3, 13), (7, 10), tone=0.80, contrast=0.22, region=1),
            Zone((3, 13), (10, 13), tone=0.80, contrast=0.55, region=1),
        ],
        # Mid-distance tones: collapses at 0.65 and below.
        "mid-tones": [
            Zone((0, n), (0, n), tone=0.88, contrast=0.75, region=0),
            Zone((2, 8), (2, 14), tone=0.62, region=1),
            Zone((9, 15), (2, 14), tone=0.34, region=2),
        ],
        # Far tones that only collapse at 0.55.
        "far-tones": [
            Zone((0, n), (0, n), tone=0.90, contrast=0.85, region=0),
            Zone((2, 14), (2, 7), tone=0.30, region=1),
            Zone((2, 14), (9, 14), tone=0.64, region=2),
        ],
    }
    fixtures = []
    for name, zones in specs.items():
        pixels, ann = _paint(zones, cells)
        fixtures.append(
            AnnotatedFixture(
                name=name,
                image=ImageRecord(id=f"sweep-{name}", pixels=pixels),
                annotation=ann,
            )
        )
    return fixtures


# Fragment families reuse three well-separated tones, so same-tone families
# merge semantically and the ingested mask collapses far below k_max.
_FAMILY_TONES = np.array([0.10, 0.50, 0.90, 0.50, 0.90, 0.10])


def fragment_mask(cells: int = 32, n_fragments: int = 40, families: int = 5) -> np.ndarray:
    """An external label map with many small fragments from few families."""
    labels = np.zeros((cells, cells), dtype=int)
    rng = np.random.default_rng(99)
    placed = 0
    attempts = 0
    while placed < n_fragments and attempts < 10_000:
        attempts += 1
        r = int(rng.integers(0, cells - 3))
        c = int(rng.integers(0, cells - 3))
        fam = 1 + placed % families
        if (labels[r : r + 3, c : c + 3] == 0).all():
            labels[r : r + 3, c : c + 3] = fam
            placed += 1
    assert placed == n_fragments
    return labels


def fragment_image(cells: int = 32) -> ImageRecord:
    """Image whose luminance tracks the fragment families."""
    labels = fragment_mask(cells)
    px = _FAMILY_TONES[labels]
    px = np.repeat(np.repeat(px, CELL, axis=0), CELL, axis=1)
    return ImageRecord(id="fragments", pixels=np.repeat(px[:, :, None], 3, axis=2))


def demo_pair(size: int = 128) -> tuple[ImageRecord, list[ImageRecord]]:
    """A small content image plus a two-image style gallery for end-to-end runs."""
    half = size // 2
    content = np.zeros((size, size, 3))
    content[:, :half] = [0.20, 0.22, 0.30]  # dark ground
    content[:, half:] = [0.75, 0.72, 0.60]  # bright sky
    content[half + 8 : size - 8, 8 : half - 8] = [0.45, 0.40, 0.35]

    style_a = np.zeros((size, size, 3))
    style_a[:half, :] = [0.85, 0.45, 0.15]  # warm band
    style_a[half:, :] = [0.30, 0.10, 0.25]

    style_b = np.zeros((size, size, 3))
    style_b[:, :half] = [0.10, 0.35, 0.65]  # cool band
    style_b[:, half:] = [0.55, 0.75, 0.85]

    return (
        ImageRecord(id="demo-content", pixels=content, role="content"),
        [
            ImageRecord(id="demo-style-a", pixels=style_a, role="style"),
            ImageRecord(id="demo-style-b", pixels=style_b, role="style"),
        ],
    )
