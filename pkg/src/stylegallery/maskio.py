"""File formats: images, 16-bit label-map PNGs, and their JSON sidecars."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import ImageRecord
from .clustering import ClusterMask
from .errors import InvalidArgumentError


def load_image(path: str | Path, role: str = "content", image_id: str | None = None) -> ImageRecord:
    p = Path(path)
    try:
        img = Image.open(p).convert("RGB")
    except Exception as exc:
        raise InvalidArgumentError(f"cannot decode image {p}: {exc}") from exc
    pixels = np.asarray(img, dtype=float) / 255.0
    return ImageRecord(id=image_id or p.stem, pixels=pixels, role=role, source_path=str(p))


def save_image(pixels: np.ndarray, path: str | Path) -> None:
    arr = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(Path(path))


def image_from_bytes(data: bytes, image_id: str, role: str = "content") -> ImageRecord:
    import io

    try:
        img = Image.open(io.BytesIO(data)).convert("RGB")
    except Exception as exc:
        raise InvalidArgumentError(f"cannot decode uploaded image {image_id!r}: {exc}") from exc
    return ImageRecord(id=image_id, pixels=np.asarray(img, dtype=float) / 255.0, role=role)


def image_to_png_bytes(pixels: np.ndarray) -> bytes:
    import io

    arr = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def mask_to_png_bytes(mask: ClusterMask) -> bytes:
    import io

    if mask.n_clusters > 65535:
        raise InvalidArgumentError("label map exceeds 16-bit range")
    buf = io.BytesIO()
    Image.fromarray(mask.labels.astype(np.uint16)).save(buf, format="PNG")
    return buf.getvalue()


def mask_sidecar(mask: ClusterMask, config: dict | None = None) -> dict:
    return {
        "image_id": mask.image_id,
        "n_clusters": mask.n_clusters,
        "provenance": mask.provenance,
        "grid_shape": list(mask.grid_shape),
        "config": config or {},
    }


def save_mask(mask: ClusterMask, png_path: str | Path, config: dict | None = None) -> Path:
    """Label map as single-channel 16-bit PNG plus a ``.json`` sidecar."""
    png_path = Path(png_path)
    png_path.write_bytes(mask_to_png_bytes(mask))
    sidecar = png_path.with_suffix(".json")
    sidecar.write_text(json.dumps(mask_sidecar(mask, config), indent=2))
    return sidecar


def load_mask(png_path: str | Path) -> tuple[ClusterMask, dict]:
    png_path = Path(png_path)
    labels = np.asarray(Image.open(png_path), dtype=np.int64)
    sidecar_path = png_path.with_suffix(".json")
    if not sidecar_path.exists():
        raise InvalidArgumentError(f"mask sidecar missing: {sidecar_path}")
    meta = json.loads(sidecar_path.read_text())
    mask = ClusterMask(
        image_id=meta["image_id"],
        labels=labels,
        n_clusters=int(meta["n_clusters"]),
        provenance=meta.get("provenance", "auto"),
    )
    return mask, meta


def load_label_map(png_path: str | Path) -> np.ndarray:
    """Bare label grid (no sidecar required), e.g. an external base mask."""
    return np.asarray(Image.open(Path(png_path)), dtype=np.int64)
