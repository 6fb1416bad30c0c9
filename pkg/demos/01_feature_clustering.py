"""Stage 1 walkthrough: diffusion features to an optimized cluster mask.

Inverts a fixture image with the synthetic backend, fuses the per-step
feature grids with the sigmoid step weights, clusters with PCA + k-means,
and runs the three optimization passes. Writes the weight curve and a mask
overlay to demos/output/.
"""

import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stylegallery import (
    ClusterOptConfig,
    FusionWeights,
    SyntheticBackend,
    fuse_features,
    initial_clusters,
    optimize_clusters,
)
from stylegallery.fixtures import sweep_suite

OUT = pathlib.Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

backend = SyntheticBackend(seed=0)
fixture = sweep_suite()[1]  # the "close-tones" image
image = fixture.image
print(f"image: {image.id}, {image.shape[0]}x{image.shape[1]}")

# 1. Inversion: one feature grid per step, plus the noised latent.
stack, latent = backend.invert_and_extract(image, steps=15)
print(f"extracted {len(stack.per_step)} feature grids of shape {stack.per_step[0].shape}")

# 2. Index-adaptive fusion. Early steps (low noise) dominate.
weights = FusionWeights(total_steps=15)
fused = fuse_features(stack, weights).fused
plt.figure(figsize=(5, 3))
plt.plot(range(16), weights.normalized, marker="o")
plt.xlabel("step index t")
plt.ylabel("normalized weight")
plt.title("fusion weights (steepness 5, inflection 0.7)")
plt.tight_layout()
plt.savefig(OUT / "fusion_weights.png", dpi=120)
print(f"weight sum = {weights.normalized.sum():.12f}, monotone decreasing")

# 3. PCA + k-means, then the three cleanup passes.
cfg = ClusterOptConfig(k_max=10, merge_threshold=0.85)
mask = initial_clusters(fused, cfg, seed=0, image_id=image.id)
print(f"k-means produced {mask.n_clusters} clusters")

tokens = backend.semantic_tokens(image)
depth = backend.depth_features(image)
optimized = optimize_clusters(mask, fused, depth, tokens, cfg)
print(f"after optimization: {optimized.n_clusters} clusters")

fig, axes = plt.subplots(1, 3, figsize=(12, 4))
axes[0].imshow(image.pixels)
axes[0].set_title("input")
axes[1].imshow(mask.labels, cmap="tab10", interpolation="nearest")
axes[1].set_title(f"k-means (k={mask.n_clusters})")
axes[2].imshow(optimized.labels, cmap="tab10", interpolation="nearest")
axes[2].set_title(f"optimized ({optimized.n_clusters} regions)")
for ax in axes:
    ax.axis("off")
plt.tight_layout()
plt.savefig(OUT / "cluster_masks.png", dpi=120)
print(f"wrote {OUT / 'fusion_weights.png'} and {OUT / 'cluster_masks.png'}")
