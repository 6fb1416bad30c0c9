"""Stage 3 walkthrough: energy-guided sampling.

Runs the full pipeline on the demo pair and plots the loss curves. The
regional style loss pulls each content cluster's attention toward its
matched style cluster while the content loss anchors the queries.
"""

import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from stylegallery import pipeline
from stylegallery.fixtures import demo_pair
from stylegallery.maskio import save_image

OUT = pathlib.Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = pipeline.merge_config({"transfer": {"opt_steps": 150, "denoise_steps": 15, "seed": 7}})
backend = pipeline.backend_from_config(cfg)
content, styles = demo_pair(size=128)

content_bundle = pipeline.compute_mask_bundle(backend, content, cfg)
style_bundles = [pipeline.compute_mask_bundle(backend, s, cfg) for s in styles]
matches = pipeline.compute_matches(content_bundle, style_bundles, cfg)
for e in matches.entries:
    print(f"cluster {e.content_cluster} -> {e.style_image}/{e.style_cluster} (score {e.score:.3f})")

image, reports = pipeline.run_transfer(backend, content_bundle, style_bundles, matches, cfg)
print(f"{len(reports)} optimization steps, total loss {reports[0].total:.1f} -> {reports[-1].total:.1f}")

save_image(content.pixels, OUT / "transfer_content.png")
save_image(image, OUT / "transfer_result.png")

steps = [r.step for r in reports]
plt.figure(figsize=(6, 4))
plt.plot(steps, [r.rsl for r in reports], label="regional style loss")
plt.plot(steps, [r.gcl for r in reports], label="global content loss")
plt.plot(steps, [r.total for r in reports], label="total", linewidth=2)
plt.xlabel("optimization step")
plt.ylabel("loss")
plt.legend()
plt.tight_layout()
plt.savefig(OUT / "transfer_losses.png", dpi=120)
print(f"wrote {OUT / 'transfer_result.png'} and {OUT / 'transfer_losses.png'}")
