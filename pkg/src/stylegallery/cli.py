"""Batch front door: cluster / match / transfer / eval / serve.

Every command composes library operations; flags mirror the pipeline knobs
(lambda-c, k-max, merge-threshold, opt-steps, seed). A manifest JSON with
config snapshot, input hashes, and stage timings accompanies the artifacts.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np
import yaml

from . import pipeline
from .clustering import classification_accuracy, regions_from_annotation
from .errors import StyleGalleryError
from .maskio import load_image, load_label_map, load_mask, save_image, save_mask
from .matching import MatchTable
from .metrics import SyntheticBlockExtractor, evaluate_pair

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _result_config(config_file, backend, seed, extra):
    overrides: dict = {}
    if config_file:
        overrides = yaml.safe_load(Path(config_file).read_text()) or {}
    env_backend = os.environ.get("STYLEGALLERY_BACKEND")
    if env_backend:
        overrides.setdefault("backend", {}).setdefault("kind", env_backend)
    if backend:
        overrides.setdefault("backend", {})["kind"] = backend
    if seed is not None:
        overrides.setdefault("transfer", {})["seed"] = seed
    for path, value in extra.items():
        node = overrides
        *heads, leaf = path.split(".")
        for head in heads:
            node = node.setdefault(head, {})
        node[leaf] = value
    return pipeline.merge_config(overrides)


class _Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.monotonic()

            def __exit__(self, *exc):
                timer.stages[name] = round(time.monotonic() - self.t0, 4)

        return _Ctx()


def _write_manifest(out_dir: Path, cfg: dict, inputs: dict[str, Path], outputs: list[Path], timer: _Timer):
    manifest = {
        "config": cfg,
        "seed": cfg["transfer"]["seed"],
        "input_hashes": {name: _file_hash(p) for name, p in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "timings": timer.stages,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _fail(exc: Exception, error_json: bool, code: int):
    if error_json:
        click.echo(json.dumps({"error": str(exc), "type": type(exc).__name__}), err=True)
    else:
        click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
@click.option("--error-json", is_flag=True, help="Emit machine-readable error JSON on failure.")
@click.pass_context
def main(ctx, error_json):
    """StyleGallery: training-free semantic style transfer."""
    ctx.ensure_object(dict)
    ctx.obj["error_json"] = error_json


def _guard(ctx, fn):
    try:
        fn()
    except (StyleGalleryError, FileNotFoundError, KeyError, ValueError) as exc:
        _fail(exc, ctx.obj["error_json"], EXIT_VALIDATION)
    except Exception as exc:  # pragma: no cover - unexpected runtime failures
        _fail(exc, ctx.obj["error_json"], EXIT_RUNTIME)


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--k-max", default=10, show_default=True)
@click.option("--merge-threshold", default=0.85, show_default=True)
@click.option("--base-mask", type=click.Path(exists=True), help="External label map PNG.")
@click.option("--annotation", type=click.Path(exists=True), help="Region annotation PNG for accuracy report.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--backend", type=click.Choice(["synthetic", "diffusion"]))
@click.option("--seed", type=int)
@click.option("--config", "config_file", type=click.Path(exists=True))
@click.pass_context
def cluster(ctx, image_path, k_max, merge_threshold, base_mask, annotation, out_dir, backend, seed, config_file):
    """Compute the optimized semantic cluster mask for one image."""

    def run():
        cfg = _result_config(
            config_file, backend, seed,
            {"cluster.k_max": k_max, "cluster.merge_threshold": merge_threshold},
        )
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        be = pipeline.backend_from_config(cfg)
        image = load_image(image_path)
        timer = _Timer()
        with timer.stage("cluster"):
            base = load_label_map(base_mask) if base_mask else None
            bundle = pipeline.compute_mask_bundle(be, image, cfg, base_mask=base)
        png = out / f"{image.id}_mask.png"
        save_mask(bundle.mask, png, cfg["cluster"])
        outputs = [png, png.with_suffix(".json")]

        report = {"image": image.id, "n_clusters": bundle.mask.n_clusters}
        if annotation:
            ann = load_label_map(annotation)
            regions = regions_from_annotation(ann)
            report["accuracy"] = classification_accuracy(bundle.mask, regions)
        report_path = out / f"{image.id}_cluster_report.json"
        report_path.write_text(json.dumps(report, indent=2))
        outputs.append(report_path)
        _write_manifest(out, cfg, {"image": Path(image_path)}, outputs, timer)
        click.echo(json.dumps(report))

    _guard(ctx, run)


@main.command()
@click.option("--content-image", required=True, type=click.Path(exists=True))
@click.option("--content-mask", required=True, type=click.Path(exists=True))
@click.option("--style-images", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--style-masks", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--backend", type=click.Choice(["synthetic", "diffusion"]))
@click.option("--seed", type=int)
@click.option("--config", "config_file", type=click.Path(exists=True))
@click.pass_context
def match(ctx, content_image, content_mask, style_images, style_masks, out_path, backend, seed, config_file):
    """Match every content cluster to its best style cluster in the gallery."""

    def run():
        if len(style_images) != len(style_masks):
            raise StyleGalleryError("need one --style-masks per --style-images")
        cfg = _result_config(config_file, backend, seed, {})
        be = pipeline.backend_from_config(cfg)

        content = load_image(content_image)
        cmask, _ = load_mask(content_mask)
        content_bundle = pipeline.rebuild_bundle(be, content, cmask, cfg)
        style_bundles = []
        for img_path, mask_path in zip(style_images, style_masks):
            img = load_image(img_path, role="style")
            smask, _ = load_mask(mask_path)
            style_bundles.append(pipeline.rebuild_bundle(be, img, smask, cfg))

        table = pipeline.compute_matches(content_bundle, style_bundles, cfg)
        Path(out_path).write_text(json.dumps(table.as_dict(), indent=2))
        click.echo(f"wrote {out_path} ({len(table.entries)} entries)")

    _guard(ctx, run)


@main.command()
@click.option("--content", "content_path", required=True, type=click.Path(exists=True))
@click.option("--styles", "style_paths", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--lambda-c", type=float, help="Content-loss weight (default 0.26).")
@click.option("--k-max", type=int)
@click.option("--merge-threshold", type=float)
@click.option("--opt-steps", type=int)
@click.option("--denoise-steps", type=int)
@click.option("--matches", "matches_path", type=click.Path(exists=True), help="Reuse a matches.json (with overrides).")
@click.option("--backend", type=click.Choice(["synthetic", "diffusion"]))
@click.option("--seed", type=int)
@click.option("--config", "config_file", type=click.Path(exists=True))
@click.pass_context
def transfer(ctx, content_path, style_paths, out_dir, lambda_c, k_max, merge_threshold,
             opt_steps, denoise_steps, matches_path, backend, seed, config_file):
    """Full pipeline: cluster, match, and run the guided transfer."""

    def run():
        extra = {}
        if lambda_c is not None:
            extra["transfer.lambda_c"] = lambda_c
        if k_max is not None:
            extra["cluster.k_max"] = k_max
        if merge_threshold is not None:
            extra["cluster.merge_threshold"] = merge_threshold
        if opt_steps is not None:
            extra["transfer.opt_steps"] = opt_steps
        if denoise_steps is not None:
            extra["transfer.denoise_steps"] = denoise_steps
        cfg = _result_config(config_file, backend, seed, extra)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        be = pipeline.backend_from_config(cfg)
        timer = _Timer()

        content = load_image(content_path)
        styles = [load_image(p, role="style") for p in style_paths]

        with timer.stage("cluster"):
            content_bundle = pipeline.compute_mask_bundle(be, content, cfg)
            style_bundles = [pipeline.compute_mask_bundle(be, s, cfg) for s in styles]
        outputs = []
        for bundle in [content_bundle, *style_bundles]:
            png = out / f"{bundle.image.id}_mask.png"
            save_mask(bundle.mask, png, cfg["cluster"])
            outputs += [png, png.with_suffix(".json")]

        with timer.stage("match"):
            if matches_path:
                table = MatchTable.from_dict(json.loads(Path(matches_path).read_text()))
            else:
                table = pipeline.compute_matches(content_bundle, style_bundles, cfg)
        matches_out = out / "matches.json"
        matches_out.write_text(json.dumps(table.as_dict(), indent=2))
        outputs.append(matches_out)

        with timer.stage("transfer"):
            image, reports = pipeline.run_transfer(be, content_bundle, style_bundles, table, cfg)

        result_path = out / "result.png"
        save_image(image, result_path)
        curve_path = out / "loss_curve.csv"
        with open(curve_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "rsl", "gcl", "total"])
            for r in reports:
                writer.writerow([r.step, r.rsl, r.gcl, r.total])
        outputs += [result_path, curve_path]

        inputs = {"content": Path(content_path)}
        inputs.update({f"style_{i}": Path(p) for i, p in enumerate(style_paths)})
        manifest = _write_manifest(out, cfg, inputs, outputs, timer)
        click.echo(
            json.dumps(
                {
                    "result": str(result_path),
                    "result_sha256": _file_hash(result_path),
                    "steps": len(reports),
                    "final_loss": reports[-1].total,
                    "manifest": str(manifest),
                }
            )
        )

    _guard(ctx, run)


def _pair_files(stylized_dir: Path, style_dir: Path):
    stylized = sorted(p for p in stylized_dir.iterdir() if p.suffix.lower() == ".png")
    style = sorted(p for p in style_dir.iterdir() if p.suffix.lower() == ".png")
    if not stylized or len(stylized) != len(style):
        raise StyleGalleryError(
            f"need matching PNG counts: {len(stylized)} stylized vs {len(style)} style"
        )
    return list(zip(stylized, style))


@main.command(name="eval")
@click.option("--stylized", "stylized_dir", type=click.Path(exists=True))
@click.option("--style", "style_dir", type=click.Path(exists=True))
@click.option("--content", "content_dir", type=click.Path(exists=True), help="Unused by block metrics; reserved for LPIPS providers.")
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--sweep", help="e.g. lambda_c=0.22,0.26,0.29 (runs transfer per value).")
@click.option("--content-image", type=click.Path(exists=True), help="Transfer input for --sweep.")
@click.option("--styles", "style_paths", multiple=True, type=click.Path(exists=True), help="Transfer inputs for --sweep.")
@click.option("--jobs", default=1, show_default=True, help="Parallel pairs.")
@click.option("--opt-steps", type=int, help="Override optimization steps for --sweep runs.")
@click.option("--backend", type=click.Choice(["synthetic", "diffusion"]))
@click.option("--seed", type=int)
@click.option("--config", "config_file", type=click.Path(exists=True))
@click.pass_context
def eval_cmd(ctx, stylized_dir, style_dir, content_dir, report_path, sweep, content_image,
             style_paths, jobs, opt_steps, backend, seed, config_file):
    """Block-metric evaluation of stylized outputs, or a config sweep."""

    def evaluate_dirs():
        pairs = _pair_files(Path(stylized_dir), Path(style_dir))
        extractor = SyntheticBlockExtractor()

        def one(pair):
            a, b = pair
            rep = evaluate_pair(load_image(a), load_image(b, role="style"), extractor)
            return {"stylized": a.name, "style": b.name, **rep.as_dict()}

        if jobs > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(one, pairs))
        else:
            rows = [one(p) for p in pairs]
        return {
            "pairs": rows,
            "mean_style": float(np.mean([r["style"] for r in rows])),
            "mean_gram": float(np.mean([r["gram"] for r in rows])),
        }

    def evaluate_sweep():
        key, _, values = sweep.partition("=")
        if key != "lambda_c" or not values:
            raise StyleGalleryError("--sweep expects lambda_c=v1,v2,...")
        if not content_image or not style_paths:
            raise StyleGalleryError("--sweep needs --content-image and --styles")
        extractor = SyntheticBlockExtractor()
        rows = []
        for value in (float(v) for v in values.split(",")):
            extra = {"transfer.lambda_c": value}
            if opt_steps is not None:
                extra["transfer.opt_steps"] = opt_steps
            cfg = _result_config(config_file, backend, seed, extra)
            be = pipeline.backend_from_config(cfg)
            content = load_image(content_image)
            styles = [load_image(p, role="style") for p in style_paths]
            cb = pipeline.compute_mask_bundle(be, content, cfg)
            sbs = [pipeline.compute_mask_bundle(be, s, cfg) for s in styles]
            table = pipeline.compute_matches(cb, sbs, cfg)
            image, _ = pipeline.run_transfer(be, cb, sbs, table, cfg)
            from .backends import ImageRecord

            stylized = ImageRecord(id=f"sweep-{value}", pixels=image)
            scores = [evaluate_pair(stylized, s, extractor).as_dict() for s in styles]
            rows.append(
                {
                    "lambda_c": value,
                    "style": float(np.mean([s["style"] for s in scores])),
                    "gram": float(np.mean([s["gram"] for s in scores])),
                }
            )
        return {"sweep": rows}

    def run():
        if sweep:
            report = evaluate_sweep()
        else:
            if not stylized_dir or not style_dir:
                raise StyleGalleryError("--stylized and --style are required without --sweep")
            report = evaluate_dirs()
        Path(report_path).write_text(json.dumps(report, indent=2))
        click.echo(f"wrote {report_path}")

    _guard(ctx, run)


@main.command()
@click.option("--port", type=int, default=None)
@click.option("--data-dir", type=click.Path(), default=None)
@click.pass_context
def serve(ctx, port, data_dir):
    """Run the HTTP job service (uvicorn)."""

    def run():
        import uvicorn

        from .service import create_app

        resolved_port = port or int(os.environ.get("STYLEGALLERY_PORT", "8000"))
        app = create_app(data_dir=data_dir)
        uvicorn.run(app, host="0.0.0.0", port=resolved_port)

    _guard(ctx, run)


if __name__ == "__main__":
    main()
