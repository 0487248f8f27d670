"""Command-line interface.

Subcommands: ingest, gen-data, train-vae, train-t2v, customize, sample,
render, eval, serve-mock-teacher. Usage errors exit 2 (argparse); runtime
failures print one machine-readable JSON line to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .codec import PathVae
from .condition import StyleRegistry, ToyEmbedder
from .customize import (
    CustomizeConfig,
    MockTeacherServer,
    ProceduralTeacher,
    RemoteTeacher,
    load_style_file,
    run_customization,
)
from .denoiser import DenoiserConfig, VectorDenoiser
from .diffusion import cosine_schedule
from .errors import ConfigError, VecdiffError
from .metrics import ToyImageEmbedder, ToyJointEmbedder, ink_mask, path_fid, style_alignment, text_alignment
from .pipeline import TextToVectorModel, collect_geometries, count_histograms, tensorize_manifest
from .raster import render_document, save_png
from .svg import parse_svg, serialize_svg
from .toydata import generate_toy_dataset, ingest_directory, load_manifest
from .training import TrainConfig, train_stage1


def _cmd_gen_data(args) -> int:
    classes = [c for chunk in args.classes for c in chunk.split(",") if c]
    manifest = generate_toy_dataset(classes, args.per_class, args.seed, args.out)
    print(f"wrote {len(manifest.entries)} SVGs to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    manifest = ingest_directory(getattr(args, "in"), args.out)
    print(f"wrote manifest with {len(manifest.entries)} entries to {args.out}")
    return 0


def _cmd_train_vae(args) -> int:
    manifest = load_manifest(args.manifest)
    geos = collect_geometries(manifest)
    vae = PathVae(iterations=args.iterations, seed=args.seed,
                  min_samples=args.min_samples).fit(geos)
    params = {f"vae.{k}": v.numpy() for k, v in vae.net_.state_dict().items()}
    meta = {"kind": "vae", "vae_params": {"latent_dim": vae.latent_dim, "hidden": vae.hidden}}
    save_checkpoint(args.out, params, meta)
    print(f"trained path VAE on {len(geos)} paths -> {args.out}")
    return 0


def _load_vae(path) -> PathVae:
    params, meta = load_checkpoint(path)
    if meta.get("kind") not in ("vae", "t2v"):
        raise ConfigError(f"checkpoint {path} is not a VAE or model checkpoint")
    vae = PathVae(**meta["vae_params"])
    vae.load_net({k[len("vae."):]: torch.from_numpy(v) for k, v in params.items() if k.startswith("vae.")})
    return vae


def _cmd_train_t2v(args) -> int:
    config = TrainConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    out = args.out or config.out
    if not out:
        raise ConfigError("no output path (pass --out or set it in the config)")
    if not config.dataset:
        raise ConfigError("config.dataset must point at a manifest")
    manifest = load_manifest(config.dataset)
    if config.vae_checkpoint:
        vae = _load_vae(config.vae_checkpoint)
    else:
        geos = collect_geometries(manifest)
        vae = PathVae(iterations=config.vae_iterations, seed=config.seed,
                      min_samples=config.vae_min_samples).fit(geos)
    dataset, normalizer = tensorize_manifest(manifest, vae)
    torch.manual_seed(config.seed)
    denoiser = VectorDenoiser(DenoiserConfig(
        blocks=config.blocks, hidden=config.hidden, heads=config.heads,
        context_dim=config.context_dim,
    ))
    embedder = ToyEmbedder(dim=config.context_dim, seed=config.seed)
    sched = cosine_schedule(config.timesteps)
    model = TextToVectorModel(denoiser, vae, normalizer, sched, embedder,
                              StyleRegistry(dim=config.context_dim),
                              meta={"slot_counts": count_histograms(dataset)})
    history = train_stage1(
        dataset, denoiser, embedder, config, sched,
        on_checkpoint=lambda step: model.save(f"{out}.step{step}"),
    )
    model.meta["train_config"] = json.loads(config.to_json())
    model.save(out)
    losses = history["loss"]
    print(f"trained {config.iterations} steps; loss {np.mean(losses[:50]):.4f} -> "
          f"{np.mean(losses[-50:]):.4f}; saved {out}")
    return 0


def _cmd_customize(args) -> int:
    model = TextToVectorModel.load(args.ckpt)
    if args.config:
        config = CustomizeConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = CustomizeConfig(prompts=["icon"])
    styles = load_style_file(args.styles)
    if args.teacher == "procedural":
        teacher = ProceduralTeacher(styles)
    else:
        if not args.url:
            raise ConfigError("remote teacher needs --url")
        teacher = RemoteTeacher(args.url)
    out = args.out or config.out
    if not out:
        raise ConfigError("no output path (pass --out or set it in the config)")
    history = run_customization(
        model, list(styles), teacher, config,
        on_checkpoint=lambda step: model.save(out),
    )
    print(f"customized {len(styles)} styles over {len(history['l_img'])} steps "
          f"({history['pairs_generated']} pairs); saved {out}")
    return 0


def _cmd_sample(args) -> int:
    model = TextToVectorModel.load(args.ckpt)
    doc = model.sample(args.prompt, style=args.style, seed=args.seed, cfg_scale=args.cfg_scale)
    Path(args.out).write_text(serialize_svg(doc), encoding="utf-8")
    styled = model.styled_prompt(args.prompt, args.style)
    print(f"sampled {len(doc.paths)} paths for {styled!r} -> {args.out}")
    return 0


def _cmd_render(args) -> int:
    doc = parse_svg(Path(args.svg).read_text(encoding="utf-8"))
    img = render_document(doc, (args.res, args.res), softness=args.softness)
    save_png(img, args.png)
    print(f"rendered {args.svg} at {args.res}x{args.res} -> {args.png}")
    return 0


def _cmd_eval(args) -> int:
    model = TextToVectorModel.load(args.ckpt)
    manifest = load_manifest(args.manifest)
    ref_docs = [parse_svg(manifest.resolve(e).read_text(encoding="utf-8")) for e in manifest.entries]
    captions = [e.caption for e in manifest.entries]

    if args.samples_dir:
        files = sorted(Path(args.samples_dir).glob("*.svg"))
        sample_docs = [parse_svg(f.read_text(encoding="utf-8")) for f in files]
        prompts = [f.stem.rstrip("0123456789").rstrip("_- ") or f.stem for f in files]
    else:
        unique = sorted(set(captions))
        prompts = [unique[i % len(unique)] for i in range(args.n_samples)]
        tensors = model.sample_tensors(prompts, seed=args.seed, cfg_scale=args.cfg_scale)
        sample_docs = [model.decode(t) for t in tensors]

    ref_latents = model.encode_latents(ref_docs)
    sample_latents = model.encode_latents(sample_docs)
    fid = path_fid(sample_latents, ref_latents)

    res = (64, 64)
    sample_images = [render_document(d, res) for d in sample_docs]
    ref_images = [render_document(d, res) for d in ref_docs]
    image_embedder = ToyImageEmbedder()
    style = style_alignment(sample_images, ref_images, image_embedder)

    templates = {}
    for cap in sorted(set(captions)):
        masks = [ink_mask(img) for img, c in zip(ref_images, captions) if c == cap]
        templates[cap] = np.mean(masks, axis=0)
    joint = ToyJointEmbedder(templates)
    text = text_alignment(sample_images, prompts, joint)

    digest_src = json.dumps({
        "ckpt": str(args.ckpt), "manifest": str(args.manifest),
        "samples_dir": str(args.samples_dir), "n_samples": args.n_samples,
        "seed": args.seed, "cfg_scale": args.cfg_scale,
    }, sort_keys=True)
    report = {
        "path_fid": fid,
        "style_alignment": style,
        "text_alignment": text,
        "n": len(sample_docs),
        "config_digest": hashlib.sha256(digest_src.encode()).hexdigest()[:16],
    }
    Path(args.report).write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(report))
    return 0


def _cmd_serve_mock_teacher(args) -> int:
    server = MockTeacherServer(port=args.port)
    print(f"mock teacher listening on {server.url} (ctrl-c to stop)", flush=True)
    try:
        server._server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vecdiff", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a procedural toy dataset")
    g.add_argument("--classes", action="append", required=True,
                   help="comma-separated class names (repeatable)")
    g.add_argument("--per-class", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_data)

    g = sub.add_parser("ingest", help="build a manifest from an SVG directory")
    g.add_argument("--in", dest="in", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_ingest)

    g = sub.add_parser("train-vae", help="train the path autoencoder")
    g.add_argument("--manifest", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--iterations", type=int, default=4000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--min-samples", type=int, default=1000,
                   help="corpus floor for the VAE fit (contract default 1000)")
    g.set_defaults(func=_cmd_train_vae)

    g = sub.add_parser("train-t2v", help="stage-1 training from a config file")
    g.add_argument("--config", required=True)
    g.add_argument("--out", default="")
    g.set_defaults(func=_cmd_train_t2v)

    g = sub.add_parser("customize", help="stage-2 style customization")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--styles", required=True, help="style configuration JSON")
    g.add_argument("--teacher", choices=["procedural", "remote"], default="procedural")
    g.add_argument("--url", default="")
    g.add_argument("--config", default="")
    g.add_argument("--out", default="")
    g.set_defaults(func=_cmd_customize)

    g = sub.add_parser("sample", help="sample an SVG from a checkpoint")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--prompt", required=True)
    g.add_argument("--style", default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cfg-scale", type=float, default=3.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_sample)

    g = sub.add_parser("render", help="rasterize an SVG file to PNG")
    g.add_argument("--svg", required=True)
    g.add_argument("--png", required=True)
    g.add_argument("--res", type=int, default=256)
    g.add_argument("--softness", type=float, default=0.7)
    g.set_defaults(func=_cmd_render)

    g = sub.add_parser("eval", help="metric report against a reference manifest")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--manifest", required=True)
    g.add_argument("--samples-dir", default="")
    g.add_argument("--n-samples", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cfg-scale", type=float, default=3.0)
    g.add_argument("--report", required=True)
    g.set_defaults(func=_cmd_eval)

    g = sub.add_parser("serve-mock-teacher", help="run the loopback teacher server")
    g.add_argument("--port", type=int, default=8787)
    g.set_defaults(func=_cmd_serve_mock_teacher)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VecdiffError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
