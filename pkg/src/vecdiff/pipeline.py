"""Bundled two-stage model: components, tensorization, sampling, persistence."""

from __future__ import annotations

import numpy as np
import torch

from . import checkpoint as ckpt
from .codec import (
    EMBED_DIM,
    MAX_SLOTS,
    EmbeddingNormalizer,
    PathVae,
    assemble_tensor,
    canonicalize_path,
    decode_tensor,
)
from .condition import RemoteEmbedder, StyleRegistry, TextEmbedding, ToyEmbedder, format_styled_prompt
from .denoiser import DenoiserConfig, VectorDenoiser, attach_lora
from .diffusion import cosine_schedule, ddpm_step
from .errors import ConfigError, TooManyPaths
from .svg import SvgDocument, parse_svg
from .training import TensorDataset, pack_text_batch

__all__ = [
    "TextToVectorModel",
    "tensorize_manifest",
    "collect_geometries",
    "embedder_from_meta",
]

UNIT_VIEWBOX = (0.0, 0.0, 1.0, 1.0)


def _doc_embeddings(doc: SvgDocument, vae: PathVae):
    """Per-path (z, color, transform) for one document."""
    geos, colors, transforms = [], [], []
    for path in doc.paths:
        g, _res, tr, col = canonicalize_path(path, viewbox=doc.viewbox)
        geos.append(g.reshape(-1))
        colors.append(col)
        transforms.append(tr)
    if not geos:
        return []
    zs = vae.transform(np.stack(geos))
    return list(zip(zs, colors, transforms))


def collect_geometries(manifest):
    """Flattened canonical control points for every path in the corpus."""
    geos = []
    for entry in manifest.entries:
        doc = parse_svg(manifest.resolve(entry).read_text(encoding="utf-8"))
        for path in doc.paths:
            g, _res, _tr, _col = canonicalize_path(path, viewbox=doc.viewbox)
            geos.append(g.reshape(-1))
    return np.stack(geos)


def tensorize_manifest(manifest, vae: PathVae, normalizer: EmbeddingNormalizer | None = None):
    """Tensorize a corpus; fits the normalizer when none is given.

    Documents with more than MAX_SLOTS paths are filtered out (the corpus
    contract, not an error here). Returns (TensorDataset, normalizer).
    """
    per_doc = []
    captions = []
    for entry in manifest.entries:
        doc = parse_svg(manifest.resolve(entry).read_text(encoding="utf-8"))
        if len(doc.paths) > MAX_SLOTS:
            continue
        per_doc.append(_doc_embeddings(doc, vae))
        captions.append(entry.caption)
    if normalizer is None:
        flat = np.stack([np.concatenate([z, c, tr]) for embs in per_doc for z, c, tr in embs])
        normalizer = EmbeddingNormalizer().fit(flat)
    values = np.zeros((len(per_doc), EMBED_DIM, MAX_SLOTS), dtype=np.float32)
    masks = np.zeros((len(per_doc), MAX_SLOTS), dtype=bool)
    for i, embs in enumerate(per_doc):
        tensor = assemble_tensor(embs, normalizer)
        values[i] = tensor.values
        masks[i] = tensor.mask
    return TensorDataset(values=values, masks=masks, captions=captions), normalizer


def embedder_from_meta(meta: dict):
    if meta["type"] == "toy":
        return ToyEmbedder(dim=meta["dim"], seed=meta["seed"])
    if meta["type"] == "remote":
        return RemoteEmbedder(url=meta["url"], dim=meta.get("dim"))
    raise ConfigError(f"unknown embedder type {meta['type']!r}")


def _sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def count_histograms(dataset: TensorDataset) -> dict:
    """Per-caption (and global) path-count histograms of a tensorized corpus.

    Sampling draws a slot count from these so the denoiser runs under the
    same attention mask statistics it was trained with.
    """
    global_hist = np.zeros(MAX_SLOTS + 1, dtype=int)
    per_prompt: dict[str, np.ndarray] = {}
    for mask, caption in zip(dataset.masks, dataset.captions):
        n = int(mask.sum())
        global_hist[n] += 1
        per_prompt.setdefault(caption, np.zeros(MAX_SLOTS + 1, dtype=int))[n] += 1
    return {
        "global": global_hist.tolist(),
        "per_prompt": {k: v.tolist() for k, v in per_prompt.items()},
    }


class TextToVectorModel:
    """Denoiser + path VAE + normalizer + schedule + embedder + styles."""

    def __init__(self, denoiser: VectorDenoiser, vae: PathVae, normalizer: EmbeddingNormalizer,
                 sched, embedder, registry: StyleRegistry | None = None, meta: dict | None = None):
        self.denoiser = denoiser
        self.vae = vae
        self.normalizer = normalizer
        self.sched = sched
        self.embedder = embedder
        self.registry = registry if registry is not None else StyleRegistry(dim=denoiser.cfg.context_dim)
        self.meta = dict(meta or {})

    # -- conditioning ------------------------------------------------------

    def embed_prompt(self, prompt: str, style: str | None = None) -> TextEmbedding:
        if style is None:
            return self.embedder.embed(prompt)
        _text, emb = format_styled_prompt(prompt, style, self.registry, self.embedder)
        return emb

    def styled_prompt(self, prompt: str, style: str | None) -> str:
        if style is None:
            return prompt
        text, _emb = format_styled_prompt(prompt, style, self.registry, self.embedder)
        return text

    # -- sampling ----------------------------------------------------------

    def _draw_slot_count(self, prompt: str, generator: torch.Generator) -> int:
        hists = self.meta.get("slot_counts")
        if not hists:
            return MAX_SLOTS
        hist = np.asarray(hists["per_prompt"].get(prompt, hists["global"]), dtype=np.float64)
        if hist.sum() <= 0:
            return MAX_SLOTS
        cdf = np.cumsum(hist / hist.sum())
        u = torch.rand(1, generator=generator).item()
        return int(np.searchsorted(cdf, u, side="right"))

    def sample_tensors(self, prompts: list[str], styles=None, seed: int = 0,
                       cfg_scale: float = 3.0, slot_counts=None) -> torch.Tensor:
        """Batched DDPM sampling; each sample has its own rng stream.

        Each sample runs under a slot mask whose count is drawn from the
        training corpus' count histogram (stored in the checkpoint), so the
        denoiser sees the attention pattern it was trained with; masked-off
        slots are zeroed in the returned tensors, the padding convention of
        the rest of the system. Deterministic given seed; a batch equals the
        concatenation of single-sample calls with the same per-index seeds.
        """
        if cfg_scale < 0:
            raise ConfigError("cfg_scale must be >= 0")
        b = len(prompts)
        styles = styles if styles is not None else [None] * b
        embs = [self.embed_prompt(p, s) for p, s in zip(prompts, styles)]
        text, text_mask = pack_text_batch(embs)
        null_text, null_mask = pack_text_batch([self.embedder.null()] * b)

        gens = [torch.Generator().manual_seed(_sample_seed(seed, i)) for i in range(b)]
        if slot_counts is None:
            slot_counts = [self._draw_slot_count(p, g) for p, g in zip(prompts, gens)]
        slot_mask = torch.zeros(b, MAX_SLOTS, dtype=torch.bool)
        for i, n in enumerate(slot_counts):
            slot_mask[i, : max(int(n), 1)] = True

        self.denoiser.eval()
        with torch.no_grad():
            s = torch.stack([torch.randn(EMBED_DIM, MAX_SLOTS, generator=g) for g in gens])
            for t in range(self.sched.T, 0, -1):
                eps_c = self.denoiser(s, t, text, slot_mask=slot_mask, text_mask=text_mask)
                if cfg_scale == 1.0:
                    eps = eps_c
                else:
                    eps_n = self.denoiser(s, t, null_text, slot_mask=slot_mask, text_mask=null_mask)
                    eps = eps_n + cfg_scale * (eps_c - eps_n)
                rows = [ddpm_step(s[i], t, eps[i], self.sched, gens[i], clip_range=(-1.0, 1.0))
                        for i in range(b)]
                s = torch.stack(rows)
            s = s * slot_mask[:, None, :]
        return s

    def sample(self, prompt: str, style: str | None = None, seed: int = 0,
               cfg_scale: float = 3.0) -> SvgDocument:
        s = self.sample_tensors([prompt], [style], seed=seed, cfg_scale=cfg_scale)[0]
        return self.decode(s)

    def decode(self, tensor) -> SvgDocument:
        values = tensor.detach().numpy() if isinstance(tensor, torch.Tensor) else tensor
        return decode_tensor(values, self.vae, self.normalizer, viewbox=UNIT_VIEWBOX)

    def encode_latents(self, docs: list[SvgDocument]) -> np.ndarray:
        """Path latents (n_paths, 20) for metric computations."""
        zs = []
        for doc in docs:
            for z, _c, _tr in _doc_embeddings(doc, self.vae):
                zs.append(z)
        if not zs:
            return np.zeros((0, self.vae.latent_dim))
        return np.stack(zs)

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        params = {}
        for name, tensor in self.denoiser.state_dict().items():
            params[f"denoiser.{name}"] = tensor.numpy()
        for name, tensor in self.vae.net_.state_dict().items():
            params[f"vae.{name}"] = tensor.numpy()
        meta = {
            "kind": "t2v",
            "denoiser_config": {
                "blocks": self.denoiser.cfg.blocks,
                "hidden": self.denoiser.cfg.hidden,
                "heads": self.denoiser.cfg.heads,
                "context_dim": self.denoiser.cfg.context_dim,
                "mlp_ratio": self.denoiser.cfg.mlp_ratio,
                "head_dim": self.denoiser.cfg.head_dim,
            },
            "lora": (
                {"rank": self.denoiser._lora["rank"], "alpha": self.denoiser._lora["alpha"]}
                if self.denoiser._lora is not None else None
            ),
            "vae_params": {
                "latent_dim": self.vae.latent_dim,
                "hidden": self.vae.hidden,
            },
            "normalizer": {"lo": self.normalizer.lo_.tolist(), "hi": self.normalizer.hi_.tolist()},
            "schedule": {"kind": "cosine", "T": self.sched.T},
            "embedder": (
                {"type": "toy", "dim": self.embedder.dim, "seed": self.embedder.seed}
                if isinstance(self.embedder, ToyEmbedder)
                else {"type": "remote", "url": self.embedder.url, "dim": self.embedder.dim}
            ),
            "registry": self.registry.to_json(),
            "extra": self.meta,
        }
        ckpt.save_checkpoint(path, params, meta)

    @classmethod
    def load(cls, path) -> "TextToVectorModel":
        params, meta = ckpt.load_checkpoint(path)
        cfg = DenoiserConfig(
            blocks=meta["denoiser_config"]["blocks"],
            hidden=meta["denoiser_config"]["hidden"],
            heads=meta["denoiser_config"]["heads"],
            context_dim=meta["denoiser_config"]["context_dim"],
            mlp_ratio=meta["denoiser_config"]["mlp_ratio"],
            head_dim=meta["denoiser_config"].get("head_dim"),
        )
        denoiser = VectorDenoiser(cfg)
        if meta.get("lora"):
            attach_lora(denoiser, rank=meta["lora"]["rank"], alpha=meta["lora"]["alpha"])
        denoiser.load_state_dict({
            k[len("denoiser."):]: torch.from_numpy(v)
            for k, v in params.items() if k.startswith("denoiser.")
        })
        denoiser.eval()
        vae = PathVae(**meta["vae_params"])
        vae.load_net({k[len("vae."):]: torch.from_numpy(v) for k, v in params.items() if k.startswith("vae.")})
        normalizer = EmbeddingNormalizer()
        normalizer.lo_ = np.asarray(meta["normalizer"]["lo"], dtype=np.float64)
        normalizer.hi_ = np.asarray(meta["normalizer"]["hi"], dtype=np.float64)
        sched = cosine_schedule(meta["schedule"]["T"])
        embedder = embedder_from_meta(meta["embedder"])
        registry = StyleRegistry.from_json(meta["registry"])
        return cls(denoiser, vae, normalizer, sched, embedder, registry, meta=meta.get("extra", {}))
