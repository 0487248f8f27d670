"""First-stage training: noise-prediction regression over tensorized SVGs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .condition import TextEmbedding
from .diffusion import NoiseSchedule, q_sample
from .errors import ConfigError, Diverged

__all__ = ["TrainConfig", "TensorDataset", "train_stage1", "masked_eps_loss", "pack_text_batch"]


@dataclass
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 16
    lr: float = 3e-5
    cfg_dropout: float = 0.1
    timesteps: int = 1000
    seed: int = 0
    checkpoint_interval: int = 0     # 0 = no mid-run checkpoints
    grad_clip: float = 1.0
    deterministic: bool = False      # pin to one thread for exact replays
    dataset: str = ""                # manifest path (CLI)
    vae_checkpoint: str = ""         # reuse a trained path VAE (CLI)
    vae_iterations: int = 4000
    vae_min_samples: int = 1000
    blocks: int = 6
    hidden: int = 192
    heads: int = 6
    context_dim: int = 64
    out: str = ""

    def validate(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.cfg_dropout <= 1.0:
            raise ConfigError("cfg_dropout must be in [0, 1]")
        if self.iterations < 0 or self.batch_size < 1 or self.timesteps < 2:
            raise ConfigError("bad iterations/batch_size/timesteps")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        data = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()


@dataclass
class TensorDataset:
    """Tensorized corpus: values (N, 28, 32), masks (N, 32), captions (N)."""

    values: np.ndarray
    masks: np.ndarray
    captions: list[str]

    def __len__(self):
        return len(self.values)


def pack_text_batch(embeddings: list[TextEmbedding]):
    """Pad a list of embeddings to a common length; returns (tensor, mask)."""
    dim = embeddings[0].dim
    length = max(e.vectors.shape[0] for e in embeddings)
    out = np.zeros((len(embeddings), length, dim), dtype=np.float32)
    mask = np.zeros((len(embeddings), length), dtype=bool)
    for i, e in enumerate(embeddings):
        n = e.vectors.shape[0]
        out[i, :n] = e.vectors
        mask[i, :n] = True
    return torch.from_numpy(out), torch.from_numpy(mask)


def masked_eps_loss(eps: torch.Tensor, eps_pred: torch.Tensor, slot_mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error over real slots only; padded slots carry no loss."""
    m = slot_mask[:, None, :].to(eps.dtype)
    denom = m.sum() * eps.shape[1]
    return ((eps - eps_pred) ** 2 * m).sum() / denom


def train_stage1(dataset: TensorDataset, model, embedder, config: TrainConfig,
                 sched: NoiseSchedule, on_checkpoint=None) -> dict:
    """Train the denoiser with uniform timesteps and 10% prompt dropout.

    Returns a history dict with per-step losses and the realized fraction of
    null-conditioned samples. on_checkpoint(step) fires every
    checkpoint_interval steps when set.
    """
    config.validate()
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    old_threads = torch.get_num_threads()
    if config.deterministic:
        torch.set_num_threads(1)
    try:
        rng = np.random.default_rng(config.seed)
        gen = torch.Generator().manual_seed(config.seed)
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
        values = torch.from_numpy(np.ascontiguousarray(dataset.values, dtype=np.float32))
        masks = torch.from_numpy(np.ascontiguousarray(dataset.masks, dtype=bool))
        embed_cache = {c: embedder.embed(c) for c in set(dataset.captions)}
        null = embedder.null()

        losses = []
        dropped = 0
        total = 0
        model.train()
        for step in range(config.iterations):
            idx = rng.integers(0, len(dataset), config.batch_size)
            t = torch.from_numpy(rng.integers(1, config.timesteps + 1, config.batch_size))
            eps = torch.randn(config.batch_size, 28, 32, generator=gen)
            s0 = values[idx]
            slot_mask = masks[idx]
            s_t = q_sample(s0, t, eps, sched)

            drop = rng.random(config.batch_size) < config.cfg_dropout
            dropped += int(drop.sum())
            total += config.batch_size
            embs = [null if d else embed_cache[dataset.captions[i]] for i, d in zip(idx, drop)]
            text, text_mask = pack_text_batch(embs)

            eps_pred = model(s_t, t, text, slot_mask=slot_mask, text_mask=text_mask)
            loss = masked_eps_loss(eps, eps_pred, slot_mask)
            if not torch.isfinite(loss):
                raise Diverged(f"non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            losses.append(loss.item())
            if config.checkpoint_interval and on_checkpoint and (step + 1) % config.checkpoint_interval == 0:
                on_checkpoint(step + 1)
        model.eval()
        return {"loss": losses, "null_fraction": dropped / max(total, 1)}
    finally:
        torch.set_num_threads(old_threads)
