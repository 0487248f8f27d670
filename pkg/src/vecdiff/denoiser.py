"""Transformer noise predictor over the 32 path slots.

DiT-flavored blocks: masked self-attention across slots, cross-attention to
text context vectors, feed-forward; every branch is modulated (shift, scale,
gate) by the timestep embedding through adaptive layer normalization. The
modulation projections are zero-initialized so a fresh model ignores t and
the residual branches start closed. Low-rank adapters can be attached to all
attention projections for parameter-efficient fine-tuning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import AlreadyAttached, NotAttached, ShapeMismatch

__all__ = [
    "DenoiserConfig",
    "PAPER_PRESET",
    "DESK_PRESET",
    "VectorDenoiser",
    "attach_lora",
    "merge_lora",
    "detach_lora",
    "lora_parameters",
]


@dataclass(frozen=True)
class DenoiserConfig:
    blocks: int = 6
    hidden: int = 192
    heads: int = 6
    context_dim: int = 64
    mlp_ratio: int = 4
    embed_dim: int = 28
    slots: int = 32
    # attention inner width is heads * head_dim; defaults to hidden, which
    # requires divisibility. 800/12 needs the explicit escape hatch.
    head_dim: int | None = None

    def __post_init__(self):
        if self.head_dim is None and self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")

    @property
    def resolved_head_dim(self) -> int:
        return self.head_dim if self.head_dim is not None else self.hidden // self.heads


PAPER_PRESET = DenoiserConfig(blocks=28, hidden=800, heads=12, head_dim=66)
DESK_PRESET = DenoiserConfig(blocks=6, hidden=192, heads=6)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features for integer timesteps; t is a (B,) tensor."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class _Attention(nn.Module):
    """Multi-head attention with explicit q/k/v/out projections (LoRA targets)."""

    def __init__(self, hidden: int, heads: int, kv_dim: int | None = None, head_dim: int | None = None):
        super().__init__()
        kv_dim = kv_dim or hidden
        self.heads = heads
        self.head_dim = head_dim if head_dim is not None else hidden // heads
        inner = self.heads * self.head_dim
        self.q = nn.Linear(hidden, inner)
        self.k = nn.Linear(kv_dim, inner)
        self.v = nn.Linear(kv_dim, inner)
        self.out = nn.Linear(inner, hidden)

    def forward(self, x, context, key_mask=None):
        b, n, _ = x.shape
        m = context.shape[1]
        q = self.q(x).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(context).view(b, m, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(context).view(b, m, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, n, -1)
        return self.out(y)


def _modulate(x, shift, scale):
    return x * (1.0 + scale[:, None, :]) + shift[:, None, :]


class _Block(nn.Module):
    """Self-attention, cross-attention, feed-forward; 9 modulation channels."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        h = cfg.hidden
        self.norm1 = nn.LayerNorm(h, elementwise_affine=False)
        self.self_attn = _Attention(h, cfg.heads, head_dim=cfg.resolved_head_dim)
        self.norm2 = nn.LayerNorm(h, elementwise_affine=False)
        self.cross_attn = _Attention(h, cfg.heads, kv_dim=cfg.context_dim, head_dim=cfg.resolved_head_dim)
        self.norm3 = nn.LayerNorm(h, elementwise_affine=False)
        self.ff = nn.Sequential(
            nn.Linear(h, cfg.mlp_ratio * h), nn.GELU(), nn.Linear(cfg.mlp_ratio * h, h)
        )
        # per-block offset added to the shared time modulation; zero-init
        self.mod_offset = nn.Parameter(torch.zeros(9 * h))

    def forward(self, x, mod, text, slot_mask, text_mask):
        (sh1, s1, g1, sh2, s2, g2, sh3, s3, g3) = (mod + self.mod_offset).chunk(9, dim=-1)
        y = _modulate(self.norm1(x), sh1, s1)
        x = x + g1[:, None, :] * self.self_attn(y, y, key_mask=slot_mask)
        x = x + g2[:, None, :] * self.cross_attn(_modulate(self.norm2(x), sh2, s2), text, key_mask=text_mask)
        x = x + g3[:, None, :] * self.ff(_modulate(self.norm3(x), sh3, s3))
        return x


class VectorDenoiser(nn.Module):
    """eps-predictor over SVG tensors, conditioned on text and timestep."""

    def __init__(self, cfg: DenoiserConfig = DESK_PRESET):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.in_proj = nn.Linear(cfg.embed_dim, h)
        self.pos_emb = nn.Parameter(torch.randn(cfg.slots, h) * 0.02)
        self.time_mlp = nn.Sequential(nn.Linear(h, h), nn.SiLU(), nn.Linear(h, h))
        # shared adaLN projection; zero-init so fresh models ignore t entirely
        self.mod_proj = nn.Linear(h, 9 * h)
        nn.init.zeros_(self.mod_proj.weight)
        nn.init.zeros_(self.mod_proj.bias)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.blocks))
        self.out_norm = nn.LayerNorm(h, elementwise_affine=False)
        self.out_proj = nn.Linear(h, cfg.embed_dim)
        self._lora = None

    def time_embedding(self, t) -> torch.Tensor:
        t = torch.as_tensor(t)
        if t.dim() == 0:
            t = t[None]
        return self.time_mlp(timestep_embedding(t, self.cfg.hidden))

    def forward(self, s_t, t, text_emb, slot_mask=None, text_mask=None):
        """Predict the noise in s_t.

        s_t: (28, 32) or (B, 28, 32); t: int or (B,); text_emb: (L, ctx) or
        (B, L, ctx). slot_mask marks real slots (padded slots are dropped from
        self-attention keys/values but still produce outputs); text_mask marks
        valid context vectors.
        """
        squeeze = s_t.dim() == 2
        if squeeze:
            s_t = s_t[None]
        b = s_t.shape[0]
        if s_t.shape[1] != self.cfg.embed_dim or s_t.shape[2] != self.cfg.slots:
            raise ShapeMismatch(f"expected (*, {self.cfg.embed_dim}, {self.cfg.slots}), got {tuple(s_t.shape)}")
        if text_emb.dim() == 2:
            text_emb = text_emb[None].expand(b, -1, -1)
        if text_emb.shape[-1] != self.cfg.context_dim:
            raise ShapeMismatch(f"context dim {text_emb.shape[-1]} != {self.cfg.context_dim}")
        t = torch.as_tensor(t)
        if t.dim() == 0:
            t = t.expand(b)

        x = self.in_proj(s_t.transpose(1, 2)) + self.pos_emb[None]
        mod = self.mod_proj(torch.nn.functional.silu(self.time_embedding(t)))
        for block in self.blocks:
            x = block(x, mod, text_emb, slot_mask, text_mask)
        out = self.out_proj(self.out_norm(x)).transpose(1, 2)
        return out[0] if squeeze else out

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


# ---------------------------------------------------------------------------
# low-rank adapters

class LoRALinear(nn.Module):
    """Wraps a Linear with an additive (alpha/r) A @ B low-rank delta.

    A is (out, r) gaussian-init, B is (r, in) zero-init, so a fresh adapter
    is an exact no-op.
    """

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.lora_a = nn.Parameter(torch.randn(base.out_features, rank) * 0.02)
        self.lora_b = nn.Parameter(torch.zeros(rank, base.in_features))

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def forward(self, x):
        return self.base(x) + (x @ self.lora_b.T @ self.lora_a.T) * self.scaling

    def delta_weight(self) -> torch.Tensor:
        return (self.lora_a @ self.lora_b) * self.scaling


def _attention_projections(model: VectorDenoiser):
    for block in model.blocks:
        for attn in (block.self_attn, block.cross_attn):
            for name in ("q", "k", "v", "out"):
                yield attn, name


def attach_lora(model: VectorDenoiser, rank: int = 4, alpha: float = 8.0,
                seed: int | None = None) -> VectorDenoiser:
    """Attach adapters to every attention projection and freeze base weights."""
    if model._lora is not None:
        raise AlreadyAttached("adapters already attached")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if seed is not None:
        torch.manual_seed(seed)
    for p in model.parameters():
        p.requires_grad_(False)
    wrapped = []
    for attn, name in _attention_projections(model):
        base = getattr(attn, name)
        shell = LoRALinear(base, rank, alpha)
        setattr(attn, name, shell)
        wrapped.append((attn, name))
    model._lora = {"rank": rank, "alpha": alpha, "wrapped": wrapped}
    return model


def detach_lora(model: VectorDenoiser) -> VectorDenoiser:
    """Remove adapters, restoring the exact base behavior; unfreezes the base."""
    if model._lora is None:
        raise NotAttached("no adapters attached")
    for attn, name in model._lora["wrapped"]:
        shell = getattr(attn, name)
        setattr(attn, name, shell.base)
    model._lora = None
    for p in model.parameters():
        p.requires_grad_(True)
    return model


def merge_lora(model: VectorDenoiser) -> VectorDenoiser:
    """Fold adapter deltas into the base weights and remove the adapters."""
    if model._lora is None:
        raise NotAttached("no adapters attached")
    for attn, name in model._lora["wrapped"]:
        shell = getattr(attn, name)
        with torch.no_grad():
            shell.base.weight += shell.delta_weight()
        setattr(attn, name, shell.base)
    model._lora = None
    for p in model.parameters():
        p.requires_grad_(True)
    return model


def lora_parameters(model: VectorDenoiser):
    """Trainable adapter parameters (empty unless attached)."""
    if model._lora is None:
        raise NotAttached("no adapters attached")
    for attn, name in model._lora["wrapped"]:
        shell = getattr(attn, name)
        yield shell.lora_a
        yield shell.lora_b
