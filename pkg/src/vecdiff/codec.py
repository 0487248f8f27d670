"""Path embeddings: canonicalization, the path autoencoder, tensor assembly.

A filled path is reduced to a fixed-size embedding P = (z, C, Tr):
  z  - 20-dim latent of the canonical outline from a small VAE,
  C  - (r, g, b, visibility),
  Tr - (tx, ty, log w, log h) of the original bounding box.
Embeddings are normalized per-dimension to [-1, 1] and stacked into a 28x32
tensor with zero padding; that tensor is what the diffusion model sees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DegeneratePath, Diverged, TooManyPaths
from .svg import CubicSegment, FilledPath, SvgDocument

__all__ = [
    "LATENT_DIM",
    "EMBED_DIM",
    "MAX_SLOTS",
    "SEGMENTS",
    "canonicalize_path",
    "reconstruct_path",
    "PathVae",
    "EmbeddingNormalizer",
    "assemble_tensor",
    "disassemble_tensor",
    "decode_tensor",
    "decode_tensor_torch",
]

SEGMENTS = 8            # cubic segments per canonical path
POINT_DIM = SEGMENTS * 3 * 2   # 3 free control points per segment, closed chain
LATENT_DIM = 20
COLOR_DIM = 4           # r, g, b, visibility
TRANSFORM_DIM = 4       # tx, ty, log w, log h
EMBED_DIM = LATENT_DIM + COLOR_DIM + TRANSFORM_DIM  # 28
MAX_SLOTS = 32

LOG_SIZE_RANGE = (-8.0, 2.0)


# ---------------------------------------------------------------------------
# canonical geometry

def _chain_to_free_points(points: np.ndarray) -> np.ndarray:
    """(k,4,2) closed-chain control points -> (3k,2) free points (p0,c1,c2 per segment)."""
    return points[:, :3, :].reshape(-1, 2)


def _free_points_to_chain(free: np.ndarray) -> np.ndarray:
    """(3k,2) free points -> (k,4,2) closed chain (p1 of i = p0 of i+1)."""
    free = free.reshape(SEGMENTS, 3, 2)
    nxt = np.roll(free[:, 0, :], -1, axis=0)
    return np.concatenate([free, nxt[:, None, :]], axis=1)


def _eval_chain(points: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate a (k,4,2) chain at per-segment parameters t (k, n) -> (k, n, 2)."""
    t = t[..., None]
    u = 1.0 - t
    p = points
    return (
        u**3 * p[:, None, 0]
        + 3 * u**2 * t * p[:, None, 1]
        + 3 * u * t**2 * p[:, None, 2]
        + t**3 * p[:, None, 3]
    )


def _arc_length_samples(path: FilledPath, samples_per_seg: int = 256):
    """Dense outline samples plus cumulative arc length."""
    pts = path.control_points()
    t = np.tile(np.linspace(0.0, 1.0, samples_per_seg, endpoint=False), (len(pts), 1))
    dense = _eval_chain(pts, t).reshape(-1, 2)
    nxt = np.roll(dense, -1, axis=0)
    seglen = np.linalg.norm(nxt - dense, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    return dense, cum


def _resample_closed(dense: np.ndarray, cum: np.ndarray, n: int) -> np.ndarray:
    total = cum[-1]
    targets = np.linspace(0.0, total, n, endpoint=False)
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(dense) - 1)
    nxt = (idx + 1) % len(dense)
    seg = cum[idx + 1] - cum[idx]
    frac = np.where(seg > 1e-15, (targets - cum[idx]) / np.maximum(seg, 1e-15), 0.0)
    return dense[idx] + frac[:, None] * (dense[nxt] - dense[idx])


def _bezier_basis(t: np.ndarray) -> np.ndarray:
    u = 1.0 - t
    return np.stack([u**3, 3 * u**2 * t, 3 * u * t**2, t**3], axis=-1)


def _fit_segment(samples: np.ndarray, t: np.ndarray, p0: np.ndarray, p3: np.ndarray):
    """Least-squares inner control points of one cubic with fixed endpoints."""
    basis = _bezier_basis(t)
    rhs = samples - basis[:, [0]] * p0 - basis[:, [3]] * p3
    a = basis[:, 1:3]
    sol, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return sol[0], sol[1]


def _project_param(seg_pts: np.ndarray, samples: np.ndarray, t0: np.ndarray, iters: int = 3):
    """Newton foot-point refinement of per-sample parameters on one cubic."""
    p = seg_pts
    t = t0.copy()
    for _ in range(iters):
        tt = t[:, None]
        u = 1.0 - tt
        pos = u**3 * p[0] + 3 * u**2 * tt * p[1] + 3 * u * tt**2 * p[2] + tt**3 * p[3]
        d1 = 3 * (u**2 * (p[1] - p[0]) + 2 * u * tt * (p[2] - p[1]) + tt**2 * (p[3] - p[2]))
        d2 = 6 * (u * (p[2] - 2 * p[1] + p[0]) + tt * (p[3] - 2 * p[2] + p[1]))
        diff = pos - samples
        num = (diff * d1).sum(axis=1)
        den = (d1 * d1).sum(axis=1) + (diff * d2).sum(axis=1)
        step = np.where(np.abs(den) > 1e-12, num / np.where(np.abs(den) > 1e-12, den, 1.0), 0.0)
        t = np.clip(t - step, 0.0, 1.0)
    return t


def canonicalize_path(path: FilledPath, viewbox=(0.0, 0.0, 1.0, 1.0)):
    """Fit a closed path to the fixed-size canonical form.

    Returns (geometry, residual, transform, color):
      geometry  - (3k, 2) free control points, centered, max-abs <= 1
      residual  - max sample-to-curve distance in canonical units
      transform - (tx, ty, log w, log h): the fitted chain's control-point
                  bounding box in normalized viewbox units
      color     - (r, g, b, 1.0)
    Raises DegeneratePath when the bounding box is vanishingly small.
    """
    vx, vy, vw, vh = viewbox
    x0, y0, x1, y1 = path.bounds()
    w, h = x1 - x0, y1 - y0
    if w * h < 1e-12 * vw * vh or min(w, h) <= 0:
        raise DegeneratePath(f"bounding box {w:.3g}x{h:.3g} too small")
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0

    dense, cum = _arc_length_samples(path)
    per_seg = 32
    n = SEGMENTS * per_seg
    samples = _resample_closed(dense, cum, n)
    # to canonical frame
    canon = (samples - [cx, cy]) / [w / 2.0, h / 2.0]

    knots = canon[::per_seg]
    pieces = canon.reshape(SEGMENTS, per_seg, 2)
    geometry = np.zeros((SEGMENTS, 3, 2))
    residual = 0.0
    for i in range(SEGMENTS):
        p0 = knots[i]
        p3 = knots[(i + 1) % SEGMENTS]
        pts = pieces[i]
        t = np.linspace(0.0, 1.0, per_seg, endpoint=False)
        c1, c2 = _fit_segment(pts, t, p0, p3)
        # parameter-correct so exact cubic inputs are an exact fixed point
        for _ in range(3):
            seg = np.stack([p0, c1, c2, p3])
            t = _project_param(seg, pts, t)
            c1, c2 = _fit_segment(pts, t, p0, p3)
        seg = np.stack([p0, c1, c2, p3])
        tt = t[:, None]
        u = 1.0 - tt
        fit = u**3 * p0 + 3 * u**2 * tt * c1 + 3 * u * tt**2 * c2 + tt**3 * p3
        residual = max(residual, float(np.linalg.norm(fit - pts, axis=1).max()))
        geometry[i, 0] = p0
        geometry[i, 1] = c1
        geometry[i, 2] = c2

    # fitted control points can overshoot the outline box at sharp corners;
    # recenter/rescale onto their own box so max-abs <= 1 holds exactly, and
    # fold the change into the recorded transform (reconstruction is exact)
    flat = geometry.reshape(-1, 2)
    lo = flat.min(axis=0)
    hi = flat.max(axis=0)
    box_center = (lo + hi) / 2.0
    box_half = np.maximum((hi - lo) / 2.0, 1e-12)
    geometry = (geometry - box_center) / box_half
    residual = float(residual / box_half.max())
    cx += box_center[0] * w / 2.0
    cy += box_center[1] * h / 2.0
    w *= box_half[0]
    h *= box_half[1]

    tx = (cx - vx) / vw
    ty = (cy - vy) / vh
    transform = np.array([tx, ty, math.log(w / vw), math.log(h / vh)])
    color = np.array([*path.fill, 1.0])
    return geometry.reshape(-1, 2), float(residual), transform, color


def reconstruct_path(free_points: np.ndarray, transform, color, viewbox=(0.0, 0.0, 1.0, 1.0)) -> FilledPath:
    """Inverse of canonicalize_path: canonical geometry + Tr back to a FilledPath."""
    vx, vy, vw, vh = viewbox
    tx, ty, logw, logh = transform
    w = math.exp(float(logw)) * vw
    h = math.exp(float(logh)) * vh
    cx = vx + float(tx) * vw
    cy = vy + float(ty) * vh
    chain = _free_points_to_chain(np.asarray(free_points))
    chain = chain * [w / 2.0, h / 2.0] + [cx, cy]
    segs = [CubicSegment(tuple(s[0]), tuple(s[1]), tuple(s[2]), tuple(s[3])) for s in chain]
    rgb = tuple(float(min(1.0, max(0.0, c))) for c in np.asarray(color)[:3])
    return FilledPath(segs, fill=rgb)


# ---------------------------------------------------------------------------
# path autoencoder

class _VaeNet(torch.nn.Module):
    def __init__(self, in_dim, hidden, latent):
        super().__init__()
        self.encoder = torch.nn.Sequential(
            torch.nn.Linear(in_dim, hidden), torch.nn.SiLU(),
            torch.nn.Linear(hidden, hidden), torch.nn.SiLU(),
        )
        self.mu_head = torch.nn.Linear(hidden, latent)
        self.logvar_head = torch.nn.Linear(hidden, latent)
        self.decoder = torch.nn.Sequential(
            torch.nn.Linear(latent, hidden), torch.nn.SiLU(),
            torch.nn.Linear(hidden, hidden), torch.nn.SiLU(),
            torch.nn.Linear(hidden, in_dim),
        )

    def encode(self, x):
        h = self.encoder(x)
        return self.mu_head(h), self.logvar_head(h)

    def decode(self, z):
        return self.decoder(z)


class PathVae(BaseEstimator, TransformerMixin):
    """Small VAE over canonical outlines; transform = encode, inverse = decode.

    fit() expects an (n, 48) array of flattened canonical control points and
    needs at least 1000 rows. transform() returns posterior means, which is
    what the diffusion tensor stores.
    """

    def __init__(self, latent_dim=LATENT_DIM, hidden=128, beta=1e-4, iterations=4000,
                 batch_size=128, lr=1e-3, seed=0, min_samples=1000):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.beta = beta
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.min_samples = min_samples

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[0] < self.min_samples:
            raise ValueError(f"need >= {self.min_samples} geometries, got {X.shape[0]}")
        if X.shape[1] != POINT_DIM:
            raise ValueError(f"expected {POINT_DIM} columns, got {X.shape[1]}")
        torch.manual_seed(self.seed)
        net = _VaeNet(POINT_DIM, self.hidden, self.latent_dim)
        opt = torch.optim.Adam(net.parameters(), lr=self.lr)
        data = torch.tensor(X, dtype=torch.float32)
        gen = torch.Generator().manual_seed(self.seed)
        history = []
        for step in range(self.iterations):
            idx = torch.randint(0, len(data), (min(self.batch_size, len(data)),), generator=gen)
            batch = data[idx]
            mu, logvar = net.encode(batch)
            std = torch.exp(0.5 * logvar)
            z = mu + std * torch.randn(mu.shape, generator=gen)
            recon = net.decode(z)
            recon_loss = torch.mean((recon - batch) ** 2)
            kl = 0.5 * torch.mean(torch.sum(mu**2 + logvar.exp() - 1.0 - logvar, dim=1))
            loss = recon_loss + self.beta * kl
            if not torch.isfinite(loss):
                raise Diverged(f"non-finite VAE loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(loss.item())
        net.eval()
        self.net_ = net
        self.history_ = history
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        with torch.no_grad():
            mu, _ = self.net_.encode(torch.tensor(X, dtype=torch.float32))
        return mu.numpy().astype(np.float64)

    def inverse_transform(self, Z) -> np.ndarray:
        check_is_fitted(self, "net_")
        Z = check_array(Z, dtype=np.float64)
        with torch.no_grad():
            out = self.net_.decode(torch.tensor(Z, dtype=torch.float32))
        return out.numpy().astype(np.float64)

    def load_net(self, state_dict) -> "PathVae":
        """Install pretrained weights without running fit()."""
        net = _VaeNet(POINT_DIM, self.hidden, self.latent_dim)
        net.load_state_dict(state_dict)
        net.eval()
        self.net_ = net
        return self

    def kl_term(self, X) -> float:
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        with torch.no_grad():
            mu, logvar = self.net_.encode(torch.tensor(X, dtype=torch.float32))
            kl = 0.5 * torch.mean(torch.sum(mu**2 + logvar.exp() - 1.0 - logvar, dim=1))
        return float(kl)


# ---------------------------------------------------------------------------
# normalization

class EmbeddingNormalizer(BaseEstimator, TransformerMixin):
    """Per-dimension affine map of path embeddings onto [-1, 1].

    Ranges come from the [q, 1-q] quantiles of the training corpus (q=0.5%);
    transform clips to [-1, 1], inverse_transform is exact on unclipped
    values. Two groups of dimensions are pinned rather than fitted: rgb maps
    from [0, 1] and visibility uses the identity so that zero-padded slots
    denormalize to visibility 0.5 > v > padded 0 -> dropped at the 0.5
    threshold while real slots keep visibility 1.
    """

    def __init__(self, quantile=0.005):
        self.quantile = quantile

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != EMBED_DIM:
            raise ValueError(f"expected {EMBED_DIM} columns, got {X.shape[1]}")
        lo = np.quantile(X, self.quantile, axis=0)
        hi = np.quantile(X, 1.0 - self.quantile, axis=0)
        # widen collapsed dimensions so the map stays invertible
        narrow = hi - lo < 1e-8
        lo = np.where(narrow, lo - 1.0, lo)
        hi = np.where(narrow, hi + 1.0, hi)
        # pinned dimensions: rgb in [0,1], visibility identity [-1,1]
        lo[LATENT_DIM : LATENT_DIM + 3] = 0.0
        hi[LATENT_DIM : LATENT_DIM + 3] = 1.0
        lo[LATENT_DIM + 3] = -1.0
        hi[LATENT_DIM + 3] = 1.0
        self.lo_ = lo
        self.hi_ = hi
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "lo_")
        X = check_array(X, dtype=np.float64)
        out = 2.0 * (X - self.lo_) / (self.hi_ - self.lo_) - 1.0
        return np.clip(out, -1.0, 1.0)

    def inverse_transform(self, X) -> np.ndarray:
        check_is_fitted(self, "lo_")
        X = check_array(X, dtype=np.float64)
        return (X + 1.0) / 2.0 * (self.hi_ - self.lo_) + self.lo_

    def to_json(self) -> str:
        check_is_fitted(self, "lo_")
        return json.dumps({"lo": self.lo_.tolist(), "hi": self.hi_.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "EmbeddingNormalizer":
        data = json.loads(text)
        norm = cls()
        norm.lo_ = np.asarray(data["lo"], dtype=np.float64)
        norm.hi_ = np.asarray(data["hi"], dtype=np.float64)
        return norm


# ---------------------------------------------------------------------------
# tensor assembly

@dataclass
class SvgTensor:
    """Fixed-shape diffusion state: (EMBED_DIM, MAX_SLOTS) values plus slot mask."""

    values: np.ndarray  # (28, 32) float64, normalized
    mask: np.ndarray    # (32,) bool, True for real slots

    def __post_init__(self):
        assert self.values.shape == (EMBED_DIM, MAX_SLOTS)
        assert self.mask.shape == (MAX_SLOTS,)


def assemble_tensor(embeddings, normalizer: EmbeddingNormalizer) -> SvgTensor:
    """Stack per-path (z, C, Tr) embeddings into the padded, normalized tensor.

    embeddings: sequence of (z, color, transform) arrays. Raises TooManyPaths
    beyond MAX_SLOTS; callers filter oversized documents upstream.
    """
    n = len(embeddings)
    if n > MAX_SLOTS:
        raise TooManyPaths(f"{n} paths exceed the {MAX_SLOTS}-slot budget")
    values = np.zeros((EMBED_DIM, MAX_SLOTS))
    mask = np.zeros(MAX_SLOTS, dtype=bool)
    if n:
        flat = np.stack([np.concatenate([z, c, tr]) for z, c, tr in embeddings])
        values[:, :n] = normalizer.transform(flat).T
        mask[:n] = True
    return SvgTensor(values=values, mask=mask)


def disassemble_tensor(tensor: SvgTensor, normalizer: EmbeddingNormalizer):
    """Denormalized (z, C, Tr) triples for the real slots, in slot order."""
    cols = tensor.values[:, tensor.mask].T
    if not len(cols):
        return []
    raw = normalizer.inverse_transform(cols)
    return [
        (row[:LATENT_DIM], row[LATENT_DIM : LATENT_DIM + COLOR_DIM], row[LATENT_DIM + COLOR_DIM :])
        for row in raw
    ]


def decode_tensor(values: np.ndarray, vae: PathVae, normalizer: EmbeddingNormalizer,
                  viewbox=(0.0, 0.0, 1.0, 1.0)) -> SvgDocument:
    """Decode any finite (28, 32) tensor to a document; total on finite input.

    Slots whose denormalized visibility falls below 0.5 are dropped; decoded
    colors are clamped to [0,1] and log-sizes to LOG_SIZE_RANGE, so sampler
    outputs outside the training support still decode.
    """
    values = np.asarray(values, dtype=np.float64)
    raw = normalizer.inverse_transform(values.T)
    paths = []
    for row in raw:
        z = row[:LATENT_DIM]
        color = row[LATENT_DIM : LATENT_DIM + COLOR_DIM]
        tr = row[LATENT_DIM + COLOR_DIM :].copy()
        if color[3] < 0.5:
            continue
        tr[2:] = np.clip(tr[2:], *LOG_SIZE_RANGE)
        free = vae.inverse_transform(z[None])[0].reshape(-1, 2)
        paths.append(reconstruct_path(free, tr, np.clip(color[:3], 0.0, 1.0), viewbox))
    return SvgDocument(paths=paths, viewbox=viewbox)


def decode_tensor_torch(values: torch.Tensor, vae: PathVae, normalizer: EmbeddingNormalizer,
                        viewbox=(0.0, 0.0, 1.0, 1.0)):
    """Differentiable decode: tensor -> [(control points, color)] for rasterize().

    Mirrors decode_tensor (same threshold and clamps) but stays in torch so
    image-space losses backpropagate into the tensor. The visibility gate is
    hard; gradients flow through geometry and color of the kept slots.
    """
    lo = torch.tensor(normalizer.lo_, dtype=torch.float32)
    hi = torch.tensor(normalizer.hi_, dtype=torch.float32)
    raw = (values.T + 1.0) / 2.0 * (hi - lo) + lo  # (32, 28)
    vis = raw[:, LATENT_DIM + 3]
    keep = torch.nonzero(vis.detach() >= 0.5).flatten()
    vx, vy, vw, vh = viewbox
    out = []
    for i in keep.tolist():
        row = raw[i]
        z = row[:LATENT_DIM]
        color = row[LATENT_DIM : LATENT_DIM + 3].clamp(0.0, 1.0)
        tr = row[LATENT_DIM + COLOR_DIM :]
        logw = tr[2].clamp(*LOG_SIZE_RANGE)
        logh = tr[3].clamp(*LOG_SIZE_RANGE)
        free = vae.net_.decode(z[None])[0].view(SEGMENTS, 3, 2)
        nxt = torch.roll(free[:, 0, :], -1, dims=0)
        chain = torch.cat([free, nxt[:, None, :]], dim=1)  # (k, 4, 2)
        scale = torch.stack([logw.exp() * vw / 2.0, logh.exp() * vh / 2.0])
        center = torch.stack([vx + tr[0] * vw, vy + tr[1] * vh])
        out.append((chain * scale + center, color))
    return out
