"""Evaluation metrics: path-latent FID, style alignment, text alignment.

The alignment metrics need an image (and joint text-image) embedder; toy
embedders ship here so the whole evaluation runs offline: a color-histogram
plus edge-orientation feature for style, and a class-template matcher that
maps renders and prompts into class space for text alignment.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import InsufficientSamples

__all__ = [
    "path_fid",
    "style_alignment",
    "text_alignment",
    "ToyImageEmbedder",
    "ToyJointEmbedder",
    "ink_mask",
]


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix; negative eigenvalues clamp to 0."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def path_fid(latents_a: np.ndarray, latents_b: np.ndarray, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two latent sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the cross term
    computed as Tr sqrt(S_a^{1/2} S_b S_a^{1/2}) so only symmetric
    eigendecompositions are needed. Requires at least 2*dim samples per side.
    """
    a = np.asarray(latents_a, dtype=np.float64)
    b = np.asarray(latents_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("latent sets must be 2-d with matching dimension")
    dim = a.shape[1]
    if len(a) < 2 * dim or len(b) < 2 * dim:
        raise InsufficientSamples(f"need >= {2 * dim} samples per set, got {len(a)} and {len(b)}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False) + eps * np.eye(dim)
    cov_b = np.cov(b, rowvar=False) + eps * np.eye(dim)
    root_a = _sym_sqrt(cov_a)
    cross = _sym_sqrt(root_a @ cov_b @ root_a)
    value = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# toy embedders

def _block_mean(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    ys = np.linspace(0, h, size + 1).astype(int)
    xs = np.linspace(0, w, size + 1).astype(int)
    out = np.zeros((size, size) + img.shape[2:])
    for i in range(size):
        for j in range(size):
            out[i, j] = img[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].mean(axis=(0, 1))
    return out


def ink_mask(img: np.ndarray, threshold: float = 0.25) -> np.ndarray:
    """Binary non-background mask: pixels far enough from white count as ink."""
    img = np.asarray(img, dtype=np.float64)
    return (np.linalg.norm(1.0 - img, axis=-1) / np.sqrt(3.0) > threshold).astype(np.float64)


class ToyImageEmbedder:
    """Color-histogram + edge-orientation features, L2-normalized."""

    def __init__(self, color_bins: int = 4, orient_bins: int = 8, downsample: int = 32):
        self.color_bins = color_bins
        self.orient_bins = orient_bins
        self.downsample = downsample

    def embed(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        small = _block_mean(img, self.downsample)
        q = np.clip((small * self.color_bins).astype(int), 0, self.color_bins - 1)
        flat = (q[..., 0] * self.color_bins + q[..., 1]) * self.color_bins + q[..., 2]
        hist = np.bincount(flat.ravel(), minlength=self.color_bins**3).astype(np.float64)
        hist /= max(hist.sum(), 1.0)

        gray = small @ np.array([0.299, 0.587, 0.114])
        sx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
        gx = ndimage.convolve(gray, sx, mode="nearest")
        gy = ndimage.convolve(gray, sx.T, mode="nearest")
        mag = np.hypot(gx, gy).ravel()
        ang = np.mod(np.arctan2(gy, gx).ravel(), np.pi)
        bins = np.minimum((ang / np.pi * self.orient_bins).astype(int), self.orient_bins - 1)
        orient = np.bincount(bins, weights=mag, minlength=self.orient_bins)
        orient /= max(orient.sum(), 1e-12)

        feat = np.concatenate([hist, orient])
        norm = np.linalg.norm(feat)
        return feat / norm if norm > 0 else feat


class ToyJointEmbedder:
    """Class-template matcher: images and prompts both map into class space.

    templates: class name -> reference ink mask (H, W). An image embeds as a
    softmax over negative template distances; a prompt embeds as the
    indicator of class names it mentions.
    """

    def __init__(self, templates: dict[str, np.ndarray], temperature: float = 0.02):
        if not templates:
            raise ValueError("need at least one class template")
        self.classes = sorted(templates)
        self.templates = {c: np.asarray(templates[c], dtype=np.float64) for c in self.classes}
        self.temperature = temperature

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        mask = ink_mask(img)
        d2 = np.array([
            ((mask - self.templates[c]) ** 2).mean() for c in self.classes
        ])
        logits = -d2 / self.temperature
        logits -= logits.max()
        p = np.exp(logits)
        return p / p.sum()

    def embed_text(self, prompt: str) -> np.ndarray:
        words = prompt.lower()
        vec = np.array([1.0 if c in words else 0.0 for c in self.classes])
        return vec

    def classify_image(self, img: np.ndarray) -> str:
        return self.classes[int(np.argmax(self.embed_image(img)))]


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def style_alignment(images, style_refs, embedder) -> float:
    """Mean over images of the max cosine similarity to any style reference."""
    if not len(images) or not len(style_refs):
        raise InsufficientSamples("need at least one image and one reference")
    ref_feats = [embedder.embed(r) for r in style_refs]
    scores = []
    for img in images:
        feat = embedder.embed(img)
        scores.append(max(_cosine(feat, rf) for rf in ref_feats))
    return float(np.mean(scores))


def text_alignment(images, prompts, joint_embedder) -> float:
    """Mean cosine between image and prompt embeddings in the joint space."""
    if not len(images) or len(images) != len(prompts):
        raise InsufficientSamples("need equally many images and prompts, at least one")
    scores = [
        _cosine(joint_embedder.embed_image(img), joint_embedder.embed_text(prompt))
        for img, prompt in zip(images, prompts)
    ]
    return float(np.mean(scores))
