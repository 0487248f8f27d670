"""Differentiable soft rasterization and Canny edge extraction.

Coverage of a path at a pixel is sigmoid(-sdf/sigma), where the signed
distance is approximated by the distance to a polyline flattening of the
cubic outline and the sign comes from even-odd winding. Paths are composited
over a white background in painter order, so later paths occlude earlier
ones. Everything is torch, differentiable with respect to control points and
fill colors.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from scipy import ndimage

from .svg import SvgDocument

__all__ = [
    "rasterize",
    "render_document",
    "canny_edges",
    "paths_from_document",
    "save_png",
    "load_png",
]

FLATTEN_TOL_PX = 0.25
_MAX_FLATTEN = 24


def _flatten_count(points_px: torch.Tensor) -> int:
    """Subdivision count so the polyline deviates < FLATTEN_TOL_PX.

    points_px: (n_seg, 4, 2) detached control points in pixel units. Uses the
    second-difference bound on cubic flatness; deviation after n uniform
    splits is <= 0.75 * M / n^2.
    """
    p = points_px.detach()
    d1 = (p[:, 0] - 2 * p[:, 1] + p[:, 2]).norm(dim=-1)
    d2 = (p[:, 1] - 2 * p[:, 2] + p[:, 3]).norm(dim=-1)
    m = float(torch.maximum(d1, d2).max()) if len(p) else 0.0
    n = int(math.ceil(math.sqrt(3.0 * m / (4.0 * FLATTEN_TOL_PX))))  # 0.75*M/n^2 <= tol
    return max(2, min(_MAX_FLATTEN, n))


def _polyline(points_px: torch.Tensor, n: int) -> torch.Tensor:
    """Evaluate each cubic at n parameters in [0,1); returns (n_seg*n, 2).

    Consecutive segments share endpoints, so sampling [0,1) per segment gives
    a closed polyline over the whole chain.
    """
    t = torch.linspace(0.0, 1.0, n + 1, dtype=points_px.dtype)[:n].view(1, n, 1)
    p0, c1, c2, p1 = points_px[:, 0:1], points_px[:, 1:2], points_px[:, 2:3], points_px[:, 3:4]
    u = 1.0 - t
    pts = u**3 * p0 + 3 * u**2 * t * c1 + 3 * u * t**2 * c2 + t**3 * p1
    return pts.reshape(-1, 2)


def _soft_coverage(verts: torch.Tensor, grid: torch.Tensor, softness: float) -> torch.Tensor:
    """Per-pixel coverage for one closed polyline; grid is (HW, 2) pixel centers."""
    a = verts
    b = torch.roll(verts, -1, dims=0)
    ab = b - a  # (m, 2)
    len2 = (ab * ab).sum(-1).clamp_min(1e-12)
    # distance from every pixel to every edge
    ap = grid[:, None, :] - a[None, :, :]  # (HW, m, 2)
    t = ((ap * ab[None]).sum(-1) / len2[None]).clamp(0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    dist = (grid[:, None, :] - closest).norm(dim=-1).amin(dim=1)  # (HW,)
    # even-odd winding from the detached polyline (sign is piecewise constant)
    with torch.no_grad():
        ad, bd = a.detach(), b.detach()
        py = grid[:, 1:2]
        px = grid[:, 0:1]
        cond = (ad[None, :, 1] > py) != (bd[None, :, 1] > py)
        denom = bd[:, 1] - ad[:, 1]
        denom = torch.where(denom.abs() < 1e-12, torch.full_like(denom, 1e-12), denom)
        xs = ad[None, :, 0] + (py - ad[None, :, 1]) * (bd[None, :, 0] - ad[None, :, 0]) / denom[None]
        crossings = (cond & (px < xs)).sum(dim=1)
        inside = (crossings % 2).to(verts.dtype)
    sdf = dist * (1.0 - 2.0 * inside)
    return torch.sigmoid(-sdf / softness)


def rasterize(paths, resolution, softness: float, viewbox=(0.0, 0.0, 1.0, 1.0)) -> torch.Tensor:
    """Render (control_points, color) paths to an (H, W, 3) image in [0,1].

    paths: iterable of (points, color); points is a torch tensor (n_seg, 4, 2)
    in viewbox coordinates, color a torch tensor (3,). Gradients flow to both.
    An empty path list gives an all-white image.
    """
    if softness <= 0:
        raise ValueError("softness must be positive")
    paths = list(paths)
    h, w = resolution
    vx, vy, vw, vh = viewbox
    # use the geometry dtype: float32 in training, float64 for FD checks
    dtype = paths[0][0].dtype if paths else torch.float32
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=dtype) + 0.5, torch.arange(w, dtype=dtype) + 0.5, indexing="ij"
    )
    grid = torch.stack([xs.reshape(-1), ys.reshape(-1)], dim=-1)
    img = torch.ones(h * w, 3, dtype=dtype)
    scale = torch.tensor([w / vw, h / vh], dtype=dtype)
    offset = torch.tensor([vx, vy], dtype=dtype)
    for points, color in paths:
        pts = points.to(dtype)
        if pts.numel() == 0:
            continue
        px = (pts - offset) * scale
        n = _flatten_count(px)
        verts = _polyline(px, n)
        alpha = _soft_coverage(verts, grid, float(softness))[:, None]
        img = img * (1.0 - alpha) + color.to(dtype)[None, :] * alpha
    return img.reshape(h, w, 3)


def paths_from_document(doc: SvgDocument):
    """Torch path list for rasterize() from an SvgDocument (no gradients)."""
    out = []
    for p in doc.paths:
        pts = torch.tensor(p.control_points(), dtype=torch.float32)
        color = torch.tensor(p.fill, dtype=torch.float32)
        out.append((pts, color))
    return out


def render_document(doc: SvgDocument, resolution=(64, 64), softness=0.7) -> np.ndarray:
    """Non-differentiable convenience render; returns (H, W, 3) float array."""
    with torch.no_grad():
        img = rasterize(paths_from_document(doc), resolution, softness, viewbox=doc.viewbox)
    return img.numpy()


# ---------------------------------------------------------------------------
# Canny edges

def _gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def canny_edges(img: np.ndarray, low: float, high: float) -> np.ndarray:
    """Classic Canny pipeline; returns a binary (H, W) uint8 edge map.

    Grayscale, Gaussian blur (sigma=1.4), Sobel gradients, non-maximum
    suppression, hysteresis thresholding. low/high are absolute gradient
    magnitudes for images in [0,1].
    """
    if not (0 <= low < high):
        raise ValueError("need 0 <= low < high")
    img = np.asarray(img, dtype=np.float64)
    gray = img @ np.array([0.299, 0.587, 0.114]) if img.ndim == 3 else img

    k = _gaussian_kernel1d(1.4)
    blurred = ndimage.convolve1d(ndimage.convolve1d(gray, k, axis=0, mode="nearest"), k, axis=1, mode="nearest")

    sx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
    gx = ndimage.convolve(blurred, sx, mode="nearest")
    gy = ndimage.convolve(blurred, sx.T, mode="nearest")
    mag = np.hypot(gx, gy)
    angle = np.arctan2(gy, gx)

    # non-maximum suppression over 4 quantized directions
    q = ((angle + np.pi) / (np.pi / 4.0)).round().astype(int) % 4
    shifts = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    nms = np.zeros_like(mag)
    for d, (dy, dx) in shifts.items():
        n1 = np.roll(np.roll(mag, dy, axis=0), dx, axis=1)
        n2 = np.roll(np.roll(mag, -dy, axis=0), -dx, axis=1)
        # one strict comparison so flat two-pixel ridges keep a single pixel
        sel = (q == d) & (mag >= n1) & (mag > n2)
        nms[sel] = mag[sel]
    nms[0, :] = nms[-1, :] = 0.0
    nms[:, 0] = nms[:, -1] = 0.0

    strong = nms >= high
    weak = nms >= low
    labels, nlab = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if nlab == 0:
        return np.zeros_like(strong, dtype=np.uint8)
    keep = np.zeros(nlab + 1, dtype=bool)
    keep_ids = np.unique(labels[strong])
    keep[keep_ids[keep_ids > 0]] = True
    return (keep[labels]).astype(np.uint8)


# ---------------------------------------------------------------------------
# PNG helpers (previews, teacher wire format)

def save_png(img: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    Image.fromarray(arr, mode="RGB").save(path)


def load_png(path_or_bytes) -> np.ndarray:
    import io

    from PIL import Image

    src = io.BytesIO(path_or_bytes) if isinstance(path_or_bytes, (bytes, bytearray)) else path_or_bytes
    with Image.open(src) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
