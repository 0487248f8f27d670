import numpy as np
import pytest
import torch

from vecdiff.raster import canny_edges, paths_from_document, rasterize, render_document
from vecdiff.svg import SvgDocument, parse_svg


def doc_from(markup):
    return parse_svg(markup)


def test_empty_document_is_white():
    img = render_document(SvgDocument(viewbox=(0, 0, 1, 1)), (32, 32))
    assert np.allclose(img, 1.0)


def test_fullcanvas_black_square_interior():
    doc = doc_from('<svg viewBox="0 0 1 1"><rect x="-0.2" y="-0.2" width="1.4" height="1.4" fill="#000"/></svg>')
    img = render_document(doc, (64, 64), softness=0.15)
    interior = img[8:-8, 8:-8]
    assert np.abs(interior).max() < 1e-3


def test_painter_order_overlap_is_later_color():
    doc = doc_from(
        '<svg viewBox="0 0 1 1">'
        '<rect x="0.1" y="0.1" width="0.5" height="0.5" fill="red"/>'
        '<rect x="0.3" y="0.3" width="0.5" height="0.5" fill="blue"/></svg>'
    )
    img = render_document(doc, (64, 64), softness=0.15)
    overlap = img[int(0.45 * 64), int(0.45 * 64)]
    assert np.allclose(overlap, (0.0, 0.0, 1.0), atol=1e-2)


def test_nonoverlapping_paths_commute():
    a = '<rect x="0.1" y="0.1" width="0.2" height="0.2" fill="#ff0000"/>'
    b = '<rect x="0.6" y="0.6" width="0.2" height="0.2" fill="#0000ff"/>'
    img1 = render_document(doc_from(f'<svg viewBox="0 0 1 1">{a}{b}</svg>'), (64, 64), softness=0.3)
    img2 = render_document(doc_from(f'<svg viewBox="0 0 1 1">{b}{a}</svg>'), (64, 64), softness=0.3)
    assert np.abs(img1 - img2).max() < 1e-6


def test_translation_equivariance_one_pixel():
    res = 64
    shift = 1.0 / res  # one pixel in viewbox units
    base = '<svg viewBox="0 0 1 1"><rect x="{x}" y="0.3" width="0.25" height="0.3" fill="#000"/></svg>'
    img1 = render_document(doc_from(base.format(x=0.25)), (res, res), softness=0.8)
    img2 = render_document(doc_from(base.format(x=0.25 + shift)), (res, res), softness=0.8)
    interior = slice(8, res - 8)
    rolled = np.roll(img1, 1, axis=1)
    assert np.abs(rolled[interior, interior] - img2[interior, interior]).max() < 1e-3


def test_gradients_match_finite_differences():
    # finite-difference oracle, h=1e-3, on a couple of small documents
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    markup = (
        '<svg viewBox="0 0 1 1">'
        '<circle cx="0.4" cy="0.45" r="0.25" fill="#333333"/>'
        '<rect x="0.5" y="0.5" width="0.3" height="0.25" fill="#cc2200"/></svg>'
    )
    paths = [(p.double(), c.double()) for p, c in paths_from_document(doc_from(markup))]
    h = 1e-3

    def loss_for(points_list):
        ps = [(points_list[i], paths[i][1]) for i in range(len(paths))]
        img = rasterize(ps, (64, 64), softness=1.0)
        return img.sum()

    points = [p.clone().requires_grad_(True) for p, _c in paths]
    loss = loss_for(points)
    loss.backward()

    checked = 0
    good = 0
    for pi in range(len(points)):
        flat = points[pi].detach().flatten()
        for idx in rng.choice(len(flat), size=10, replace=False):
            plus = [p.detach().clone() for p, _ in paths]
            minus = [p.detach().clone() for p, _ in paths]
            plus[pi].flatten()[idx] += h
            minus[pi].flatten()[idx] -= h
            fd = (loss_for(plus) - loss_for(minus)).item() / (2 * h)
            an = points[pi].grad.flatten()[idx].item()
            denom = max(abs(fd), abs(an), 1.0)
            checked += 1
            good += abs(fd - an) / denom < 1e-2
    assert checked == 20
    assert good >= 0.95 * checked


def test_color_gradients():
    doc = doc_from('<svg viewBox="0 0 1 1"><rect x="0.2" y="0.2" width="0.5" height="0.5" fill="#888888"/></svg>')
    (pts, color), = paths_from_document(doc)
    color = color.clone().requires_grad_(True)
    img = rasterize([(pts, color)], (32, 32), softness=0.5)
    img.sum().backward()
    # d(sum)/d(color_c) = total coverage of the path, once per channel
    coverage = color.grad
    assert coverage.min() > 0
    assert torch.allclose(coverage, coverage.mean().expand(3), rtol=1e-5)


def test_canny_constant_image_no_edges():
    img = np.full((48, 48, 3), 0.37)
    assert canny_edges(img, 0.05, 0.2).sum() == 0


def test_canny_halfplane_single_line():
    img = np.ones((64, 64, 3))
    img[:, :32] = 0.0
    edges = canny_edges(img, 0.1, 0.3)
    rows = edges[4:-4]
    assert np.all(rows.sum(axis=1) == 1)  # exactly one edge pixel per row
    cols = np.where(edges.any(axis=0))[0]
    assert len(cols) == 1 and 30 <= cols[0] <= 33


def test_canny_square_outline_distance_oracle():
    doc = doc_from('<svg viewBox="0 0 1 1"><rect x="0.25" y="0.25" width="0.5" height="0.5" fill="#000"/></svg>')
    img = render_document(doc, (96, 96), softness=0.7)
    edges = canny_edges(img, 0.05, 0.15)
    ys, xs = np.nonzero(edges)
    assert len(xs) > 0
    # analytic outline: square boundary at 0.25..0.75 in viewbox units
    px = (xs + 0.5) / 96
    py = (ys + 0.5) / 96
    dx = np.maximum.reduce([0.25 - px, px - 0.75, np.zeros_like(px)])
    dy = np.maximum.reduce([0.25 - py, py - 0.75, np.zeros_like(py)])
    inside_dist = np.minimum(
        np.minimum(np.abs(px - 0.25), np.abs(px - 0.75)),
        np.minimum(np.abs(py - 0.25), np.abs(py - 0.75)),
    )
    outside = (dx > 0) | (dy > 0)
    dist = np.where(outside, np.hypot(dx, dy), inside_dist)
    within = dist <= 2.0 / 96
    assert within.mean() >= 0.95


def test_softness_must_be_positive():
    with pytest.raises(ValueError):
        rasterize([], (8, 8), softness=0.0)
