import math

import numpy as np
import pytest

from vecdiff.errors import MalformedPathData, UnsupportedFeature
from vecdiff.svg import (
    KAPPA,
    CubicSegment,
    FilledPath,
    SvgDocument,
    line_to_cubic,
    parse_svg,
    quadratic_to_cubic,
    serialize_svg,
)


def outline_points(path, per_segment=200):
    ts = np.linspace(0.0, 1.0, per_segment, endpoint=False)
    return np.concatenate([s.eval(ts) for s in path.segments], axis=0)


def test_rect_becomes_four_line_cubics():
    doc = parse_svg('<svg viewBox="0 0 2 2"><rect x="0" y="0" width="1" height="1" fill="#000"/></svg>')
    assert len(doc.paths) == 1
    path = doc.paths[0]
    assert len(path.segments) == 4
    assert path.fill == (0.0, 0.0, 0.0)
    # each segment is an exact degree elevation of a straight edge
    for seg in path.segments:
        p = seg.points()
        chord = p[3] - p[0]
        assert np.allclose(p[1], p[0] + chord / 3.0)
        assert np.allclose(p[2], p[0] + 2.0 * chord / 3.0)


def test_circle_radial_deviation_dense_oracle():
    # dense-sample oracle over 1e4 parameter values
    doc = parse_svg('<svg viewBox="-2 -2 4 4"><circle r="1" fill="black"/></svg>')
    path = doc.paths[0]
    assert len(path.segments) == 4
    k = path.segments[0].points()
    # handle length is KAPPA * r
    assert math.isclose(abs(k[1][1] - k[0][1]), KAPPA, rel_tol=1e-9)
    pts = outline_points(path, per_segment=2500)
    radial = np.abs(np.hypot(pts[:, 0], pts[:, 1]) - 1.0)
    assert radial.max() < 2.8e-4


def test_line_path_elevates_at_thirds():
    doc = parse_svg('<svg viewBox="0 0 3 3"><path d="M0 0 L3 3 Z" fill="#fff"/></svg>')
    seg = doc.paths[0].segments[0]
    assert np.allclose(seg.points(), [[0, 0], [1, 1], [2, 2], [3, 3]])
    assert doc.paths[0].fill == (1.0, 1.0, 1.0)


def test_quadratic_conversion_exact():
    q0, q1, q2 = (0.0, 0.0), (1.0, 2.0), (2.0, 0.0)
    seg = quadratic_to_cubic(q0, q1, q2)
    for t in np.linspace(0, 1, 57):
        quad = (1 - t) ** 2 * np.array(q0) + 2 * (1 - t) * t * np.array(q1) + t**2 * np.array(q2)
        assert np.allclose(seg.eval(t), quad, atol=1e-12)


def test_arc_command_matches_ellipse_oracle():
    # half circle of radius 5 via two 90-degree cubics
    doc = parse_svg('<svg viewBox="0 0 10 10"><path d="M0 5 A5 5 0 0 1 10 5 Z" fill="#000"/></svg>')
    path = doc.paths[0]
    arc_segs = path.segments[:-1]  # last one is the closing line
    pts = np.concatenate([s.eval(np.linspace(0, 1, 500)) for s in arc_segs])
    radial = np.abs(np.hypot(pts[:, 0] - 5.0, pts[:, 1] - 5.0) - 5.0)
    assert radial.max() < 2.8e-4 * 5.0
    assert np.allclose(arc_segs[0].p0, (0.0, 5.0), atol=1e-12)
    assert np.allclose(arc_segs[-1].p1, (10.0, 5.0), atol=1e-12)


def test_group_transforms_flattened():
    doc = parse_svg(
        '<svg viewBox="0 0 10 10">'
        '<g transform="translate(2 1) scale(2)"><rect x="0" y="0" width="1" height="1" fill="#000"/></g>'
        "</svg>"
    )
    x0, y0, x1, y1 = doc.paths[0].bounds()
    assert (x0, y0, x1, y1) == (2.0, 1.0, 4.0, 3.0)


def test_rotation_transform():
    doc = parse_svg(
        '<svg viewBox="-5 -5 10 10">'
        '<path d="M1 0 L2 0 Z" transform="rotate(90)" fill="#000"/></svg>'
    )
    seg = doc.paths[0].segments[0]
    assert np.allclose(seg.p0, (0.0, 1.0), atol=1e-12)
    assert np.allclose(seg.p1, (0.0, 2.0), atol=1e-12)


def test_painter_order_preserved():
    body = "".join(
        f'<rect x="{i}" y="0" width="1" height="1" fill="#0000{i:02x}"/>' for i in range(32)
    )
    doc = parse_svg(f'<svg viewBox="0 0 40 10">{body}</svg>')
    assert len(doc.paths) == 32
    blues = [round(p.fill[2] * 255) for p in doc.paths]
    assert blues == list(range(32))
    # serialization preserves order
    doc2 = parse_svg(serialize_svg(doc))
    assert [round(p.fill[2] * 255) for p in doc2.paths] == blues


def test_multi_subpath_paths_split():
    doc = parse_svg(
        '<svg viewBox="0 0 10 10">'
        '<path d="M0 0 L1 0 L1 1 Z M5 5 L6 5 L6 6 Z" fill="#000"/></svg>'
    )
    assert len(doc.paths) == 2


def test_implicit_close_for_fill():
    doc = parse_svg('<svg viewBox="0 0 4 4"><path d="M0 0 L2 0 L2 2" fill="#000"/></svg>')
    path = doc.paths[0]
    assert np.allclose(path.segments[-1].p1, path.segments[0].p0)
    path.validate()


def test_unsupported_features_carry_locator():
    with pytest.raises(UnsupportedFeature):
        parse_svg('<svg viewBox="0 0 1 1"><text x="0" y="0">hi</text></svg>')
    with pytest.raises(UnsupportedFeature):
        parse_svg('<svg viewBox="0 0 1 1"><rect width="1" height="1" fill="url(#g)"/></svg>')
    with pytest.raises(UnsupportedFeature) as err:
        parse_svg('<svg viewBox="0 0 1 1"><path d="M0 0 L1 1" fill="none" stroke="#000"/></svg>')
    assert "element" in str(err.value)
    with pytest.raises(UnsupportedFeature):
        parse_svg('<svg viewBox="0 0 1 1"><rect width="1" height="1" fill="#000" opacity="0.5"/></svg>')


def test_malformed_path_data():
    with pytest.raises(MalformedPathData):
        parse_svg('<svg viewBox="0 0 1 1"><path d="M0 0 L1" fill="#000"/></svg>')
    with pytest.raises(MalformedPathData):
        parse_svg('<svg viewBox="0 0 1 1"><path d="X0 0" fill="#000"/></svg>')
    with pytest.raises(MalformedPathData):
        parse_svg('<svg viewBox="0 0 1 1"><path d="L0 0" fill="#000"/></svg>')
    with pytest.raises(MalformedPathData):
        parse_svg("not xml at all")


def test_invisible_elements_skipped():
    doc = parse_svg('<svg viewBox="0 0 1 1"><rect width="1" height="1" fill="none"/></svg>')
    assert doc.paths == []


def test_serialize_empty_document():
    text = serialize_svg(SvgDocument(viewbox=(0.0, 0.0, 3.0, 2.0)))
    doc = parse_svg(text)
    assert doc.paths == []
    assert doc.viewbox == (0.0, 0.0, 3.0, 2.0)


def test_roundtrip_geometry_exact():
    doc = parse_svg(
        '<svg viewBox="0 0 10 10">'
        '<circle cx="3" cy="3" r="2" fill="#123456"/>'
        '<path d="M1 1 C2 0 3 4 5 5 S7 8 9 9 Z" fill="#abcdef"/></svg>'
    )
    doc2 = parse_svg(serialize_svg(doc))
    assert len(doc2.paths) == len(doc.paths)
    diag = doc.diagonal()
    for a, b in zip(doc.paths, doc2.paths):
        assert a.fill == b.fill
        drift = np.abs(a.control_points() - b.control_points()).max()
        assert drift < 1e-6 * diag


def test_fill_color_8bit_roundtrip():
    path = FilledPath([line_to_cubic((0, 0), (1, 0)), line_to_cubic((1, 0), (0, 0))],
                      fill=(0.1, 0.5, 0.9))
    doc = SvgDocument(paths=[path], viewbox=(0, 0, 1, 1))
    doc2 = parse_svg(serialize_svg(doc))
    doc3 = parse_svg(serialize_svg(doc2))
    assert doc2.paths[0].fill == doc3.paths[0].fill  # exact after first quantization
    assert np.abs(np.array(doc2.paths[0].fill) - np.array(path.fill)).max() <= 1 / 510


def test_continuity_invariant_on_parsed_paths():
    doc = parse_svg(
        '<svg viewBox="0 0 10 10"><polygon points="1,1 9,1 5,8" fill="#000"/>'
        '<ellipse cx="5" cy="5" rx="3" ry="2" fill="#fff"/></svg>'
    )
    for path in doc.paths:
        path.validate()


def test_style_attribute_fill():
    doc = parse_svg('<svg viewBox="0 0 1 1"><rect width="1" height="1" style="fill:#ff0000"/></svg>')
    assert doc.paths[0].fill == (1.0, 0.0, 0.0)
