"""Canonical SVG geometry: filled cubic-Bezier documents, parsing, serialization.

Everything downstream works on one representation: closed chains of cubic
Bezier segments with a flat RGB fill, stacked in painter order. The parser
accepts a practical SVG subset (path, rect, circle, ellipse, line, polygon,
polyline, g) and converts every primitive to cubics; the serializer writes
documents back out as plain ``<path>`` elements.
"""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedPathData, UnsupportedFeature

__all__ = [
    "CubicSegment",
    "FilledPath",
    "SvgDocument",
    "parse_svg",
    "serialize_svg",
    "KAPPA",
]

# Quarter-arc handle length 4(sqrt(2)-1)/3, the minimal-error cubic handle.
KAPPA = 4.0 * (math.sqrt(2.0) - 1.0) / 3.0

Point = tuple[float, float]


@dataclass
class CubicSegment:
    """One cubic Bezier segment given by its four control points."""

    p0: Point
    c1: Point
    c2: Point
    p1: Point

    def points(self) -> np.ndarray:
        return np.array([self.p0, self.c1, self.c2, self.p1], dtype=np.float64)

    def eval(self, t):
        """Evaluate the segment at parameter(s) t in [0, 1]."""
        t = np.asarray(t, dtype=np.float64)[..., None]
        p = self.points()
        u = 1.0 - t
        return u**3 * p[0] + 3 * u**2 * t * p[1] + 3 * u * t**2 * p[2] + t**3 * p[3]


@dataclass
class FilledPath:
    """Closed chain of cubic segments filled with a flat RGB color."""

    segments: list[CubicSegment]
    fill: tuple[float, float, float] = (0.0, 0.0, 0.0)
    closed: bool = True

    def control_points(self) -> np.ndarray:
        """All control points, shape (n_segments, 4, 2)."""
        return np.array([s.points() for s in self.segments], dtype=np.float64)

    def bounds(self) -> tuple[float, float, float, float]:
        pts = self.control_points().reshape(-1, 2)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def sample_outline(self, per_segment: int = 32) -> np.ndarray:
        """Dense points along the outline, shape (n_segments*per_segment, 2)."""
        ts = np.linspace(0.0, 1.0, per_segment, endpoint=False)
        return np.concatenate([s.eval(ts) for s in self.segments], axis=0)

    def validate(self, tol_scale: float = 1e-9):
        """Check endpoint continuity; raises ValueError on violation."""
        if not self.segments:
            raise ValueError("empty path")
        x0, y0, x1, y1 = self.bounds()
        diag = math.hypot(x1 - x0, y1 - y0)
        tol = max(tol_scale * diag, 1e-12)
        for a, b in zip(self.segments, self.segments[1:]):
            if math.hypot(a.p1[0] - b.p0[0], a.p1[1] - b.p0[1]) > tol:
                raise ValueError("consecutive segments do not share endpoints")
        if self.closed:
            a, b = self.segments[-1], self.segments[0]
            if math.hypot(a.p1[0] - b.p0[0], a.p1[1] - b.p0[1]) > tol:
                raise ValueError("closed path does not loop back to start")


@dataclass
class SvgDocument:
    """Ordered paths (painter order: later occludes earlier) plus a viewbox."""

    paths: list[FilledPath] = field(default_factory=list)
    viewbox: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)

    def __post_init__(self):
        if self.viewbox[2] <= 0 or self.viewbox[3] <= 0:
            raise ValueError(f"viewbox must have positive size, got {self.viewbox}")

    def diagonal(self) -> float:
        return math.hypot(self.viewbox[2], self.viewbox[3])


# ---------------------------------------------------------------------------
# primitive -> cubic conversion

def line_to_cubic(p: Point, q: Point) -> CubicSegment:
    """Exact degree elevation of a line segment at parameter thirds."""
    return CubicSegment(
        p,
        (p[0] + (q[0] - p[0]) / 3.0, p[1] + (q[1] - p[1]) / 3.0),
        (p[0] + 2.0 * (q[0] - p[0]) / 3.0, p[1] + 2.0 * (q[1] - p[1]) / 3.0),
        q,
    )


def quadratic_to_cubic(q0: Point, q1: Point, q2: Point) -> CubicSegment:
    """Exact degree elevation of a quadratic Bezier."""
    c1 = (q0[0] + 2.0 / 3.0 * (q1[0] - q0[0]), q0[1] + 2.0 / 3.0 * (q1[1] - q0[1]))
    c2 = (q2[0] + 2.0 / 3.0 * (q1[0] - q2[0]), q2[1] + 2.0 / 3.0 * (q1[1] - q2[1]))
    return CubicSegment(q0, c1, c2, q2)


def ellipse_to_cubics(cx, cy, rx, ry) -> list[CubicSegment]:
    """Four-segment cubic approximation of a full ellipse (KAPPA handles)."""
    k = KAPPA
    return [
        CubicSegment((cx + rx, cy), (cx + rx, cy + k * ry), (cx + k * rx, cy + ry), (cx, cy + ry)),
        CubicSegment((cx, cy + ry), (cx - k * rx, cy + ry), (cx - rx, cy + k * ry), (cx - rx, cy)),
        CubicSegment((cx - rx, cy), (cx - rx, cy - k * ry), (cx - k * rx, cy - ry), (cx, cy - ry)),
        CubicSegment((cx, cy - ry), (cx + k * rx, cy - ry), (cx + rx, cy - k * ry), (cx + rx, cy)),
    ]


def arc_to_cubics(p0: Point, rx, ry, phi_deg, large_arc, sweep, p1: Point) -> list[CubicSegment]:
    """Convert an elliptical-arc endpoint parameterization to cubic segments.

    Center parameterization per the SVG spec, then one cubic per <=90 degree
    span with handle length (4/3)tan(d/4).
    """
    x1, y1 = p0
    x2, y2 = p1
    if math.hypot(x2 - x1, y2 - y1) < 1e-14:
        return []
    rx, ry = abs(rx), abs(ry)
    if rx < 1e-14 or ry < 1e-14:
        return [line_to_cubic(p0, p1)]
    phi = math.radians(phi_deg)
    cosp, sinp = math.cos(phi), math.sin(phi)
    # to the ellipse-aligned frame
    dx, dy = (x1 - x2) / 2.0, (y1 - y2) / 2.0
    x1p = cosp * dx + sinp * dy
    y1p = -sinp * dx + cosp * dy
    # scale radii up if the endpoints are too far apart
    lam = (x1p / rx) ** 2 + (y1p / ry) ** 2
    if lam > 1.0:
        s = math.sqrt(lam)
        rx *= s
        ry *= s
    num = rx**2 * ry**2 - rx**2 * y1p**2 - ry**2 * x1p**2
    den = rx**2 * y1p**2 + ry**2 * x1p**2
    coef = math.sqrt(max(num / den, 0.0))
    if large_arc == sweep:
        coef = -coef
    cxp = coef * rx * y1p / ry
    cyp = -coef * ry * x1p / rx
    cx = cosp * cxp - sinp * cyp + (x1 + x2) / 2.0
    cy = sinp * cxp + cosp * cyp + (y1 + y2) / 2.0

    def angle(ux, uy, vx, vy):
        dot = ux * vx + uy * vy
        norm = math.hypot(ux, uy) * math.hypot(vx, vy)
        a = math.acos(max(-1.0, min(1.0, dot / norm)))
        if ux * vy - uy * vx < 0:
            a = -a
        return a

    theta1 = angle(1.0, 0.0, (x1p - cxp) / rx, (y1p - cyp) / ry)
    dtheta = angle((x1p - cxp) / rx, (y1p - cyp) / ry, (-x1p - cxp) / rx, (-y1p - cyp) / ry)
    if not sweep and dtheta > 0:
        dtheta -= 2.0 * math.pi
    elif sweep and dtheta < 0:
        dtheta += 2.0 * math.pi

    n = max(1, int(math.ceil(abs(dtheta) / (math.pi / 2.0) - 1e-12)))
    segs = []
    for i in range(n):
        t1 = theta1 + dtheta * i / n
        t2 = theta1 + dtheta * (i + 1) / n
        d = t2 - t1
        h = 4.0 / 3.0 * math.tan(d / 4.0)

        def pt(t):
            x = cx + rx * math.cos(t) * cosp - ry * math.sin(t) * sinp
            y = cy + rx * math.cos(t) * sinp + ry * math.sin(t) * cosp
            return x, y

        def dpt(t):
            x = -rx * math.sin(t) * cosp - ry * math.cos(t) * sinp
            y = -rx * math.sin(t) * sinp + ry * math.cos(t) * cosp
            return x, y

        a = pt(t1)
        b = pt(t2)
        da = dpt(t1)
        db = dpt(t2)
        segs.append(
            CubicSegment(a, (a[0] + h * da[0], a[1] + h * da[1]), (b[0] - h * db[0], b[1] - h * db[1]), b)
        )
    # pin exact endpoints
    if segs:
        segs[0] = CubicSegment(p0, segs[0].c1, segs[0].c2, segs[0].p1)
        last = segs[-1]
        segs[-1] = CubicSegment(last.p0, last.c1, last.c2, p1)
    return segs


# ---------------------------------------------------------------------------
# affine transforms: (a, b, c, d, e, f) maps (x,y) -> (a x + c y + e, b x + d y + f)

IDENTITY = (1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


def mat_mul(m, n):
    a1, b1, c1, d1, e1, f1 = m
    a2, b2, c2, d2, e2, f2 = n
    return (
        a1 * a2 + c1 * b2,
        b1 * a2 + d1 * b2,
        a1 * c2 + c1 * d2,
        b1 * c2 + d1 * d2,
        a1 * e2 + c1 * f2 + e1,
        b1 * e2 + d1 * f2 + f1,
    )


def mat_apply(m, p: Point) -> Point:
    a, b, c, d, e, f = m
    return (a * p[0] + c * p[1] + e, b * p[0] + d * p[1] + f)


_TRANSFORM_RE = re.compile(r"(matrix|translate|scale|rotate|skewX|skewY)\s*\(([^)]*)\)")


def parse_transform(text: str):
    """Parse an SVG transform list into one affine matrix."""
    m = IDENTITY
    pos = 0
    for match in _TRANSFORM_RE.finditer(text):
        name = match.group(1)
        args = [float(v) for v in re.split(r"[\s,]+", match.group(2).strip()) if v]
        if name == "matrix":
            if len(args) != 6:
                raise MalformedPathData(f"matrix() needs 6 numbers, got {len(args)}")
            t = tuple(args)
        elif name == "translate":
            tx = args[0]
            ty = args[1] if len(args) > 1 else 0.0
            t = (1.0, 0.0, 0.0, 1.0, tx, ty)
        elif name == "scale":
            sx = args[0]
            sy = args[1] if len(args) > 1 else sx
            t = (sx, 0.0, 0.0, sy, 0.0, 0.0)
        elif name == "rotate":
            a = math.radians(args[0])
            t = (math.cos(a), math.sin(a), -math.sin(a), math.cos(a), 0.0, 0.0)
            if len(args) == 3:
                cx, cy = args[1], args[2]
                t = mat_mul(mat_mul((1, 0, 0, 1, cx, cy), t), (1, 0, 0, 1, -cx, -cy))
        elif name == "skewX":
            t = (1.0, 0.0, math.tan(math.radians(args[0])), 1.0, 0.0, 0.0)
        else:  # skewY
            t = (1.0, math.tan(math.radians(args[0])), 0.0, 1.0, 0.0, 0.0)
        m = mat_mul(m, t)
        pos = match.end()
    return m


# ---------------------------------------------------------------------------
# fill / color handling

_NAMED_COLORS = {
    "black": (0, 0, 0), "white": (255, 255, 255), "red": (255, 0, 0),
    "green": (0, 128, 0), "blue": (0, 0, 255), "yellow": (255, 255, 0),
    "cyan": (0, 255, 255), "magenta": (255, 0, 255), "gray": (128, 128, 128),
    "grey": (128, 128, 128), "orange": (255, 165, 0), "purple": (128, 0, 128),
    "brown": (165, 42, 42), "pink": (255, 192, 203), "lime": (0, 255, 0),
    "navy": (0, 0, 128), "teal": (0, 128, 128), "silver": (192, 192, 192),
    "maroon": (128, 0, 0), "olive": (128, 128, 0), "aqua": (0, 255, 255),
    "fuchsia": (255, 0, 255),
}


def parse_color(value: str, locator=None):
    """Parse a fill value; returns an RGB triple in [0,1] or None for 'none'."""
    v = value.strip().lower()
    if v == "none":
        return None
    if v.startswith("url("):
        raise UnsupportedFeature("paint servers (gradients/patterns) are not supported", locator)
    if v.startswith("#"):
        h = v[1:]
        if len(h) == 3:
            h = "".join(2 * c for c in h)
        if len(h) != 6 or any(c not in "0123456789abcdef" for c in h):
            raise UnsupportedFeature(f"unparseable color {value!r}", locator)
        return tuple(int(h[i : i + 2], 16) / 255.0 for i in (0, 2, 4))
    m = re.fullmatch(r"rgb\(\s*([\d.]+%?)\s*,\s*([\d.]+%?)\s*,\s*([\d.]+%?)\s*\)", v)
    if m:
        out = []
        for c in m.groups():
            out.append(float(c[:-1]) / 100.0 if c.endswith("%") else float(c) / 255.0)
        return tuple(min(1.0, max(0.0, c)) for c in out)
    if v in _NAMED_COLORS:
        r, g, b = _NAMED_COLORS[v]
        return (r / 255.0, g / 255.0, b / 255.0)
    raise UnsupportedFeature(f"unparseable color {value!r}", locator)


# ---------------------------------------------------------------------------
# path d-attribute grammar

_NUM_RE = re.compile(r"[-+]?(?:\d*\.\d+|\d+\.?)(?:[eE][-+]?\d+)?")

_ARITY = {"M": 2, "L": 2, "H": 1, "V": 1, "C": 6, "S": 4, "Q": 4, "T": 2, "A": 7, "Z": 0}


def _tokenize_d(d: str):
    """Yield (command, numbers) groups from a d attribute."""
    i, n = 0, len(d)
    out = []
    while i < n:
        ch = d[i]
        if ch.isspace() or ch == ",":
            i += 1
            continue
        if ch.upper() in _ARITY:
            j = i + 1
            nums = []
            while j < n:
                c2 = d[j]
                if c2.upper() in _ARITY:
                    break
                if c2.isspace() or c2 == ",":
                    j += 1
                    continue
                m = _NUM_RE.match(d, j)
                if not m:
                    raise MalformedPathData(f"unexpected character {c2!r} in path data at offset {j}")
                nums.append(float(m.group(0)))
                j = m.end()
            out.append((ch, nums))
            i = j
        else:
            raise MalformedPathData(f"unknown path command {ch!r} at offset {i}")
    return out


def parse_path_d(d: str) -> list[list[CubicSegment]]:
    """Parse a d attribute into subpaths of cubic segments (all absolute)."""
    groups = _tokenize_d(d)
    if not groups:
        return []
    if groups[0][0].upper() != "M":
        raise MalformedPathData("path data must start with a moveto")

    subpaths: list[list[CubicSegment]] = []
    current: list[CubicSegment] = []
    cur: Point = (0.0, 0.0)
    start: Point = (0.0, 0.0)
    prev_cubic_c2 = None
    prev_quad_c = None

    def flush():
        nonlocal current
        if current:
            subpaths.append(current)
        current = []

    for cmd, nums in groups:
        rel = cmd.islower()
        op = cmd.upper()
        arity = _ARITY[op]
        if arity == 0:
            if nums:
                raise MalformedPathData("Z takes no arguments")
            chunks = [[]]
        else:
            if not nums or len(nums) % arity != 0:
                raise MalformedPathData(
                    f"command {cmd!r} expects a multiple of {arity} arguments, got {len(nums)}"
                )
            chunks = [nums[i : i + arity] for i in range(0, len(nums), arity)]

        for idx, args in enumerate(chunks):
            new_cubic_c2 = None
            new_quad_c = None
            if op == "M":
                p = (args[0] + cur[0], args[1] + cur[1]) if rel else (args[0], args[1])
                if idx == 0:
                    flush()
                    cur = p
                    start = p
                else:  # extra pairs are implicit linetos
                    current.append(line_to_cubic(cur, p))
                    cur = p
            elif op == "L":
                p = (args[0] + cur[0], args[1] + cur[1]) if rel else (args[0], args[1])
                current.append(line_to_cubic(cur, p))
                cur = p
            elif op == "H":
                x = args[0] + cur[0] if rel else args[0]
                p = (x, cur[1])
                current.append(line_to_cubic(cur, p))
                cur = p
            elif op == "V":
                y = args[0] + cur[1] if rel else args[0]
                p = (cur[0], y)
                current.append(line_to_cubic(cur, p))
                cur = p
            elif op == "C":
                pts = [(args[i] + cur[0], args[i + 1] + cur[1]) if rel else (args[i], args[i + 1])
                       for i in (0, 2, 4)]
                current.append(CubicSegment(cur, pts[0], pts[1], pts[2]))
                new_cubic_c2 = pts[1]
                cur = pts[2]
            elif op == "S":
                pts = [(args[i] + cur[0], args[i + 1] + cur[1]) if rel else (args[i], args[i + 1])
                       for i in (0, 2)]
                c1 = (2 * cur[0] - prev_cubic_c2[0], 2 * cur[1] - prev_cubic_c2[1]) if prev_cubic_c2 else cur
                current.append(CubicSegment(cur, c1, pts[0], pts[1]))
                new_cubic_c2 = pts[0]
                cur = pts[1]
            elif op == "Q":
                pts = [(args[i] + cur[0], args[i + 1] + cur[1]) if rel else (args[i], args[i + 1])
                       for i in (0, 2)]
                current.append(quadratic_to_cubic(cur, pts[0], pts[1]))
                new_quad_c = pts[0]
                cur = pts[1]
            elif op == "T":
                p = (args[0] + cur[0], args[1] + cur[1]) if rel else (args[0], args[1])
                qc = (2 * cur[0] - prev_quad_c[0], 2 * cur[1] - prev_quad_c[1]) if prev_quad_c else cur
                current.append(quadratic_to_cubic(cur, qc, p))
                new_quad_c = qc
                cur = p
            elif op == "A":
                rx, ry, rot, laf, sf = args[0], args[1], args[2], args[3], args[4]
                p = (args[5] + cur[0], args[6] + cur[1]) if rel else (args[5], args[6])
                if laf not in (0.0, 1.0) or sf not in (0.0, 1.0):
                    raise MalformedPathData("arc flags must be 0 or 1")
                current.extend(arc_to_cubics(cur, rx, ry, rot, bool(laf), bool(sf), p))
                cur = p
            else:  # Z
                if current and math.hypot(cur[0] - start[0], cur[1] - start[1]) > 1e-12:
                    current.append(line_to_cubic(cur, start))
                cur = start
                flush()
            prev_cubic_c2 = new_cubic_c2
            prev_quad_c = new_quad_c
    flush()
    return subpaths


# ---------------------------------------------------------------------------
# document parsing

_SKIP_TAGS = {"title", "desc", "metadata"}


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _style_props(el) -> dict:
    props = {}
    style = el.get("style")
    if style:
        for item in style.split(";"):
            if ":" in item:
                k, v = item.split(":", 1)
                props[k.strip()] = v.strip()
    for key in ("fill", "stroke", "opacity", "fill-opacity", "transform"):
        if el.get(key) is not None:
            props.setdefault(key, el.get(key))
    return props


def _element_subpaths(el, tag, locator):
    """Local-coordinate subpaths (lists of CubicSegment) for one shape element."""

    def fget(name, default=None):
        v = el.get(name)
        return default if v is None else float(v)

    if tag == "path":
        d = el.get("d")
        if d is None:
            raise MalformedPathData(f"path element without d attribute (at {locator})")
        return parse_path_d(d)
    if tag == "rect":
        x, y = fget("x", 0.0), fget("y", 0.0)
        w, h = fget("width", 0.0), fget("height", 0.0)
        if el.get("rx") or el.get("ry"):
            raise UnsupportedFeature("rounded rects are not supported", locator)
        if w <= 0 or h <= 0:
            return []
        corners = [(x, y), (x + w, y), (x + w, y + h), (x, y + h)]
        return [[line_to_cubic(corners[i], corners[(i + 1) % 4]) for i in range(4)]]
    if tag == "circle":
        r = fget("r", 0.0)
        if r <= 0:
            return []
        return [ellipse_to_cubics(fget("cx", 0.0), fget("cy", 0.0), r, r)]
    if tag == "ellipse":
        rx, ry = fget("rx", 0.0), fget("ry", 0.0)
        if rx <= 0 or ry <= 0:
            return []
        return [ellipse_to_cubics(fget("cx", 0.0), fget("cy", 0.0), rx, ry)]
    if tag == "line":
        p = (fget("x1", 0.0), fget("y1", 0.0))
        q = (fget("x2", 0.0), fget("y2", 0.0))
        return [[line_to_cubic(p, q)]]
    if tag in ("polygon", "polyline"):
        raw = el.get("points", "")
        nums = [float(v) for v in _NUM_RE.findall(raw)]
        if len(nums) % 2 != 0:
            raise MalformedPathData(f"odd number of coordinates in points (at {locator})")
        pts = [(nums[i], nums[i + 1]) for i in range(0, len(nums), 2)]
        if len(pts) < 2:
            return []
        return [[line_to_cubic(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]]
    raise UnsupportedFeature(f"element <{tag}> is not supported", locator)


def _close_subpath(segs: list[CubicSegment]) -> list[CubicSegment] | None:
    """Close a subpath for filling; drop it if it has no area to fill."""
    if not segs:
        return None
    a = segs[0].p0
    b = segs[-1].p1
    if math.hypot(b[0] - a[0], b[1] - a[1]) > 1e-12:
        segs = segs + [line_to_cubic(b, a)]
    else:
        last = segs[-1]
        segs = segs[:-1] + [CubicSegment(last.p0, last.c1, last.c2, a)]
    if len(segs) < 2:
        # a single closing segment cannot enclose area unless curved; keep
        # single genuine cubics (they can bulge), drop single straight lines
        p = segs[0].points()
        chord = p[3] - p[0]
        dev1 = p[1] - (p[0] + chord / 3.0)
        dev2 = p[2] - (p[0] + 2.0 * chord / 3.0)
        if np.hypot(*dev1) < 1e-12 and np.hypot(*dev2) < 1e-12:
            return None
    return segs


def parse_svg(text: str) -> SvgDocument:
    """Parse SVG markup into a canonical filled-cubic document.

    Raises UnsupportedFeature for content outside the subset (gradients,
    strokes without fills, text, rasters, unknown elements) and
    MalformedPathData for invalid path grammar.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise MalformedPathData(f"not well-formed XML: {e}") from e
    if _localname(root.tag) != "svg":
        raise UnsupportedFeature(f"root element is <{_localname(root.tag)}>, expected <svg>")

    paths: list[FilledPath] = []
    counter = {"n": 0}

    def walk(el, matrix, inherited):
        counter["n"] += 1
        tag = _localname(el.tag)
        locator = f"element #{counter['n']} <{tag}>"
        if tag in _SKIP_TAGS:
            return
        props = _style_props(el)
        for key in ("opacity", "fill-opacity"):
            if key in props and abs(float(props[key]) - 1.0) > 1e-9:
                raise UnsupportedFeature(f"partial {key} is not supported", locator)
        if "transform" in props:
            matrix = mat_mul(matrix, parse_transform(props["transform"]))
        ctx = dict(inherited)
        for key in ("fill", "stroke"):
            if key in props:
                ctx[key] = props[key]

        if tag in ("svg", "g"):
            for child in el:
                walk(child, matrix, ctx)
            return

        fill_raw = ctx.get("fill", "black")
        stroke_raw = ctx.get("stroke", "none")
        fill = parse_color(fill_raw, locator)
        stroke = parse_color(stroke_raw, locator) if stroke_raw else None
        if fill is None:
            if stroke is not None:
                raise UnsupportedFeature("stroke-only elements are not supported", locator)
            return  # invisible element
        subpaths = _element_subpaths(el, tag, locator)
        for segs in subpaths:
            closed = _close_subpath(segs)
            if closed is None:
                continue
            transformed = [
                CubicSegment(
                    mat_apply(matrix, s.p0),
                    mat_apply(matrix, s.c1),
                    mat_apply(matrix, s.c2),
                    mat_apply(matrix, s.p1),
                )
                for s in closed
            ]
            paths.append(FilledPath(transformed, fill=fill, closed=True))

    walk(root, IDENTITY, {})

    vb = root.get("viewBox")
    if vb:
        parts = [float(v) for v in re.split(r"[\s,]+", vb.strip()) if v]
        if len(parts) != 4:
            raise MalformedPathData(f"viewBox needs 4 numbers, got {vb!r}")
        viewbox = tuple(parts)
    else:
        w = root.get("width")
        h = root.get("height")
        if w is not None and h is not None:
            viewbox = (0.0, 0.0, float(re.sub(r"px$", "", w)), float(re.sub(r"px$", "", h)))
        elif paths:
            xs0, ys0, xs1, ys1 = zip(*(p.bounds() for p in paths))
            viewbox = (min(xs0), min(ys0), max(xs1) - min(xs0), max(ys1) - min(ys0))
        else:
            viewbox = (0.0, 0.0, 1.0, 1.0)
    if viewbox[2] <= 0 or viewbox[3] <= 0:
        raise MalformedPathData(f"degenerate viewbox {viewbox}")
    return SvgDocument(paths=paths, viewbox=viewbox)


# ---------------------------------------------------------------------------
# serialization

def _fmt(v: float) -> str:
    # repr keeps the shortest exact decimal; strip a trailing ".0" for ints
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def _color_hex(fill) -> str:
    return "#%02x%02x%02x" % tuple(min(255, max(0, round(c * 255.0))) for c in fill)


def serialize_svg(doc: SvgDocument) -> str:
    """Serialize a document to SVG markup; re-parses to the same geometry."""
    vx, vy, vw, vh = doc.viewbox
    lines = [
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{_fmt(vx)} {_fmt(vy)} {_fmt(vw)} {_fmt(vh)}">'
    ]
    for path in doc.paths:
        if not path.segments:
            continue
        d = [f"M{_fmt(path.segments[0].p0[0])} {_fmt(path.segments[0].p0[1])}"]
        for s in path.segments:
            d.append(
                "C"
                + " ".join(
                    _fmt(v)
                    for v in (s.c1[0], s.c1[1], s.c2[0], s.c2[1], s.p1[0], s.p1[1])
                )
            )
        d.append("Z")
        lines.append(f'<path d="{"".join(d)}" fill="{_color_hex(path.fill)}"/>')
    lines.append("</svg>")
    return "\n".join(lines)
