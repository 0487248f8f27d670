"""Procedural toy icon dataset: parametric shape grammars plus manifest I/O.

Stands in for a large icon corpus at desk scale. Five default classes with
jittered parameters, black fills on a white background, one caption per file
(the class label). Generation is deterministic given the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .svg import CubicSegment, FilledPath, SvgDocument, ellipse_to_cubics, line_to_cubic, serialize_svg

__all__ = [
    "DatasetManifest",
    "ManifestEntry",
    "generate_toy_dataset",
    "load_manifest",
    "save_manifest",
    "ingest_directory",
    "TOY_CLASSES",
]

MANIFEST_VERSION = 1
MAX_PATHS = 32
VIEW = 128.0
BLACK = (0.0, 0.0, 0.0)


@dataclass
class ManifestEntry:
    file: str
    caption: str
    style: str | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    version: int = MANIFEST_VERSION
    root: Path | None = None  # directory the file references are relative to

    def resolve(self, entry: ManifestEntry) -> Path:
        base = self.root if self.root is not None else Path(".")
        return base / entry.file


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    payload = {
        "version": manifest.version,
        "entries": [
            {"file": e.file, "caption": e.caption, **({"style": e.style} if e.style else {})}
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("version") != MANIFEST_VERSION:
        raise InvalidSpec(f"unsupported manifest version {payload.get('version')!r}")
    entries = []
    for raw in payload["entries"]:
        entry = ManifestEntry(file=raw["file"], caption=raw["caption"], style=raw.get("style"))
        if not entry.caption:
            raise InvalidSpec(f"empty caption for {entry.file!r}")
        if not (path.parent / entry.file).exists():
            raise InvalidSpec(f"referenced file missing: {entry.file!r}")
        entries.append(entry)
    return DatasetManifest(entries=entries, version=payload["version"], root=path.parent)


# ---------------------------------------------------------------------------
# shape helpers

def _polygon(points) -> FilledPath:
    segs = [line_to_cubic(points[i], points[(i + 1) % len(points)]) for i in range(len(points))]
    return FilledPath(segs, fill=BLACK)


def _rect(x, y, w, h) -> FilledPath:
    return _polygon([(x, y), (x + w, y), (x + w, y + h), (x, y + h)])


def _circle(cx, cy, r) -> FilledPath:
    return FilledPath(ellipse_to_cubics(cx, cy, r, r), fill=BLACK)


def _blob(cx, cy, r, rng, wobble=0.25, lobes=8) -> FilledPath:
    """Closed smooth blob: jittered radial samples joined by cubics."""
    angles = np.linspace(0.0, 2 * math.pi, lobes, endpoint=False)
    radii = r * (1.0 + rng.uniform(-wobble, wobble, size=lobes))
    pts = [(cx + ri * math.cos(a), cy + ri * math.sin(a)) for a, ri in zip(angles, radii)]
    segs = []
    n = len(pts)
    for i in range(n):
        p, q = pts[i], pts[(i + 1) % n]
        prev_pt, next_pt = pts[(i - 1) % n], pts[(i + 2) % n]
        # Catmull-Rom style tangents for a smooth closed loop
        c1 = (p[0] + (q[0] - prev_pt[0]) / 6.0, p[1] + (q[1] - prev_pt[1]) / 6.0)
        c2 = (q[0] - (next_pt[0] - p[0]) / 6.0, q[1] - (next_pt[1] - p[1]) / 6.0)
        segs.append(CubicSegment(p, c1, c2, q))
    return FilledPath(segs, fill=BLACK)


# ---------------------------------------------------------------------------
# class grammars; each returns a list of FilledPath within the 128x128 viewbox


def _gen_house(rng) -> list[FilledPath]:
    w = rng.uniform(52, 72)
    h = rng.uniform(36, 52)
    x = 64 - w / 2 + rng.uniform(-6, 6)
    ybase = rng.uniform(96, 110)
    body = _rect(x, ybase - h, w, h)
    peak = ybase - h - rng.uniform(18, 30)
    overhang = rng.uniform(2, 8)
    roof = _polygon([(x - overhang, ybase - h), (x + w + overhang, ybase - h), (x + w / 2, peak)])
    paths = [body, roof]
    if rng.random() < 0.8:
        cw = rng.uniform(5, 9)
        cx = x + w * rng.uniform(0.62, 0.8)
        paths.append(_rect(cx, peak + rng.uniform(2, 6), cw, (ybase - h) - peak))
    return paths


def _gen_tree(rng) -> list[FilledPath]:
    tw = rng.uniform(7, 13)
    th = rng.uniform(22, 34)
    base = rng.uniform(102, 114)
    trunk = _rect(64 - tw / 2 + rng.uniform(-3, 3), base - th, tw, th)
    paths = [trunk]
    layers = rng.integers(2, 4)  # 2 or 3 canopy triangles
    top = base - th
    width = rng.uniform(56, 72)
    for i in range(layers):
        height = rng.uniform(20, 30)
        cy = top - i * height * 0.62
        half = width * (1.0 - 0.22 * i) / 2
        paths.append(_polygon([(64 - half, cy), (64 + half, cy), (64, cy - height)]))
    return paths


def _gen_star(rng) -> list[FilledPath]:
    points = int(rng.integers(5, 7))  # 5..6 spikes; more turns near-circular
    outer = rng.uniform(42, 56)
    inner = outer * rng.uniform(0.30, 0.42)
    rot = rng.uniform(0, 2 * math.pi)
    cx = 64 + rng.uniform(-5, 5)
    cy = 64 + rng.uniform(-5, 5)
    pts = []
    for i in range(points * 2):
        r = outer if i % 2 == 0 else inner
        a = rot + math.pi * i / points
        pts.append((cx + r * math.sin(a), cy - r * math.cos(a)))
    return [_polygon(pts)]


def _gen_arrow(rng) -> list[FilledPath]:
    sw = rng.uniform(44, 62)
    sh = rng.uniform(11, 18)
    x = rng.uniform(12, 22)
    cy = 64 + rng.uniform(-8, 8)
    shaft = _rect(x, cy - sh / 2, sw, sh)
    hw = rng.uniform(20, 30)
    hh = rng.uniform(16, 24)
    head = _polygon([(x + sw, cy - hh), (x + sw, cy + hh), (x + sw + hw, cy)])
    return [shaft, head]


def _gen_face(rng) -> list[FilledPath]:
    r = rng.uniform(32, 42)
    cx = 64 + rng.uniform(-4, 4)
    cy = 68 + rng.uniform(-4, 4)
    head = _circle(cx, cy, r)
    er = rng.uniform(9, 14)
    spread = rng.uniform(0.55, 0.75)
    lift = rng.uniform(0.75, 0.95)
    left = _polygon([
        (cx - r * spread - er, cy - r * lift + er),
        (cx - r * spread + er, cy - r * lift + er),
        (cx - r * spread, cy - r * lift - er),
    ])
    right = _polygon([
        (cx + r * spread - er, cy - r * lift + er),
        (cx + r * spread + er, cy - r * lift + er),
        (cx + r * spread, cy - r * lift - er),
    ])
    return [head, left, right]


def _gen_cloud(rng) -> list[FilledPath]:
    return [_blob(64 + rng.uniform(-5, 5), 64 + rng.uniform(-5, 5), rng.uniform(30, 42), rng,
                  wobble=rng.uniform(0.12, 0.3))]


TOY_CLASSES = {
    "house": (_gen_house, 3),
    "tree": (_gen_tree, 4),
    "star": (_gen_star, 1),
    "arrow": (_gen_arrow, 2),
    "face": (_gen_face, 3),
    "cloud": (_gen_cloud, 1),
}


def generate_toy_dataset(classes, per_class: int, seed: int, out_dir) -> DatasetManifest:
    """Write per_class SVGs for each class under out_dir plus manifest.json.

    Deterministic given (classes, per_class, seed). Raises InvalidSpec for
    unknown classes, fewer than two classes, or a grammar that could exceed
    the 32-path budget.
    """
    classes = list(classes)
    if len(classes) < 2:
        raise InvalidSpec("need at least 2 classes")
    for name in classes:
        if name not in TOY_CLASSES:
            raise InvalidSpec(f"unknown class {name!r}; known: {sorted(TOY_CLASSES)}")
        if TOY_CLASSES[name][1] > MAX_PATHS:
            raise InvalidSpec(f"class {name!r} may emit more than {MAX_PATHS} paths")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for ci, name in enumerate(classes):
        gen = TOY_CLASSES[name][0]
        for i in range(per_class):
            rng = np.random.default_rng([seed, ci, i])
            paths = gen(rng)
            assert len(paths) <= MAX_PATHS
            doc = SvgDocument(paths=paths, viewbox=(0.0, 0.0, VIEW, VIEW))
            fname = f"{name}_{i:04d}.svg"
            (out_dir / fname).write_text(serialize_svg(doc), encoding="utf-8")
            entries.append(ManifestEntry(file=fname, caption=name))
    manifest = DatasetManifest(entries=entries, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def ingest_directory(in_dir, out_path) -> DatasetManifest:
    """Build a manifest from a directory of SVGs; captions from file stems."""
    in_dir = Path(in_dir)
    out_path = Path(out_path)
    entries = []
    for f in sorted(in_dir.glob("*.svg")):
        caption = f.stem.rstrip("0123456789").rstrip("_- ") or f.stem
        rel = f.relative_to(out_path.parent) if f.is_relative_to(out_path.parent) else f
        entries.append(ManifestEntry(file=str(rel), caption=caption))
    manifest = DatasetManifest(entries=entries, root=out_path.parent)
    save_manifest(manifest, out_path)
    return manifest
