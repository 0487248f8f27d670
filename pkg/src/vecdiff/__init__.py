"""Path-level latent diffusion for SVG generation with style customization."""

from .svg import CubicSegment, FilledPath, SvgDocument, parse_svg, serialize_svg

__version__ = "0.1.0"

__all__ = [
    "CubicSegment",
    "FilledPath",
    "SvgDocument",
    "parse_svg",
    "serialize_svg",
]
