"""Upload sanitization and deterministic plot rendering for sketches."""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from ..errors import MediaTypeMismatch, TooLarge, UnsupportedType

DEFAULT_MAX_IMAGE_BYTES = 8 * 1024 * 1024
DEFAULT_SIZE = (512, 384)

_MAGIC = {
    "image/png": b"\x89PNG\r\n\x1a\n",
    "image/jpeg": b"\xff\xd8\xff",
}
_ALIASES = {"image/jpg": "image/jpeg", "image/pjpeg": "image/jpeg"}

# plot area inside the canvas
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 40, 12, 24, 32


@dataclass(frozen=True)
class SanitizedImage:
    data: bytes
    media_type: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


def sniff_media_type(data: bytes) -> str | None:
    for media_type, magic in _MAGIC.items():
        if data.startswith(magic):
            return media_type
    return None


def sanitize_image(data: bytes, declared_media_type: str | None, max_bytes: int = DEFAULT_MAX_IMAGE_BYTES) -> SanitizedImage:
    """Accept only PNG/JPEG whose magic bytes agree with the declared type."""
    if len(data) > max_bytes:
        raise TooLarge(f"image is {len(data)} bytes, limit is {max_bytes}")
    declared = (declared_media_type or "").split(";")[0].strip().lower()
    declared = _ALIASES.get(declared, declared)
    if declared not in _MAGIC:
        raise UnsupportedType(f"media type {declared_media_type!r} is not accepted; use image/png or image/jpeg")
    actual = sniff_media_type(data)
    if actual != declared:
        raise MediaTypeMismatch(f"declared {declared} but content is {actual or 'not a supported image'}")
    return SanitizedImage(data, declared)


# -- interpretation plots ---------------------------------------------------------

def density_profile(family: str, params: dict, xs: np.ndarray) -> np.ndarray:
    """Density (or mass) implied by the parameters at each x."""
    if family == "Normal":
        mu, sigma = params["mu"], params["sigma"]
        return np.exp(-0.5 * ((xs - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    if family == "Poisson":
        lam = params["lambda"]
        k = np.rint(xs)
        out = np.zeros_like(xs)
        ok = k >= 0
        kk = k[ok]
        log_pmf = kk * math.log(lam) - lam - np.array([math.lgamma(v + 1) for v in kk])
        out[ok] = np.exp(log_pmf)
        return out
    if family == "Uniform":
        low, high = params["low"], params["high"]
        return np.where((xs >= low) & (xs <= high), 1.0 / (high - low), 0.0)
    raise ValueError(f"unknown family {family!r}")


def plot_columns(width: int) -> int:
    return width - MARGIN_LEFT - MARGIN_RIGHT


def column_xs(x_min: float, x_max: float, width: int) -> np.ndarray:
    """x value plotted at each pixel column of the plot area."""
    return np.linspace(x_min, x_max, plot_columns(width))


def render_interpretation(
    family: str, params: dict, x_min: float, x_max: float, width: int = DEFAULT_SIZE[0], height: int = DEFAULT_SIZE[1]
) -> bytes:
    """PNG of the curve implied by the parameters over ``[x_min, x_max]``."""
    img = Image.new("RGB", (width, height), "white")
    draw = ImageDraw.Draw(img)
    plot_h = height - MARGIN_TOP - MARGIN_BOTTOM
    base = MARGIN_TOP + plot_h
    ys = density_profile(family, params, column_xs(x_min, x_max, width))
    peak = float(ys.max()) if ys.size and ys.max() > 0 else 1.0
    rows = np.rint(base - ys / peak * plot_h).astype(int)
    draw.line([(MARGIN_LEFT, base), (width - MARGIN_RIGHT, base)], fill="black")
    draw.line([(MARGIN_LEFT, MARGIN_TOP), (MARGIN_LEFT, base)], fill="black")
    points = [(MARGIN_LEFT + i, int(r)) for i, r in enumerate(rows)]
    draw.line(points, fill=(200, 30, 30), width=1)
    draw.text((MARGIN_LEFT, base + 6), f"{x_min:g}", fill="black")
    draw.text((width - MARGIN_RIGHT - 30, base + 6), f"{x_max:g}", fill="black")
    draw.text((MARGIN_LEFT + 4, 4), f"{family} {format_params(params)}", fill="black")
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def format_params(params: dict) -> str:
    return ", ".join(f"{k}={v:g}" for k, v in params.items())


def compose_comparison(original: bytes, interpreted: bytes) -> bytes:
    """Original on the left, interpretation on the right, equal heights.

    The shorter image is scaled up to the taller one's height, keeping its
    aspect ratio.
    """
    left = Image.open(io.BytesIO(original)).convert("RGB")
    right = Image.open(io.BytesIO(interpreted)).convert("RGB")
    height = max(left.height, right.height)

    def fit(im: Image.Image) -> Image.Image:
        if im.height == height:
            return im
        width = max(1, round(im.width * height / im.height))
        return im.resize((width, height), Image.Resampling.BICUBIC)

    left, right = fit(left), fit(right)
    canvas = Image.new("RGB", (left.width + right.width, height), "white")
    canvas.paste(left, (0, 0))
    canvas.paste(right, (left.width, 0))
    buf = io.BytesIO()
    canvas.save(buf, format="PNG", optimize=False)
    return buf.getvalue()
