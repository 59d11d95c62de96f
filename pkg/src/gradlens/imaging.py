"""Image types, geometric transforms, PSNR and a binary PPM/PGM codec.

Conventions used by every transform:

* pixel arrays are ``(height, width, channels)`` float64;
* rotation and shear are taken about the image centre
  ``((w - 1) / 2, (h - 1) / 2)``, with positive angles rotating
  counter-clockwise as the image is displayed (rows grow downwards);
* non-permutation transforms resample by inverse mapping with bilinear
  interpolation, read zeros outside the frame, then clamp to ``[0, 1]``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, ParseError

PSNR_CAP = 300.0
_MSE_FLOOR = 1e-30


def _coerce(pixels) -> np.ndarray:
    arr = np.array(pixels, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ContractViolation(f"pixels must be (h, w) or (h, w, 1|3), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class FieldImage:
    """Real-valued image buffer with no range constraint (e.g. a raw reconstruction)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = _coerce(self.pixels)
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("FieldImage pixels must be finite")
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def mean(self) -> float:
        return float(self.pixels.mean())

    def clamped(self) -> "Image":
        return Image(np.clip(self.pixels, 0.0, 1.0))

    def __eq__(self, other):
        return type(other) is type(self) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


class Image(FieldImage):
    """Normalised image, every pixel in ``[0, 1]``."""

    def __post_init__(self):
        super().__post_init__()
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ContractViolation("Image pixels must lie in [0, 1]")

    @classmethod
    def from_flat(cls, flat, shape) -> "Image":
        return cls(np.asarray(flat, dtype=np.float64).reshape(shape))


@dataclass(frozen=True)
class TransformSpec:
    kind: str  # rotate | flip_h | flip_v | shear | identity
    param: float = 0.0

    @property
    def interpolation(self) -> str:
        if self.kind in ("flip_h", "flip_v", "identity"):
            return "exact-permutation"
        if self.kind == "rotate" and self.param % 90 == 0:
            return "exact-permutation"
        return "bilinear"

    def __str__(self) -> str:
        if self.kind == "rotate":
            return f"rot{self.param:g}"
        if self.kind == "shear":
            return f"shear{self.param:g}"
        return self.kind


IDENTITY = TransformSpec("identity")


def _bilinear(src: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``src`` at fractional (col, row) coordinates with zero fill."""
    h, w, c = src.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    out = np.zeros(sx.shape + (c,))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xs, ys = x0 + dx, y0 + dy
            inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            vals = np.zeros(sx.shape + (c,))
            vals[inside] = src[ys[inside], xs[inside]]
            out += wy * wx * vals
    return out


def _grid(img: FieldImage):
    h, w = img.height, img.width
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return rows, cols, (h - 1) / 2.0, (w - 1) / 2.0


def rotate(img: Image, theta: float) -> Image:
    """Rotate counter-clockwise by ``theta`` degrees about the centre."""
    if not -360.0 < theta < 360.0:
        raise ContractViolation("theta must lie in (-360, 360)")
    if theta % 90 == 0:
        quarter = int(round(theta / 90.0)) % 4
        if quarter == 0 or img.height == img.width:
            return Image(np.rot90(img.pixels, quarter).copy())
    rows, cols, cy, cx = _grid(img)
    t = math.radians(theta)
    u, v = cols - cx, cy - rows
    su = u * math.cos(t) + v * math.sin(t)
    sv = -u * math.sin(t) + v * math.cos(t)
    out = _bilinear(img.pixels, su + cx, cy - sv)
    return Image(np.clip(out, 0.0, 1.0))


def flip_h(img: Image) -> Image:
    return Image(img.pixels[:, ::-1].copy())


def flip_v(img: Image) -> Image:
    return Image(img.pixels[::-1].copy())


def shear(img: Image, mu: float) -> Image:
    """Horizontal shear: output ``(row, col)`` reads ``(row, col + mu * (row - cy))``."""
    if not math.isfinite(mu):
        raise ContractViolation("shear factor must be finite")
    if mu == 0:
        return Image(img.pixels.copy())
    rows, cols, cy, _ = _grid(img)
    out = _bilinear(img.pixels, cols + mu * (rows - cy), rows)
    return Image(np.clip(out, 0.0, 1.0))


def apply_transform(img: Image, spec: TransformSpec) -> Image:
    if spec.kind == "rotate":
        return rotate(img, spec.param)
    if spec.kind == "shear":
        return shear(img, spec.param)
    if spec.kind == "flip_h":
        return flip_h(img)
    if spec.kind == "flip_v":
        return flip_v(img)
    if spec.kind == "identity":
        return Image(img.pixels.copy())
    raise ContractViolation(f"unknown transform kind {spec.kind!r}")


def mse(a: FieldImage, b: FieldImage) -> float:
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a.pixels - b.pixels) ** 2))


def psnr(a: FieldImage, b: FieldImage, cap: float = PSNR_CAP) -> float:
    """PSNR in dB with peak 1.0, capped at ``cap`` for (near) zero error."""
    err = mse(a, b)
    if err < _MSE_FLOOR:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / err))


# -- netpbm codec -----------------------------------------------------------

_MAGIC = {b"P5": 1, b"P6": 3}


def _header_tokens(data: bytes, count: int) -> tuple[list[tuple[bytes, int]], int]:
    tokens: list[tuple[bytes, int]] = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(data):
            raise ParseError("truncated header", offset=pos)
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise ParseError("unterminated comment in header", offset=pos)
            pos = end + 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            tokens.append((data[start:pos], start))
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", offset=pos)
    return tokens, pos + 1


def decode_netpbm(data: bytes) -> Image:
    tokens, raster_at = _header_tokens(data, 4)
    (magic, moff), *dims = tokens
    if magic not in _MAGIC:
        raise ParseError(f"unsupported magic {magic!r}", offset=moff)
    values = []
    for tok, off in dims:
        if not tok.isdigit():
            raise ParseError(f"expected integer, got {tok!r}", offset=off)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise ParseError("image dimensions must be positive", offset=dims[0][1])
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}", offset=dims[2][1])
    channels = _MAGIC[magic]
    need = width * height * channels
    raster = data[raster_at:raster_at + need]
    if len(raster) < need:
        raise ParseError(f"raster truncated: expected {need} bytes, got {len(raster)}", offset=raster_at + len(raster))
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / 255.0
    return Image(arr.reshape(height, width, channels))


def quantize(img: FieldImage) -> np.ndarray:
    """Clamp to [0, 1] and round half up onto the 8-bit lattice."""
    return np.floor(np.clip(img.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_netpbm(img: FieldImage) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + quantize(img).tobytes()


def read_image(path: str | os.PathLike) -> Image:
    return decode_netpbm(Path(path).read_bytes())


def write_image(img: FieldImage, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_netpbm(img))
