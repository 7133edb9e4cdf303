"""Pixel-level preprocessing and the SSIM no-edit baseline.

Color images become luminance with BT.601 weights (0.299, 0.587, 0.114).
Resampling is bilinear with half-pixel centers; SSIM uses uniform windows.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeFailure, DimensionMismatch, NotAdmitted, TooSmall

BT601 = np.array([0.299, 0.587, 0.114])
DEFAULT_CROP_THRESHOLD = 0.20


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance image in [0, 1]; ``pixels`` is a read-only (height, width) float64 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"expected a non-empty 2-D array, got shape {px.shape}")
        if not np.all((px >= 0.0) & (px <= 1.0)):
            raise ValueError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def constant(cls, width: int, height: int, value: float) -> "GrayImage":
        return cls(np.full((height, width), float(value)))

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if min(self.k1, self.k2, self.dynamic_range) <= 0:
            raise ValueError("k1, k2 and dynamic_range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def crop_fraction(width: int, height: int) -> float:
    """Fraction of the area lost when center-cropping to the largest centered square."""
    if width < 1 or height < 1:
        raise ValueError("width and height must be >= 1")
    return 1.0 - min(width, height) / max(width, height)


def admit_image(width: int, height: int, threshold: float = DEFAULT_CROP_THRESHOLD) -> bool:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return crop_fraction(width, height) <= threshold


def _square_crop(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return arr[top:top + side, left:left + side]


def _bilinear_axis(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (H, W) or (H, W, C) float array."""
    y0, y1, ty = _bilinear_axis(arr.shape[0], out_h)
    x0, x1, tx = _bilinear_axis(arr.shape[1], out_w)
    extra = (1,) * (arr.ndim - 2)
    ty = ty.reshape((-1, 1) + extra)
    tx = tx.reshape((1, -1) + extra)
    rows = arr[y0] * (1.0 - ty) + arr[y1] * ty
    return rows[:, x0] * (1.0 - tx) + rows[:, x1] * tx


def center_crop_resize(img: GrayImage, side: int, threshold: float = DEFAULT_CROP_THRESHOLD) -> GrayImage:
    if side < 1:
        raise ValueError("side must be >= 1")
    if not admit_image(img.width, img.height, threshold):
        raise NotAdmitted(
            f"{img.width}x{img.height} needs {crop_fraction(img.width, img.height):.2%} cropping"
        )
    cropped = _square_crop(img.pixels)
    if cropped.shape[0] == side:
        return GrayImage(cropped.copy())
    out = resize_bilinear(cropped, side, side)
    return GrayImage(np.clip(out, 0.0, 1.0))


def _box_mean(x: np.ndarray, win: int) -> np.ndarray:
    # mean over every fully-contained win x win window, via a summed-area table
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    s[1:, 1:] = x.cumsum(0).cumsum(1)
    total = s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]
    return total / (win * win)


def ssim_map(a: GrayImage, b: GrayImage, params: SsimParams = SsimParams()) -> np.ndarray:
    """Per-window SSIM values with population (1/N) window statistics."""
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionMismatch(f"{a.width}x{a.height} vs {b.width}x{b.height}")
    win = params.window
    if a.height < win or a.width < win:
        raise TooSmall(f"{a.width}x{a.height} is smaller than the {win}x{win} window")
    x, y = a.pixels, b.pixels
    mu_x, mu_y = _box_mean(x, win), _box_mean(y, win)
    var_x = _box_mean(x * x, win) - mu_x * mu_x
    var_y = _box_mean(y * y, win) - mu_y * mu_y
    cov = _box_mean(x * y, win) - mu_x * mu_y
    c1, c2 = params.c1, params.c2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim(a: GrayImage, b: GrayImage, params: SsimParams = SsimParams()) -> float:
    return float(ssim_map(a, b, params).mean())


# -- decoding -----------------------------------------------------------------


def image_size(data: bytes) -> tuple[int, int]:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return im.size
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeFailure(f"cannot decode image: {exc}") from exc


def decode_rgb(data: bytes) -> np.ndarray:
    """Decode PNG/JPEG bytes to a (H, W, 3) float array in [0, 1]."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            rgb = im.convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeFailure(f"cannot decode image: {exc}") from exc
    return np.asarray(rgb, dtype=np.float64) / 255.0


def decode_gray(data: bytes) -> GrayImage:
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode in ("L", "I;16", "I", "F"):
                arr = np.asarray(im.convert("F"), dtype=np.float64)
                peak = {"L": 255.0, "I;16": 65535.0}.get(im.mode, max(float(arr.max()), 1.0))
                return GrayImage(np.clip(arr / peak, 0.0, 1.0))
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeFailure(f"cannot decode image: {exc}") from exc
    return GrayImage(np.clip(rgb @ BT601, 0.0, 1.0))


def load_gray(path: str | Path) -> GrayImage:
    return decode_gray(Path(path).read_bytes())


def encode_png(arr: np.ndarray) -> bytes:
    """Encode a float array in [0, 1] ((H, W) gray or (H, W, 3) RGB) as 8-bit PNG."""
    u8 = np.clip(np.rint(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="PNG")
    return buf.getvalue()


def gray_to_png(img: GrayImage) -> bytes:
    return encode_png(img.pixels)


def crop_resize_rgb(data: bytes, side: int, threshold: float = DEFAULT_CROP_THRESHOLD) -> bytes:
    """Center-crop and bilinear-resize an encoded color image, returning PNG bytes."""
    rgb = decode_rgb(data)
    h, w = rgb.shape[:2]
    if not admit_image(w, h, threshold):
        raise NotAdmitted(f"{w}x{h} needs {crop_fraction(w, h):.2%} cropping")
    sq = _square_crop(rgb)
    if sq.shape[0] != side:
        sq = resize_bilinear(sq, side, side)
    return encode_png(sq)
