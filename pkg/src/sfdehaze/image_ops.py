"""Image I/O, colour planes, CLAHE, dark channel and full-reference metrics.

Images are float arrays of shape (H, W, 3) with values in [0, 1].
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

PSNR_CAP = 99.0


class ImageIOError(OSError):
    pass


class ImageFormatError(ImageIOError):
    pass


class ConfigError(ValueError):
    pass


def as_image(arr) -> np.ndarray:
    img = np.asarray(arr, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {img.shape}")
    return np.clip(img, 0.0, 1.0)


def to_chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(img, (2, 0, 1)))


def from_chw(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(arr, (1, 2, 0)))


# ---------------------------------------------------------------------------
# I/O

_READABLE_MODES = {"L", "LA", "P", "RGB", "RGBA"}


def load_image(path) -> np.ndarray:
    path = os.fspath(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise ImageFormatError(f"{path}: unsupported format {im.format}")
            if im.mode not in _READABLE_MODES:
                raise ImageFormatError(f"{path}: unsupported pixel mode {im.mode}")
            im.load()
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: no such file") from exc
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a PNG or PPM image") from exc
    except ImageIOError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"{path}: corrupt or truncated image ({exc})") from exc
    return rgb / 255.0


def save_image(path, img) -> None:
    path = os.fspath(path)
    parent = os.path.dirname(path) or "."
    if not os.path.isdir(parent):
        raise ImageIOError(f"{path}: parent directory does not exist")
    ext = os.path.splitext(path)[1].lower()
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(ext)
    if fmt is None:
        raise ImageFormatError(f"{path}: unsupported extension {ext!r} (use .png or .ppm)")
    q = np.floor(as_image(img).astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format=fmt)


def save_plane(path, plane) -> None:
    """Save a single-channel [0, 1] plane as a gray RGB image."""
    p = np.clip(np.asarray(plane, dtype=np.float32), 0, 1)
    save_image(path, np.repeat(p[..., None], 3, axis=2))


# ---------------------------------------------------------------------------
# colour planes and priors

def rgb_to_vs(img: np.ndarray):
    """HSV value and saturation. S is 0 where V is 0."""
    img = np.asarray(img)
    v = img.max(axis=2)
    mn = img.min(axis=2)
    s = np.where(v > 0, (v - mn) / np.where(v > 0, v, 1), 0).astype(img.dtype)
    return v, s


def dark_channel(img: np.ndarray, patch: int = 15) -> np.ndarray:
    if patch < 1 or patch % 2 == 0:
        raise ConfigError(f"dark channel patch must be odd and >= 1, got {patch}")
    return ndimage.minimum_filter(np.asarray(img).min(axis=2), size=patch, mode="nearest")


# ---------------------------------------------------------------------------
# CLAHE

@dataclass(frozen=True)
class ClaheConfig:
    tiles: tuple = (8, 8)
    clip_limit: float = 2.0
    bins: int = 256
    # "luminance": equalize Y of YCbCr and keep chroma; "rgb": equalize each channel
    mode: str = "luminance"

    def __post_init__(self):
        object.__setattr__(self, "tiles", tuple(self.tiles))
        if self.mode not in ("luminance", "rgb"):
            raise ConfigError(f"CLAHE mode must be 'luminance' or 'rgb', got {self.mode!r}")
        rows, cols = self.tiles
        if rows < 1 or cols < 1:
            raise ConfigError(f"CLAHE tiles must be >= 1x1, got {self.tiles}")
        if self.clip_limit < 1.0:
            raise ConfigError(f"CLAHE clip_limit must be >= 1.0, got {self.clip_limit}")
        if self.bins < 2:
            raise ConfigError(f"CLAHE bins must be >= 2, got {self.bins}")


def luminance(img: np.ndarray) -> np.ndarray:
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def _tile_edges(n: int, k: int) -> np.ndarray:
    return np.linspace(0, n, k + 1).round().astype(int)


def clahe_tile_luts(y: np.ndarray, cfg: ClaheConfig):
    """Clipped-histogram equalization tables for every tile of luminance plane ``y``.

    Returns ``(luts, identity)``: ``luts[r, c, b]`` is the mapped value of bin
    ``b`` in tile (r, c); ``identity[r, c]`` marks single-bin tiles, which map
    every value to itself.
    """
    rows, cols = cfg.tiles
    H, W = y.shape
    if H < rows or W < cols:
        raise ConfigError(f"image {H}x{W} is smaller than the {rows}x{cols} tile grid")
    bins = cfg.bins
    idx = np.minimum((y * bins).astype(int), bins - 1)
    re, ce = _tile_edges(H, rows), _tile_edges(W, cols)
    luts = np.zeros((rows, cols, bins))
    identity = np.zeros((rows, cols), dtype=bool)
    for r in range(rows):
        for c in range(cols):
            tile = idx[re[r]:re[r + 1], ce[c]:ce[c + 1]]
            hist = np.bincount(tile.ravel(), minlength=bins).astype(np.float64)
            total = tile.size
            if np.count_nonzero(hist) <= 1:
                identity[r, c] = True
                continue
            limit = cfg.clip_limit * total / bins
            excess = np.maximum(hist - limit, 0).sum()
            hist = np.minimum(hist, limit) + excess / bins
            luts[r, c] = np.cumsum(hist) / total
    return np.clip(luts, 0, 1), identity


def _interp_axis(n: int, k: int):
    edges = _tile_edges(n, k)
    centres = (edges[:-1] + edges[1:]) / 2.0 - 0.5
    pos = np.arange(n, dtype=np.float64)
    hi = np.searchsorted(centres, pos, side="right")
    lo = np.clip(hi - 1, 0, k - 1)
    hi = np.clip(hi, 0, k - 1)
    span = np.where(hi > lo, centres[hi] - centres[lo], 1.0)
    w = np.where(hi > lo, (pos - centres[lo]) / span, 0.0)
    return lo, hi, w


def _equalize_plane(y: np.ndarray, cfg: ClaheConfig) -> np.ndarray:
    y = np.clip(y, 0, 1)
    luts, identity = clahe_tile_luts(y, cfg)
    rows, cols = cfg.tiles
    H, W = y.shape
    bidx = np.minimum((y * cfg.bins).astype(int), cfg.bins - 1)
    r0, r1, wr = _interp_axis(H, rows)
    c0, c1, wc = _interp_axis(W, cols)

    def mapped(rr, cc):
        rr = rr[:, None]
        cc = cc[None, :]
        return np.where(identity[rr, cc], y, luts[rr, cc, bidx])

    wr = wr[:, None]
    wc = wc[None, :]
    return ((1 - wr) * ((1 - wc) * mapped(r0, c0) + wc * mapped(r0, c1))
            + wr * ((1 - wc) * mapped(r1, c0) + wc * mapped(r1, c1)))


def clahe(img: np.ndarray, cfg: ClaheConfig = ClaheConfig()) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    In luminance mode chroma (Cb, Cr) is preserved by shifting all three
    channels by the change in luminance; in rgb mode every channel is equalized
    on its own. The result is clamped to [0, 1].
    """
    img = np.asarray(img, dtype=np.float64)
    if cfg.mode == "rgb":
        out = np.stack([_equalize_plane(img[..., k], cfg) for k in range(3)], axis=2)
    else:
        y = luminance(img)
        out = img + (_equalize_plane(y, cfg) - y)[..., None]
    return np.clip(out, 0, 1).astype(np.float32)


# ---------------------------------------------------------------------------
# metrics

def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for [0, 1] images; identical inputs report the 99 dB cap."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(plane: np.ndarray, win: np.ndarray) -> np.ndarray:
    r = len(win) // 2
    out = ndimage.correlate1d(plane, win, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, win, axis=1, mode="reflect")
    return out[r:-r, r:-r]


def ssim(a, b, data_range: float = 1.0) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < 11:
        raise ValueError(f"SSIM needs images of at least 11x11, got {a.shape[:2]}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    win = _gaussian_window()
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, win), _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mx * mx
        syy = _filter_valid(y * y, win) - my * my
        sxy = _filter_valid(x * y, win) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))
