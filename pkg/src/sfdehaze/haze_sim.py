"""Procedural clean scenes, depth fields and the atmospheric scattering model.

Two domains are produced from the same generator: a clean "synthetic" source
domain and a shifted target domain with denser, warm-tinted haze plus sensor
effects (colour cast, tone curve, noise) applied after scattering.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .image_ops import ConfigError, load_image, save_image, save_plane

Interval = tuple[float, float]


@dataclass
class HazeSample:
    clean: np.ndarray
    transmission: np.ndarray
    airlight: np.ndarray
    hazy: np.ndarray
    # hazy image straight out of the scattering model, before sensor degradations
    scattered: np.ndarray | None = None
    beta: float = float("nan")


@dataclass
class DomainConfig:
    beta_range: Interval = (0.4, 1.0)
    airlight_range: tuple[Interval, Interval, Interval] = ((0.8, 1.0), (0.8, 1.0), (0.8, 1.0))
    gray_airlight: bool = True
    color_cast: tuple[Interval, Interval, Interval] = ((1.0, 1.0), (1.0, 1.0), (1.0, 1.0))
    noise_sigma: float = 0.0
    gamma_range: Interval = (1.0, 1.0)
    size: int = 96
    seed: int = 0

    def __post_init__(self):
        self.beta_range = tuple(self.beta_range)
        self.airlight_range = tuple(tuple(r) for r in self.airlight_range)
        self.color_cast = tuple(tuple(r) for r in self.color_cast)
        self.gamma_range = tuple(self.gamma_range)
        self.validate()

    def validate(self):
        lo, hi = self.beta_range
        if not 0 < lo <= hi:
            raise ConfigError(f"beta_range must satisfy 0 < lo <= hi, got {self.beta_range}")
        for r in self.airlight_range:
            if not 0.5 <= r[0] <= r[1] <= 1.0:
                raise ConfigError(f"airlight interval {r} must lie within [0.5, 1]")
        for r in self.color_cast:
            if not 0 < r[0] <= r[1]:
                raise ConfigError(f"color_cast interval {r} must be positive and ordered")
        g0, g1 = self.gamma_range
        if not 0.5 <= g0 <= g1 <= 2.0:
            raise ConfigError(f"gamma_range must lie within [0.5, 2], got {self.gamma_range}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.size < 32:
            raise ConfigError("size must be >= 32")

    @property
    def degrades(self) -> bool:
        return (self.noise_sigma > 0 or self.gamma_range != (1.0, 1.0)
                or any(r != (1.0, 1.0) for r in self.color_cast))


def source_domain(seed: int = 0, size: int = 96) -> DomainConfig:
    return DomainConfig(seed=seed, size=size)


def target_domain(seed: int = 1, size: int = 96) -> DomainConfig:
    return DomainConfig(
        beta_range=(1.0, 2.0),
        airlight_range=((0.85, 1.0), (0.8, 0.95), (0.7, 0.9)),
        gray_airlight=False,
        color_cast=((1.0, 1.05), (0.95, 1.0), (0.9, 0.95)),
        noise_sigma=0.01,
        gamma_range=(0.8, 1.2),
        seed=seed,
        size=size,
    )


# ---------------------------------------------------------------------------
# generators

def _saturated_colour(rng: np.random.Generator) -> np.ndarray:
    # min channel ~ peak * (1 - peak) puts saturation close to value (V - S ~ 0)
    peak = rng.uniform(0.7, 1.0)
    c = np.empty(3)
    order = rng.permutation(3)
    c[order[0]] = peak
    low = peak * (1.0 - peak) * rng.uniform(0.6, 1.4)
    c[order[1]] = rng.uniform(low, peak)
    c[order[2]] = low
    return c


def _smooth_noise(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return n / (np.abs(n).max() + 1e-12)


def gen_clean_scene(seed: int, size: int = 96) -> np.ndarray:
    """Layered coloured shapes over a smooth gradient, with band-limited texture."""
    if size < 32:
        raise ConfigError("scene size must be >= 32")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    c0, c1 = _saturated_colour(rng), _saturated_colour(rng)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy)
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-12)
    img = c0 * (1 - ramp[..., None]) + c1 * ramp[..., None]

    for _ in range(rng.integers(6, 13)):
        colour = _saturated_colour(rng)
        cy, cx = rng.uniform(0, 1, size=2)
        hy, hx = rng.uniform(0.06, 0.3, size=2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < hy) & (np.abs(xx - cx) < hx)
        else:
            mask = ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 < 1.0
        img[mask] = colour

    shade = 0.92 + 0.08 * _smooth_noise(rng, size, size / 6)
    texture = 0.05 * _smooth_noise(rng, size, 1.2)
    img = img * shade[..., None] + texture[..., None] * rng.uniform(0.5, 1.0, size=3)
    return np.clip(img, 0, 1).astype(np.float32)


def gen_depth(seed: int, size: int = 96) -> np.ndarray:
    """Smooth depth in [0, 1]: a planar ramp plus a few broad radial bowls."""
    if size < 32:
        raise ConfigError("depth size must be >= 32")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    a, b = rng.uniform(-1, 1, size=2)
    d = a * xx + b * yy
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0, 1, size=2)
        w = rng.uniform(0.3, 0.8)
        d = d + rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * w ** 2))
    d = d - d.min()
    peak = d.max()
    d = d / peak if peak > 0 else d
    return d.astype(np.float32)


def apply_scattering(clean: np.ndarray, depth: np.ndarray, beta: float, airlight) -> HazeSample:
    """I = J*t + A*(1 - t) with t = exp(-beta * depth)."""
    if beta <= 0:
        raise ConfigError(f"beta must be > 0, got {beta}")
    clean = np.asarray(clean, dtype=np.float32)
    airlight = np.asarray(airlight, dtype=np.float32).reshape(3)
    t = np.exp(-beta * np.asarray(depth, dtype=np.float32))
    tt = t[..., None]
    hazy = clean * tt + airlight * (1 - tt)
    return HazeSample(clean=clean, transmission=t, airlight=airlight, hazy=hazy,
                      scattered=hazy, beta=float(beta))


def _sample_rng(cfg: DomainConfig, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, index])


def sample_domain(cfg: DomainConfig, index: int) -> HazeSample:
    rng = _sample_rng(cfg, index)
    scene_seed, depth_seed = (int(s) for s in rng.integers(0, 2**31 - 1, size=2))
    clean = gen_clean_scene(scene_seed, cfg.size)
    depth = gen_depth(depth_seed, cfg.size)
    beta = rng.uniform(*cfg.beta_range)
    if cfg.gray_airlight:
        airlight = np.full(3, rng.uniform(*cfg.airlight_range[0]))
    else:
        airlight = np.array([rng.uniform(lo, hi) for lo, hi in cfg.airlight_range])
    sample = apply_scattering(clean, depth, beta, airlight)
    if not cfg.degrades:
        return sample

    cast = np.array([rng.uniform(lo, hi) for lo, hi in cfg.color_cast], dtype=np.float32)
    gamma = rng.uniform(*cfg.gamma_range)
    noise = rng.standard_normal(sample.hazy.shape).astype(np.float32) * cfg.noise_sigma
    degraded = np.clip(sample.scattered * cast, 0, 1) ** gamma + noise
    sample.hazy = np.clip(degraded, 0, 1).astype(np.float32)
    return sample


def generate(cfg: DomainConfig, n: int, start: int = 0) -> list[HazeSample]:
    return [sample_domain(cfg, i) for i in range(start, start + n)]


# ---------------------------------------------------------------------------
# datasets on disk

class UnlabeledImages(Sequence):
    """Hazy target images with no access to ground truth."""

    def __init__(self, images: Sequence[np.ndarray], names: Sequence[str] | None = None):
        self._images = [np.asarray(im, dtype=np.float32) for im in images]
        self.names = list(names) if names is not None else [f"{i:05d}" for i in range(len(self._images))]

    @classmethod
    def from_samples(cls, samples: Sequence[HazeSample]) -> "UnlabeledImages":
        return cls([s.hazy for s in samples])

    @classmethod
    def from_dir(cls, path) -> "UnlabeledImages":
        files = _image_files(path)
        if not files:
            raise FileNotFoundError(f"{path}: no PNG/PPM images found")
        return cls([load_image(os.path.join(path, f)) for f in files], names=files)

    def __len__(self):
        return len(self._images)

    def __getitem__(self, i):
        return self._images[i]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self._images)


def _image_files(path) -> list[str]:
    return sorted(f for f in os.listdir(path) if f.lower().endswith((".png", ".ppm")))


def write_dataset(out_dir, cfg: DomainConfig, n: int, start: int = 0, workers: int = 1) -> dict:
    """Write ``clean/``, ``hazy/`` and ``trans/`` PNGs plus ``manifest.json``.

    Samples ``start .. start + n - 1`` are generated; files are named by index.
    """
    for sub in ("clean", "hazy", "trans"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    def one(i):
        s = sample_domain(cfg, i)
        name = f"{i:05d}.png"
        save_image(os.path.join(out_dir, "clean", name), s.clean)
        save_image(os.path.join(out_dir, "hazy", name), s.hazy)
        save_plane(os.path.join(out_dir, "trans", name), s.transmission)
        return {"name": name, "beta": s.beta, "airlight": [float(a) for a in s.airlight]}

    indices = range(start, start + n)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(one, indices))
    else:
        entries = [one(i) for i in indices]
    manifest = {"config": asdict(cfg), "count": n, "start": start, "samples": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


@dataclass
class PairedDataset:
    hazy: list = field(default_factory=list)
    clean: list = field(default_factory=list)
    names: list = field(default_factory=list)

    def __len__(self):
        return len(self.hazy)


def load_paired(root) -> PairedDataset:
    """Load ``root/hazy`` and ``root/clean`` images with matching file names."""
    hz, cl = os.path.join(root, "hazy"), os.path.join(root, "clean")
    names = [f for f in _image_files(hz) if os.path.exists(os.path.join(cl, f))]
    return PairedDataset([load_image(os.path.join(hz, f)) for f in names],
                         [load_image(os.path.join(cl, f)) for f in names], names)
