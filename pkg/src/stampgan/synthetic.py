"""Procedural image/mask pairs for desk-scale training and tests.

Each sample is a background with a linear illumination gradient plus one
foreground object (ellipse or Fourier-boundary blob) textured with stripes,
spots, or a solid fill. Object brightness follows the background gradient at
the object location, so learning to match the local lighting is possible.
Samples are deterministic per (seed, config) and always pass the instance
filters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from stampgan.domain import ImageTensor, MaskTensor
from stampgan.data import passes_filters, write_dataset

TEXTURE_FAMILIES = ("stripes", "spots", "solid")
SHAPE_FAMILIES = ("ellipse", "blob")


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    shape_families: tuple[str, ...] = SHAPE_FAMILIES
    texture_families: tuple[str, ...] = TEXTURE_FAMILIES
    min_area: float = 0.05
    max_area: float = 0.40
    # fg mean brightness = coupling * local bg brightness + offset
    brightness_coupling: float = 0.9
    brightness_offset: float = 0.15

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape_families"] = list(self.shape_families)
        d["texture_families"] = list(self.texture_families)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        d["shape_families"] = tuple(d["shape_families"])
        d["texture_families"] = tuple(d["texture_families"])
        return cls(**d)


# named presets: one synthetic "class" per texture selection
CLASS_PRESETS = {
    "mixed": SynthConfig(),
    "striped": SynthConfig(texture_families=("stripes",)),
    "spotted": SynthConfig(texture_families=("spots",)),
    "solid": SynthConfig(texture_families=("solid",)),
}


def _background(rng: np.random.Generator, n: int) -> np.ndarray:
    # luminance kept away from zero so a zeroed-out box region stays visible
    # against the background (the mask generator's only spatial cue)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    base = rng.uniform(0.25, 0.55)
    amp = rng.uniform(0.15, 0.3)
    ys, xs = np.mgrid[0:n, 0:n]
    u = (xs / n - 0.5) * np.cos(theta) + (ys / n - 0.5) * np.sin(theta)
    lum = base + amp * 2.0 * u
    tint = rng.uniform(-0.06, 0.06, size=3)
    bg = lum[:, :, None] + tint[None, None, :]
    return np.clip(bg, -0.95, 0.95)


def _shape_mask(rng: np.random.Generator, n: int, config: SynthConfig) -> np.ndarray:
    family = rng.choice(list(config.shape_families))
    cx, cy = rng.uniform(0.32, 0.68, size=2)
    rx = rng.uniform(0.10, 0.32)
    ry = rng.uniform(0.10, 0.32)
    rot = rng.uniform(0.0, np.pi)
    ys, xs = np.mgrid[0:n, 0:n]
    dx, dy = xs / n - cx, ys / n - cy
    xr = dx * np.cos(rot) + dy * np.sin(rot)
    yr = -dx * np.sin(rot) + dy * np.cos(rot)
    rad = np.sqrt((xr / rx) ** 2 + (yr / ry) ** 2)
    if family == "blob":
        # star-convex radius wobble keeps the component connected
        ang = np.arctan2(yr / ry, xr / rx)
        wob = np.ones_like(ang)
        for k in range(2, 6):
            wob += (rng.uniform(0.0, 0.12) / 1.0) * np.cos(k * ang + rng.uniform(0, 2 * np.pi))
        rad = rad / np.maximum(wob, 0.55)
    return (rad <= 1.0).astype(np.float64)


def _texture(rng: np.random.Generator, n: int, config: SynthConfig,
             local_brightness: float) -> np.ndarray:
    family = rng.choice(list(config.texture_families))
    base = config.brightness_coupling * local_brightness + config.brightness_offset
    base = float(np.clip(base + rng.normal(0.0, 0.03), -0.75, 0.75))
    tint = rng.uniform(-0.15, 0.15, size=3)
    ys, xs = np.mgrid[0:n, 0:n]
    if family == "stripes":
        psi = rng.uniform(0.0, np.pi)
        freq = rng.uniform(4.0, 9.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * ((xs / n) * np.cos(psi) + (ys / n) * np.sin(psi)) + phase)
        amp = rng.uniform(0.2, 0.4)
        lum = base + amp * np.sign(wave)
    elif family == "spots":
        freq = rng.uniform(4.0, 8.0)
        px, py = rng.uniform(0.0, 2 * np.pi, size=2)
        dots = np.sin(2 * np.pi * freq * xs / n + px) * np.sin(2 * np.pi * freq * ys / n + py)
        amp = rng.uniform(0.2, 0.4)
        lum = base + amp * np.where(dots > 0.3, 1.0, -0.4)
    else:  # solid
        shade = rng.uniform(-0.08, 0.08)
        lum = base + shade * (2.0 * xs / n - 1.0)
    fg = lum[:, :, None] + tint[None, None, :]
    return np.clip(fg, -0.95, 0.95)


def synth_sample(seed: int, config: SynthConfig | None = None) -> tuple[ImageTensor, MaskTensor]:
    """One deterministic image/mask pair; the mask always passes the filters."""
    config = config or SynthConfig()
    rng = np.random.default_rng(seed)
    n = config.size
    bg = _background(rng, n)

    mask_arr = None
    for _ in range(100):
        cand = _shape_mask(rng, n, config)
        area = cand.sum() / cand.size
        if not (config.min_area <= area <= config.max_area):
            continue
        m = MaskTensor(cand, binary=True)
        if passes_filters(m):
            mask_arr = cand
            break
    if mask_arr is None:
        # deterministic fallback: centered ellipse always satisfies the rules
        ys, xs = np.mgrid[0:n, 0:n]
        mask_arr = ((((xs / n - 0.5) / 0.25) ** 2 + ((ys / n - 0.5) / 0.25) ** 2) <= 1.0
                    ).astype(np.float64)

    local = float((bg.mean(axis=2) * mask_arr).sum() / mask_arr.sum())
    fg = _texture(rng, n, config, local)
    img = bg * (1.0 - mask_arr[:, :, None]) + fg * mask_arr[:, :, None]
    return ImageTensor(img), MaskTensor(mask_arr, binary=True)


def build_synthetic_dataset(out_dir: str, count: int, seed: int,
                            class_name: str = "mixed", size: int | None = None) -> dict:
    """Materialize PNG pairs plus a manifest recording seeds and config."""
    config = CLASS_PRESETS[class_name]
    if size is not None:
        config = SynthConfig.from_dict({**config.to_dict(), "size": size})
    pairs = [synth_sample(seed + k, config) for k in range(count)]
    meta = {"source": "synth", "base_seed": seed, "config": config.to_dict(),
            "sample_seeds": [seed + k for k in range(count)]}
    return write_dataset(out_dir, pairs, label=class_name, meta=meta)
