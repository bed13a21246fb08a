"""Synthetic spliced pairs, Sobel filtering, resizing and comparison-based maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError

SOBEL_NORM = 4.0 * np.sqrt(2.0)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
LUMA = np.array([0.299, 0.587, 0.114])

# texture constants (pixel units on a [0,1] scale)
_BASE_OCTAVES = (2, 4)
_DETAIL_OCTAVES = (8, 16)
_DETAIL_AMPLITUDE = 0.01
_ARTIFACT_AMPLITUDE = 0.04
_ARTIFACT_PERIOD = 4
_GRAIN_MIN = 0.0
_GRAIN_MAX = 0.08


@dataclass
class ImageSample:
    id: str
    pixels: np.ndarray
    label: int
    gt_mask: np.ndarray | None = None


@dataclass
class SyntheticSpec:
    image_size: int = 32
    patch_area_frac: float = 0.2
    global_noise_sigma: float = 0.05
    blend_width: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.image_size < 16:
            raise ConfigError(f"image_size must be >= 16, got {self.image_size}")
        if not 0.05 <= self.patch_area_frac <= 0.5:
            raise ConfigError(f"patch_area_frac must lie in [0.05, 0.5], got {self.patch_area_frac}")
        if not 0.0 <= self.global_noise_sigma <= 0.2:
            raise ConfigError(f"global_noise_sigma must lie in [0, 0.2], got {self.global_noise_sigma}")
        if self.blend_width < 0:
            raise ConfigError(f"blend_width must be >= 0, got {self.blend_width}")


def _rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index, stream]))


def _value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """One octave of smooth value noise, size x size x 3, roughly zero mean."""
    lattice = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1, 3))
    coords = np.linspace(0.0, cells, size)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    out = np.empty((size, size, 3))
    for c in range(3):
        out[..., c] = ndimage.map_coordinates(lattice[..., c], [yy, xx], order=3, mode="nearest")
    return out


def _texture_layers(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Low-frequency content (colour, shading) and fine detail of one texture.

    The low-frequency layer also carries pixel-scale sensor grain whose
    strength varies per image, so noise level alone does not reveal a fake.
    """
    tint = rng.uniform(0.35, 0.65, size=3)
    base = np.broadcast_to(tint, (size, size, 3)).copy()
    for k, cells in enumerate(_BASE_OCTAVES):
        base += 0.12 * 0.5**k * _value_noise(rng, size, cells)
    grain = rng.uniform(_GRAIN_MIN, _GRAIN_MAX) * rng.standard_normal((size, size, 1))
    detail = np.zeros((size, size, 3))
    for k, cells in enumerate(_DETAIL_OCTAVES):
        octave = _value_noise(rng, size, cells)
        # detail is mostly luminance, as in natural images
        octave = 0.7 * octave.mean(axis=-1, keepdims=True) + 0.3 * octave
        detail += 0.5**k * octave
    detail *= _DETAIL_AMPLITUDE / max(detail.std(), 1e-12)
    return base + grain, detail


def _region_mask(rng: np.random.Generator, size: int, area_frac: float) -> np.ndarray:
    """Rectangle or ellipse of the requested area fraction, fully inside the frame."""
    area = area_frac * size * size
    elliptical = rng.random() < 0.5
    for _ in range(100):
        aspect = rng.uniform(0.6, 1.6)
        if elliptical:
            ry = np.sqrt(area * aspect / np.pi)
            rx = area / (np.pi * ry)
            if 2 * ry + 1 > size or 2 * rx + 1 > size:
                continue
            cy = rng.uniform(ry - 0.5, size - 0.5 - ry)
            cx = rng.uniform(rx - 0.5, size - 0.5 - rx)
            yy, xx = np.mgrid[0:size, 0:size]
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            hh = int(round(np.sqrt(area * aspect)))
            ww = int(round(area / max(hh, 1)))
            if not (1 <= hh <= size and 1 <= ww <= size):
                continue
            y0 = rng.integers(0, size - hh + 1)
            x0 = rng.integers(0, size - ww + 1)
            mask = np.zeros((size, size), dtype=bool)
            mask[y0 : y0 + hh, x0 : x0 + ww] = True
        if mask.any():
            return mask
    raise ConfigError(f"cannot place a region of area fraction {area_frac} in a {size}px image")


def _generator_artifact(size: int) -> np.ndarray:
    """Grid-aligned periodic pattern left by upsampling layers of a face generator."""
    t = np.arange(size) * (2.0 * np.pi / _ARTIFACT_PERIOD) + np.pi / 4
    pattern = 2.0 * np.outer(np.cos(t), np.cos(t))  # +-1 at every pixel
    return pattern[..., None] * np.array([1.0, 0.8, 0.9])


def synth_pair(spec: SyntheticSpec, index: int) -> tuple[ImageSample, ImageSample]:
    """Build a (real, fake) pair; a pure function of ``(spec, index)``.

    The fake keeps the low-frequency content of the real image inside the
    spliced region (blending/colour correction), swaps its fine detail for a
    donor's, and carries a faint periodic generator artifact there. I.i.d.
    Gaussian noise, one draw per pixel applied to all three channels, is then
    added to every pixel of the fake.
    """
    spec.validate()
    size = spec.image_size
    base, detail = _texture_layers(_rng(spec.seed, index, 0), size)
    real_px = np.clip(base + detail, 0.0, 1.0)

    layout_rng = _rng(spec.seed, index, 1)
    mask = _region_mask(layout_rng, size, spec.patch_area_frac)
    _, donor_detail = _texture_layers(_rng(spec.seed, index, 2), size)
    donor = base + donor_detail + _ARTIFACT_AMPLITUDE * _generator_artifact(size)

    if spec.blend_width > 0:
        alpha = np.clip(ndimage.distance_transform_edt(mask) / spec.blend_width, 0.0, 1.0)
    else:
        alpha = mask.astype(float)
    alpha = alpha[..., None]
    fake_px = (1.0 - alpha) * real_px + alpha * donor
    noise_rng = _rng(spec.seed, index, 3)
    # one draw per pixel shared by the channels: coding noise is luma-dominated
    noise = noise_rng.normal(0.0, spec.global_noise_sigma, size=(size, size, 1))
    fake_px = fake_px + noise
    fake_px = np.clip(fake_px, 0.0, 1.0)

    real = ImageSample(id=f"{index:06d}_real", pixels=real_px, label=0)
    fake = ImageSample(id=f"{index:06d}_fake", pixels=fake_px, label=1, gt_mask=mask.astype(np.uint8))
    return real, fake


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise InputError(f"expected an H x W x 3 image, got shape {image.shape}")
    return image


def sobel_map(image: np.ndarray) -> np.ndarray:
    """Per-channel Sobel gradient magnitude, scaled into [0, 1]."""
    image = _check_image(image)
    p = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = image.shape[:2]
    # separable form: differences first, so constant regions cancel exactly
    dx = p[:, 2:] - p[:, :-2]
    dy = p[2:, :] - p[:-2, :]
    gx = dx[:h] + 2 * dx[1 : h + 1] + dx[2 : h + 2]
    gy = dy[:, :w] + 2 * dy[:, 1 : w + 1] + dy[:, 2 : w + 2]
    return np.clip(np.sqrt(gx**2 + gy**2) / SOBEL_NORM, 0.0, 1.0)


def pixel_diff_map(real: np.ndarray, fake: np.ndarray, threshold: float | None = None) -> np.ndarray:
    real = np.asarray(real, dtype=float)
    fake = np.asarray(fake, dtype=float)
    if real.shape != fake.shape:
        raise InputError(f"shape mismatch: {real.shape} vs {fake.shape}")
    diff = np.abs(fake - real)
    if diff.ndim == 3:
        diff = diff.mean(axis=-1)
    if threshold is not None:
        diff = np.where(diff < threshold, 0.0, diff)
    return np.clip(diff, 0.0, 1.0)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def to_luma(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    return image @ LUMA if image.ndim == 3 else image


def ssim_index(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM of two single-channel images (replicate-padded windows)."""
    g = gaussian_window()

    def blur(a: np.ndarray) -> np.ndarray:
        a = ndimage.correlate1d(a, g, axis=0, mode="nearest")
        return ndimage.correlate1d(a, g, axis=1, mode="nearest")

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return num / den


def ssim_map(real: np.ndarray, fake: np.ndarray) -> np.ndarray:
    """Manipulation map ``clip((1 - SSIM) / 2, 0, 1)``; untouched regions map to 0."""
    real = np.asarray(real, dtype=float)
    fake = np.asarray(fake, dtype=float)
    if real.shape != fake.shape:
        raise InputError(f"shape mismatch: {real.shape} vs {fake.shape}")
    if min(real.shape[:2]) < SSIM_WINDOW:
        raise InputError(f"image side must be >= {SSIM_WINDOW} for SSIM, got {real.shape[:2]}")
    s = ssim_index(to_luma(real), to_luma(fake))
    return np.clip((1.0 - s) / 2.0, 0.0, 1.0)


def resize_bilinear(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D map."""
    values = np.asarray(values, dtype=float)
    h, w = values.shape
    if h < 1 or w < 1 or out_h < 1 or out_w < 1:
        raise InputError(f"invalid resize {values.shape} -> ({out_h}, {out_w})")

    def coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if n_out == 1:
            pos = np.array([(n_in - 1) / 2.0])
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(h, out_h)
    x0, x1, fx = coords(w, out_w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = values[np.ix_(y0, x0)] * (1 - fx) + values[np.ix_(y0, x1)] * fx
    bottom = values[np.ix_(y1, x0)] * (1 - fx) + values[np.ix_(y1, x1)] * fx
    out = top * (1 - fy) + bottom * fy
    # convex weights can overshoot by an ulp
    return np.clip(out, values.min(), values.max())
