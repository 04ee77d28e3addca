"""The nine degradation operators plus the web-style chain composer.

Every operator is a pure function (clean image, parameters, seed) ->
degraded image. Parameters at identity strength reproduce the input
bit-exactly (each operator short-circuits before touching pixels), which
is what makes severity-0 pairs trivially verifiable and keeps replay
honest. All outputs are clamped to [0, 1].

Operators accept 1- or 3-channel images; alpha is a composite-time
concept and never flows through a degradation.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage, signal

from .core import SeedTree, clamp01, ensure_image, linear_to_srgb, luminance, srgb_to_linear
from .errors import ParameterError, ShapeError
from .patterns import PatternBank, RainStreakParams, _stamp_segment, gen_haze_texture, resize_field


def _check_channels(img: np.ndarray) -> np.ndarray:
    img = ensure_image(img)
    if img.shape[2] == 4:
        raise ParameterError("degradations operate on 1- or 3-channel images; composite alpha first")
    return img


def _rng_of(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, SeedTree):
        return seed.rng()
    return SeedTree(int(seed)).rng()


# ---------------------------------------------------------------------------
# blur
# ---------------------------------------------------------------------------

def apply_gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel truncated at 3 sigma, reflect edges."""
    img = _check_channels(img)
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    out = ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0), mode="reflect", truncate=3.0)
    return clamp01(out)


def motion_kernel(length: float, angle: float) -> np.ndarray:
    """Anti-aliased line kernel of a given length/angle, normalized to 1."""
    if length < 1:
        raise ParameterError("motion blur length must be >= 1")
    radius = int(np.ceil(length / 2.0 + 1.0))
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1].astype(np.float64)
    dx, dy = np.cos(angle), np.sin(angle)
    t = xx * dx + yy * dy
    d = np.abs(-xx * dy + yy * dx)
    cov_long = np.clip(length / 2.0 + 0.5 - np.abs(t), 0.0, 1.0)
    cov_perp = np.clip(1.0 - d, 0.0, 1.0)
    k = cov_long * cov_perp
    return k / k.sum()


def apply_motion_blur(img: np.ndarray, length: float, angle: float) -> np.ndarray:
    img = _check_channels(img)
    if length <= 1:
        return img.copy()
    k = motion_kernel(length, angle)
    out = np.empty_like(img)
    if k.shape[0] <= 13:
        for c in range(img.shape[2]):
            out[:, :, c] = ndimage.convolve(img[:, :, c], k, mode="reflect")
        return clamp01(out)
    # large kernels: reflect-pad once, then FFT convolution
    r = k.shape[0] // 2
    for c in range(img.shape[2]):
        padded = np.pad(img[:, :, c], r, mode="reflect")
        out[:, :, c] = signal.fftconvolve(padded, k, mode="valid")
    return clamp01(out)


def apply_temporal_average(frames: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Average >= 2 frames into a motion-blurred image; the middle frame is
    the sharp target. Mirrors how video clips become blur training pairs."""
    if len(frames) < 2:
        raise ParameterError("temporal averaging needs at least 2 frames")
    frames = [_check_channels(f) for f in frames]
    shape = frames[0].shape
    for f in frames[1:]:
        if f.shape != shape:
            raise ShapeError(f"frame shape mismatch: {f.shape} vs {shape}")
    blurred = clamp01(np.mean(np.stack(frames, axis=0), axis=0))
    sharp = frames[len(frames) // 2].copy()
    return sharp, blurred


# ---------------------------------------------------------------------------
# compression
# ---------------------------------------------------------------------------

def apply_jpeg(img: np.ndarray, quality: int) -> np.ndarray:
    """Baseline JPEG encode/decode round trip on 8-bit samples.

    Chroma is 4:2:0 below quality 90 and 4:4:4 at or above, mirroring
    common web encoder defaults.
    """
    img = _check_channels(img)
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise ParameterError(f"jpeg quality must be 1..100, got {quality}")
    eight = np.round(img * 255.0).astype(np.uint8)
    if eight.shape[2] == 1:
        pil = Image.fromarray(eight[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(eight, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=quality, subsampling=0 if quality >= 90 else 2)
    buf.seek(0)
    decoded = np.asarray(Image.open(buf), dtype=np.float64) / 255.0
    if decoded.ndim == 2:
        decoded = decoded[:, :, None]
    return decoded


def apply_resize_chain(img: np.ndarray, chain: Sequence[tuple[float, str]]) -> np.ndarray:
    """Sequential resampling; the last interp restores the original size."""
    img = _check_channels(img)
    if not chain:
        return img.copy()
    h0, w0 = img.shape[:2]
    h, w = h0, w0
    sizes = []
    for scale, interp in chain:
        if scale <= 0:
            raise ParameterError("resize scale must be > 0")
        h = max(int(round(h * scale)), 1)
        w = max(int(round(w * scale)), 1)
        sizes.append((h, w, interp))
    if sizes[-1][0] < 8 or sizes[-1][1] < 8:
        raise ParameterError(f"resize chain ends below 8x8: {sizes[-1][:2]}")
    out = img
    for h, w, interp in sizes:
        out = resize_field(out, h, w, interp)
    out = resize_field(out, h0, w0, sizes[-1][2])
    return clamp01(out)


# ---------------------------------------------------------------------------
# moiré
# ---------------------------------------------------------------------------

def apply_moire(img: np.ndarray, patterns: Sequence[np.ndarray],
                weights: Sequence[float]) -> np.ndarray:
    """Fuse one to three RGBA interference patterns into the image.

    out = img * (1 - sum(w_i * a_i)) + sum(w_i * a_i * pattern_i)
    """
    img = _check_channels(img)
    if not 1 <= len(patterns) <= 3:
        raise ParameterError(f"moiré fuses one to three patterns, got {len(patterns)}")
    if len(weights) != len(patterns):
        raise ParameterError("one weight per pattern required")
    for wgt in weights:
        if not 0.0 <= wgt <= 0.45:
            raise ParameterError(f"moiré blend weight must be in [0, 0.45], got {wgt}")
    if all(wgt == 0 for wgt in weights):
        return img.copy()
    h, w, c = img.shape
    occ = np.zeros((h, w, 1))
    add = np.zeros((h, w, c))
    for pat, wgt in zip(patterns, weights):
        if pat.ndim != 3 or pat.shape[2] != 4:
            raise ShapeError("moiré patterns must be RGBA")
        if pat.shape[:2] != (h, w):
            pat = resize_field(pat, h, w, "bilinear")
        a = pat[:, :, 3:4]
        rgb = pat[:, :, :3]
        if c == 1:
            rgb = luminance(clamp01(rgb))[:, :, None]
        occ += wgt * a
        add += wgt * a * rgb
    return clamp01(img * (1.0 - occ) + add)


# ---------------------------------------------------------------------------
# low light
# ---------------------------------------------------------------------------

def apply_lowlight(img: np.ndarray, scale: float, gamma: float,
                   read_noise: float = 0.0, seed=None, linear: bool = False) -> np.ndarray:
    """Brightness attenuation + gamma compression + optional sensor noise.

    out = clamp(scale * img**gamma + N(0, read_noise)), computed in sRGB
    by default; `linear` routes through the sRGB transfer function.
    """
    img = _check_channels(img)
    if not 0.0 < scale <= 1.0:
        raise ParameterError("scale must be in (0, 1]")
    if not 1.0 <= gamma <= 4.0:
        raise ParameterError("gamma must be in [1, 4]")
    if not 0.0 <= read_noise <= 0.05:
        raise ParameterError("read noise sigma must be in [0, 0.05]")
    if scale == 1.0 and gamma == 1.0 and read_noise == 0.0:
        return img.copy()
    work = srgb_to_linear(img) if linear else img
    out = scale * np.power(work, gamma)
    if read_noise > 0.0:
        out = out + _rng_of(seed).normal(0.0, read_noise, size=out.shape)
    if linear:
        out = linear_to_srgb(out)
    return clamp01(out)


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Additive noise recipe: plain i.i.d., spatially correlated grain, or
    per-segment sigmas driven by a region mask."""

    mode: str = "gaussian"  # gaussian | grain | segment
    sigma: float = 0.0
    grain_size: float = 3.0
    region_sigmas: tuple[float, ...] = ()

    def __post_init__(self):
        if self.mode not in ("gaussian", "grain", "segment"):
            raise ParameterError(f"unknown noise mode {self.mode!r}")
        if self.sigma < 0 or any(s < 0 for s in self.region_sigmas):
            raise ParameterError("noise sigmas must be >= 0")
        if self.mode == "grain" and self.grain_size < 1:
            raise ParameterError("grain size must be >= 1 px")


def apply_noise(img: np.ndarray, spec: NoiseSpec, seed, mask: np.ndarray | None = None) -> np.ndarray:
    img = _check_channels(img)
    h, w, c = img.shape
    if spec.mode == "segment":
        if mask is None:
            raise ParameterError("segment noise requires a region mask")
        if mask.shape != (h, w):
            raise ShapeError(f"mask shape {mask.shape} does not match image {(h, w)}")
        n_regions = int(mask.max()) + 1
        if len(spec.region_sigmas) < n_regions:
            raise ParameterError(f"need {n_regions} region sigmas, got {len(spec.region_sigmas)}")
        if all(s == 0 for s in spec.region_sigmas[:n_regions]):
            return img.copy()
        sigma_map = np.asarray(spec.region_sigmas, dtype=np.float64)[mask]
        noise = _rng_of(seed).standard_normal((h, w, c)) * sigma_map[:, :, None]
        return clamp01(img + noise)

    if spec.sigma == 0:
        return img.copy()
    rng = _rng_of(seed)
    if spec.mode == "gaussian":
        return clamp01(img + rng.normal(0.0, spec.sigma, size=img.shape))

    # grain: one shared 2D field, low-passed to the grain scale then
    # renormalized so the delivered deviation still equals sigma
    white = rng.standard_normal((h, w))
    fieldn = ndimage.gaussian_filter(white, sigma=spec.grain_size / 2.0, mode="reflect")
    std = fieldn.std()
    if std > 0:
        fieldn *= spec.sigma / std
    return clamp01(img + fieldn[:, :, None])


# ---------------------------------------------------------------------------
# flare
# ---------------------------------------------------------------------------

def apply_flare(img: np.ndarray, sprite: np.ndarray, position: tuple[float, float],
                intensity: float, hflip: bool = False, vflip: bool = False) -> np.ndarray:
    """Screen-blend a luminous RGBA sprite centered at a normalized position.

    out = 1 - (1 - img) * (1 - intensity * alpha * sprite); screen blending
    can only brighten, so out >= img everywhere.
    """
    img = _check_channels(img)
    px, py = position
    if not (0.0 <= px <= 1.0 and 0.0 <= py <= 1.0):
        raise ParameterError("flare position must lie in [0, 1]^2")
    if not 0.0 <= intensity <= 1.0:
        raise ParameterError("flare intensity must be in [0, 1]")
    if intensity == 0.0:
        return img.copy()
    if sprite.ndim != 3 or sprite.shape[2] != 4:
        raise ShapeError("flare sprite must be RGBA")
    if hflip:
        sprite = sprite[:, ::-1]
    if vflip:
        sprite = sprite[::-1, :]

    h, w, c = img.shape
    sh, sw = sprite.shape[:2]
    cx, cy = px * (w - 1), py * (h - 1)
    x0 = int(round(cx - sw / 2.0))
    y0 = int(round(cy - sh / 2.0))
    ix0, iy0 = max(x0, 0), max(y0, 0)
    ix1, iy1 = min(x0 + sw, w), min(y0 + sh, h)
    if ix0 >= ix1 or iy0 >= iy1:
        return img.copy()
    sx0, sy0 = ix0 - x0, iy0 - y0
    patch = sprite[sy0:sy0 + (iy1 - iy0), sx0:sx0 + (ix1 - ix0)]
    a = patch[:, :, 3:4]
    rgb = patch[:, :, :3]
    if c == 1:
        rgb = luminance(clamp01(rgb))[:, :, None]
    out = img.copy()
    region = out[iy0:iy1, ix0:ix1, :]
    out[iy0:iy1, ix0:ix1, :] = 1.0 - (1.0 - region) * (1.0 - intensity * a * rgb)
    return clamp01(out)


# ---------------------------------------------------------------------------
# reflection
# ---------------------------------------------------------------------------

def apply_reflection(transmission: np.ndarray, reflection: np.ndarray,
                     alpha: float, beta: float, blur_sigma: float = 2.0,
                     ghost_offset: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Blend a blurred (optionally ghosted) reflection layer over the scene.

    out = clamp(alpha*T + beta*(G(R) + 0.4*shift(G(R), off)) / 1.4); the
    ghost term is dropped when the offset is (0, 0).
    """
    transmission = _check_channels(transmission)
    if not 0.5 <= alpha <= 1.0:
        raise ParameterError("alpha must be in [0.5, 1]")
    if not 0.0 <= beta <= 0.5:
        raise ParameterError("beta must be in [0, 0.5]")
    if beta == 0.0:
        if alpha == 1.0:
            return transmission.copy()
        return clamp01(alpha * transmission)
    reflection = _check_channels(reflection)
    h, w, c = transmission.shape
    if reflection.shape[:2] != (h, w):
        reflection = clamp01(resize_field(reflection, h, w, "bilinear"))
    if reflection.shape[2] != c:
        if c == 1:
            reflection = luminance(reflection)[:, :, None]
        else:
            reflection = np.repeat(reflection, 3, axis=2)
    blurred = apply_gaussian_blur(reflection, blur_sigma) if blur_sigma > 0 else reflection
    dx, dy = int(ghost_offset[0]), int(ghost_offset[1])
    if (dx, dy) == (0, 0):
        layer = blurred
    else:
        layer = (blurred + 0.4 * translate_reflect(blurred, dx, dy)) / 1.4
    return clamp01(alpha * transmission + beta * layer)


def translate_reflect(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift content by (dx right, dy down) whole pixels, reflect padding."""
    arr = np.asarray(img)
    h, w = arr.shape[:2]
    ax, ay = abs(int(dx)), abs(int(dy))
    if ax >= w or ay >= h:
        raise ParameterError("translation exceeds image size")
    pad = [(ay, ay), (ax, ax)] + [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(arr, pad, mode="reflect")
    y0 = ay - dy
    x0 = ax - dx
    return padded[y0:y0 + h, x0:x0 + w].copy()


# ---------------------------------------------------------------------------
# haze
# ---------------------------------------------------------------------------

def apply_haze(img: np.ndarray, depth: np.ndarray, beta: float, airlight: float,
               texture: np.ndarray | None = None, texture_weight: float = 0.0) -> np.ndarray:
    """Atmospheric scattering: t = exp(-beta*d), out = J*t + A*(1-t).

    An optional texture field tau pulls pixels further toward the
    airlight: out = (1 - w*tau)*base + w*tau*A, so textured haze still
    respects the scattering asymptote at A.
    """
    img = _check_channels(img)
    if beta < 0:
        raise ParameterError("scattering beta must be >= 0")
    if not 0.0 <= texture_weight <= 0.6:
        raise ParameterError("texture weight must be in [0, 0.6]")
    h, w, _ = img.shape
    if depth.shape != (h, w):
        raise ShapeError(f"depth shape {depth.shape} does not match image {(h, w)}")
    if beta == 0.0 and texture_weight == 0.0:
        return img.copy()
    t = np.exp(-beta * depth)[:, :, None]
    base = img * t + airlight * (1.0 - t)
    if texture_weight > 0.0:
        if texture is None:
            raise ParameterError("texture_weight > 0 requires a texture field")
        if texture.shape != (h, w):
            texture = resize_field(texture, h, w, "bilinear")
        wt = (texture_weight * texture)[:, :, None]
        base = (1.0 - wt) * base + wt * airlight
    return clamp01(base)


# ---------------------------------------------------------------------------
# rain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RainParams:
    """Two-layer rain recipe: far-field streaks plus a perspective-scaled
    near field with optional droplet sputter and a real-pattern blend."""

    streaks: RainStreakParams = field(default_factory=lambda: RainStreakParams(1.0, 12.0))
    splash_prob: float = 0.0
    perspective_gain: float = 0.6
    bank_pattern_id: int | None = None
    bank_weight: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.splash_prob <= 1.0:
            raise ParameterError("splash probability must be in [0, 1]")
        if self.perspective_gain < 0:
            raise ParameterError("perspective gain must be >= 0")


def apply_rain(img: np.ndarray, params: RainParams, seed,
               bank: PatternBank | None = None) -> np.ndarray:
    """Composite far and near rain layers over the image with screen blend.

    The near field re-uses the far-field recipe with length/width scaled
    by (1 + perspective_gain), a thinner population, and boosted opacity;
    a sputter cluster appears at each near streak's landing end with
    probability splash_prob.
    """
    img = _check_channels(img)
    sp = params.streaks
    use_bank = params.bank_pattern_id is not None and bank is not None and len(bank) > 0
    if sp.density == 0 and params.splash_prob == 0 and not use_bank:
        return img.copy()
    h, w, c = img.shape
    root = seed if isinstance(seed, SeedTree) else SeedTree(int(seed))
    alpha = np.zeros((h, w))

    # far field
    rng_far = root.child(0).rng()
    far_count = int(rng_far.poisson(sp.density * h * w / 1000.0))
    for _ in range(far_count):
        x0, y0 = rng_far.uniform(0, w), rng_far.uniform(0, h)
        ang = sp.angle + sp.wind_jitter * rng_far.normal(0.0, 0.25)
        op = rng_far.uniform(0.45, 1.0)
        _stamp_segment(alpha, x0, y0, ang, sp.length, sp.width, op)

    # near field: longer, wider, brighter, sparser
    g = 1.0 + params.perspective_gain
    rng_near = root.child(1).rng()
    near_count = int(rng_near.poisson(0.35 * sp.density * h * w / 1000.0))
    for _ in range(near_count):
        x0, y0 = rng_near.uniform(0, w), rng_near.uniform(0, h)
        ang = sp.angle + sp.wind_jitter * rng_near.normal(0.0, 0.25)
        op = min(1.0, rng_near.uniform(0.45, 1.0) * (1.0 + 0.3 * params.perspective_gain))
        _stamp_segment(alpha, x0, y0, ang, sp.length * g, sp.width * g, op)
        if rng_near.random() < params.splash_prob:
            # sputter at the streak's travel end
            ex = x0 + np.cos(ang) * sp.length * g / 2.0
            ey = y0 + np.sin(ang) * sp.length * g / 2.0
            for _ in range(int(rng_near.integers(3, 8))):
                r = rng_near.uniform(1.0, 3.0 * sp.width * g)
                a2 = rng_near.uniform(0, 2 * np.pi)
                _stamp_segment(alpha, ex + r * np.cos(a2), ey + r * np.sin(a2),
                               a2, 1.0, 1.0, op * 0.7)

    streak_rgb = np.array([0.92, 0.95, 1.0]) if c == 3 else np.array([0.95])
    factor = (1.0 - np.clip(alpha, 0.0, 1.0)[:, :, None] * streak_rgb[None, None, :])
    out = 1.0 - (1.0 - img) * factor

    if use_bank:
        pat = bank.entry_resized(params.bank_pattern_id, h, w)
        a = pat[:, :, 3:4] * params.bank_weight
        rgb = pat[:, :, :3]
        if c == 1:
            rgb = luminance(clamp01(rgb))[:, :, None]
        out = 1.0 - (1.0 - out) * (1.0 - a * rgb)
    return clamp01(out)


# ---------------------------------------------------------------------------
# web-style chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WebChainConfig:
    """Parameter ranges for the downscale -> noise -> jpeg -> upscale chain.

    The second pass, when drawn, reuses the same structure at the given
    mildness factor, echoing second-order web degradation pipelines.
    """

    downscale_prob: float = 0.8
    scale_range: tuple[float, float] = (0.3, 0.9)
    noise_prob: float = 0.7
    sigma_range: tuple[float, float] = (0.005, 0.05)
    grain_prob: float = 0.4          # chance the noise stage is grain, not i.i.d.
    grain_size_range: tuple[float, float] = (2.0, 5.0)
    jpeg_prob: float = 0.9
    quality_range: tuple[int, int] = (20, 75)
    second_pass_prob: float = 0.3
    second_pass_mildness: float = 0.5


_INTERPS = ("bilinear", "bicubic")


def apply_web_chain(img: np.ndarray, seed, config: WebChainConfig = WebChainConfig(),
                    order_policy: str = "fixed") -> tuple[np.ndarray, list[dict]]:
    """Sample and apply a web-style degradation chain; returns the applied
    stage parameters so a manifest can replay the exact pixels."""
    img = _check_channels(img)
    if order_policy not in ("fixed", "shuffled"):
        raise ParameterError(f"order policy must be fixed or shuffled, got {order_policy!r}")
    rng = _rng_of(seed)
    out = img.copy()
    applied: list[dict] = []
    h0, w0 = img.shape[:2]

    passes = 1 + (1 if rng.random() < config.second_pass_prob else 0)
    for p in range(passes):
        mild = config.second_pass_mildness ** p
        stages = ["downscale", "noise", "jpeg"]
        if order_policy == "shuffled":
            stages = [stages[i] for i in rng.permutation(3)]
        for stage in stages:
            if stage == "downscale" and rng.random() < config.downscale_prob:
                lo, hi = config.scale_range
                scale = 1.0 - (1.0 - rng.uniform(lo, hi)) * mild
                interp = _INTERPS[rng.integers(0, len(_INTERPS))]
                out = resize_field(out, max(int(round(h0 * scale)), 8),
                                   max(int(round(w0 * scale)), 8), interp)
                out = clamp01(out)
                applied.append({"stage": "downscale", "scale": scale, "interp": interp})
            elif stage == "noise" and rng.random() < config.noise_prob:
                sigma = rng.uniform(*config.sigma_range) * mild
                if rng.random() < config.grain_prob:
                    size_px = rng.uniform(*config.grain_size_range)
                    spec = NoiseSpec(mode="grain", sigma=sigma, grain_size=size_px)
                    applied.append({"stage": "noise", "mode": "grain",
                                    "sigma": sigma, "grain_size": size_px})
                else:
                    spec = NoiseSpec(mode="gaussian", sigma=sigma)
                    applied.append({"stage": "noise", "mode": "gaussian", "sigma": sigma})
                out = apply_noise(out, spec, np.random.Generator(np.random.PCG64(rng.integers(2 ** 63))))
            elif stage == "jpeg" and rng.random() < config.jpeg_prob:
                lo, hi = config.quality_range
                q = int(round(hi - (hi - rng.integers(lo, hi + 1)) * mild))
                out = apply_jpeg(out, q)
                applied.append({"stage": "jpeg", "quality": q})
    if out.shape[:2] != (h0, w0):
        out = clamp01(resize_field(out, h0, w0, "bilinear"))
        applied.append({"stage": "upscale", "interp": "bilinear"})
    if not applied:
        return img.copy(), []
    return clamp01(out), applied
