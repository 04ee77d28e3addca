"""Procedural overlay assets: moiré gratings, flare sprites, rain streak
layers, haze textures, plus ingestion of pattern banks, depth maps and
segmentation masks.

Collected real-world pattern banks are optional inputs; every generator
here is a pure function of (parameters, seed) so the default banks are
hermetic and bit-reproducible. All RGBA outputs keep both color and alpha
inside [0, 1]; blend weighting happens at composite time, not here.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .core import SeedTree, clamp01, ensure_image, load_image, luminance
from .errors import BankError, ParameterError, ShapeError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# resampling helper (float fields, any channel count)
# ---------------------------------------------------------------------------

_RESAMPLE = {
    "nearest": Image.NEAREST,
    "bilinear": Image.BILINEAR,
    "bicubic": Image.BICUBIC,
}


def resize_field(arr: np.ndarray, height: int, width: int, interp: str = "bilinear") -> np.ndarray:
    """Resample a float array ((H,W) or (H,W,C)) to a new size.

    Uses PIL's float path per channel; Pillow applies proper filter
    support scaling on downsizes, so repeated down/up chains behave like
    a real resampler rather than naive decimation.
    """
    if interp not in _RESAMPLE:
        raise ParameterError(f"unknown interpolation {interp!r}")
    a = np.asarray(arr, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[:, :, None]
    if a.shape[0] == height and a.shape[1] == width:
        return a[:, :, 0] if squeeze else a.copy()
    chans = []
    for c in range(a.shape[2]):
        im = Image.fromarray(a[:, :, c].astype(np.float32), mode="F")
        im = im.resize((width, height), _RESAMPLE[interp])
        chans.append(np.asarray(im, dtype=np.float64))
    out = np.stack(chans, axis=2)
    return out[:, :, 0] if squeeze else out


# ---------------------------------------------------------------------------
# moiré gratings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MoireParams:
    """Two interfering linear gratings; frequencies in cycles per image."""

    freq_a: float
    freq_b: float
    angle_a: float = 0.0
    angle_b: float = 0.0
    phase_a: float = 0.0
    phase_b: float = 0.0
    scale: str = "medium"  # fine | medium | coarse, a labeling of freq band
    chroma_gain: float = 0.0

    def __post_init__(self):
        if self.freq_a == self.freq_b and self.angle_a == self.angle_b:
            raise ParameterError("degenerate moiré: both gratings identical in freq and angle")
        if not 0.0 <= self.chroma_gain <= 1.0:
            raise ParameterError("chroma_gain must be in [0, 1]")


# Frequency bands (cycles per image) behind the fine/medium/coarse labels.
MOIRE_SCALE_BANDS = {
    "fine": (48.0, 128.0),
    "medium": (16.0, 48.0),
    "coarse": (4.0, 16.0),
}


def gen_moire_pattern(params: MoireParams, size: int) -> np.ndarray:
    """Render the interference of two sine gratings as an RGBA pattern.

    pattern = 0.5 + 0.5*sin(g_a)*sin(g_b). The product of sines carries
    its spectral energy at |f_a - f_b| and f_a + f_b, which is exactly the
    beat structure seen when photographing a screen. chroma_gain offsets
    the per-channel phase of grating A so fringes pick up color.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / float(size)

    def grating(freq, angle, phase, extra=0.0):
        return np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy)
                      + phase + extra)

    g_b = grating(params.freq_b, params.angle_b, params.phase_b)
    channels = []
    for ch in range(3):
        shift = params.chroma_gain * ch * (2 * np.pi / 3)
        g_a = grating(params.freq_a, params.angle_a, params.phase_a, shift)
        channels.append(0.5 + 0.5 * g_a * g_b)
    rgba = np.empty((size, size, 4))
    rgba[:, :, :3] = np.stack(channels, axis=2)
    rgba[:, :, 3] = 1.0
    return clamp01(rgba)


def random_moire_params(rng: np.random.Generator, scale: str | None = None) -> MoireParams:
    """Draw plausible grating pairs: near frequencies, small angle offset."""
    if scale is None:
        scale = ["fine", "medium", "coarse"][rng.integers(0, 3)]
    lo, hi = MOIRE_SCALE_BANDS[scale]
    freq_a = rng.uniform(lo, hi)
    freq_b = freq_a * rng.uniform(1.02, 1.25)
    angle = rng.uniform(0, np.pi)
    return MoireParams(
        freq_a=freq_a,
        freq_b=freq_b,
        angle_a=angle,
        angle_b=angle + rng.uniform(-0.2, 0.2),
        phase_a=rng.uniform(0, 2 * np.pi),
        phase_b=rng.uniform(0, 2 * np.pi),
        scale=scale,
        chroma_gain=rng.uniform(0.0, 0.8),
    )


# ---------------------------------------------------------------------------
# flare sprites
# ---------------------------------------------------------------------------

FLARE_KINDS = ("radial_glow", "streak", "ring")


def gen_flare_sprite(kind: str, intensity: float, color_temp: float,
                     seed: SeedTree | int, size: int = 512) -> np.ndarray:
    """Luminous RGBA sprite with alpha proportional to luminance.

    kind selects the geometry (soft glow, star streaks, or halo ring);
    color_temp in [0, 1] sweeps cool blue-white to warm amber. The peak
    alpha equals `intensity`, so intensity 0 is fully transparent.
    """
    if kind not in FLARE_KINDS:
        raise ParameterError(f"unknown flare kind {kind!r}")
    if not 0.0 <= intensity <= 1.0:
        raise ParameterError("flare intensity must be in [0, 1]")
    rng = seed.rng() if isinstance(seed, SeedTree) else SeedTree(int(seed)).rng()

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = cy = (size - 1) / 2.0
    # radius normalized so the image border sits near r = 1
    r = np.hypot(xx - cx, yy - cy) / (size / 2.0)
    theta = np.arctan2(yy - cy, xx - cx)

    sigma = rng.uniform(0.28, 0.4)
    lum = np.exp(-((r / sigma) ** 2))
    lum += 0.6 * np.exp(-((r / (sigma * 0.35)) ** 2))  # hot core

    if kind == "streak":
        n_arms = int(rng.integers(4, 9))
        base = rng.uniform(0, np.pi)
        for k in range(n_arms):
            ang = base + k * np.pi / n_arms
            perp = np.abs(np.sin(theta - ang)) * r
            lum += 0.8 * np.exp(-((perp / 0.012) ** 2)) * np.exp(-((r / 0.95) ** 2))
    elif kind == "ring":
        r0 = rng.uniform(0.45, 0.75)
        w = rng.uniform(0.02, 0.06)
        lum = 0.35 * lum + np.exp(-(((r - r0) / w) ** 2))

    peak = lum.max()
    if peak > 0:
        lum = lum / peak

    warm = np.array([1.0, 0.78, 0.52])
    cool = np.array([0.72, 0.85, 1.0])
    tint = cool + (warm - cool) * float(np.clip(color_temp, 0.0, 1.0))

    rgba = np.empty((size, size, 4))
    rgba[:, :, :3] = lum[:, :, None] * tint[None, None, :]
    rgba[:, :, 3] = intensity * lum
    return clamp01(rgba)


# ---------------------------------------------------------------------------
# rain streak layers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RainStreakParams:
    """Geometry of one streak layer; density is streaks per kilopixel."""

    density: float
    length: float
    angle: float = np.pi / 2
    width: float = 1.2
    wind_jitter: float = 0.2

    def __post_init__(self):
        if self.density < 0:
            raise ParameterError("rain density must be >= 0")
        if self.length < 1:
            raise ParameterError("rain streak length must be >= 1 px")


def gen_rain_streaks(size: tuple[int, int], params: RainStreakParams,
                     seed: SeedTree | int) -> np.ndarray:
    """Render anti-aliased bright streak segments into an RGBA layer.

    Streak count is Poisson in the image area; each streak gets its own
    opacity draw and an angle jittered by `wind_jitter`. Overlaps combine
    with max() so alpha never leaves [0, 1].
    """
    h, w = size
    rng = seed.rng() if isinstance(seed, SeedTree) else SeedTree(int(seed)).rng()
    alpha = np.zeros((h, w))
    count = int(rng.poisson(params.density * h * w / 1000.0))
    for _ in range(count):
        x0 = rng.uniform(0, w)
        y0 = rng.uniform(0, h)
        ang = params.angle + params.wind_jitter * rng.normal(0.0, 0.25)
        opacity = rng.uniform(0.45, 1.0)
        _stamp_segment(alpha, x0, y0, ang, params.length, params.width, opacity)
    rgba = np.empty((h, w, 4))
    # slightly cool-white streak color, typical of backlit rain
    rgba[:, :, 0] = 0.92
    rgba[:, :, 1] = 0.95
    rgba[:, :, 2] = 1.0
    rgba[:, :, 3] = np.clip(alpha, 0.0, 1.0)
    return rgba


def _stamp_segment(alpha: np.ndarray, x0: float, y0: float, angle: float,
                   length: float, width: float, opacity: float) -> None:
    """Max-blend one anti-aliased segment centered at (x0, y0) into alpha."""
    h, w = alpha.shape
    dx, dy = np.cos(angle), np.sin(angle)
    half = (length - 1.0) / 2.0
    margin = width / 2.0 + 1.5
    xmin = int(np.floor(x0 - abs(dx) * half - margin))
    xmax = int(np.ceil(x0 + abs(dx) * half + margin)) + 1
    ymin = int(np.floor(y0 - abs(dy) * half - margin))
    ymax = int(np.ceil(y0 + abs(dy) * half + margin)) + 1
    xmin, xmax = max(xmin, 0), min(xmax, w)
    ymin, ymax = max(ymin, 0), min(ymax, h)
    if xmin >= xmax or ymin >= ymax:
        return
    yy, xx = np.mgrid[ymin:ymax, xmin:xmax].astype(np.float64)
    rx, ry = xx - x0, yy - y0
    t = rx * dx + ry * dy                    # longitudinal position
    d = np.abs(-rx * dy + ry * dx)           # perpendicular distance
    cov_long = np.clip(half + 0.5 - np.abs(t), 0.0, 1.0)
    cov_perp = np.clip(width / 2.0 + 0.5 - d, 0.0, 1.0)
    patch = opacity * cov_long * cov_perp
    np.maximum(alpha[ymin:ymax, xmin:xmax], patch, out=alpha[ymin:ymax, xmin:xmax])


# ---------------------------------------------------------------------------
# haze textures
# ---------------------------------------------------------------------------

def gen_haze_texture(size: int, octaves: int, seed: SeedTree | int) -> np.ndarray:
    """Smooth value-noise field in [0, 1], (size, size) single channel.

    Octave o adds a bilinear lattice at 4 * 2^o cells with amplitude
    0.5^o; the sum is min/max normalized. The base lattice spacing of
    size/4 keeps the field's correlation length comfortably above size/8.
    """
    if not 1 <= octaves <= 6:
        raise ParameterError("octaves must be in 1..6")
    if size < 16:
        raise ParameterError("haze texture size must be >= 16")
    rng = seed.rng() if isinstance(seed, SeedTree) else SeedTree(int(seed)).rng()
    field_sum = np.zeros((size, size))
    for o in range(octaves):
        cells = 4 * (2 ** o)
        lattice = rng.random((cells + 1, cells + 1))
        field_sum += (0.5 ** o) * _bilinear_lattice(lattice, size, size)
    lo, hi = field_sum.min(), field_sum.max()
    if hi - lo < 1e-12:
        return np.zeros((size, size))
    return (field_sum - lo) / (hi - lo)


def _bilinear_lattice(lattice: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    gh, gw = lattice.shape
    ys = np.linspace(0.0, gh - 1.0, out_h)
    xs = np.linspace(0.0, gw - 1.0, out_w)
    y0 = np.minimum(np.floor(ys).astype(int), gh - 2)
    x0 = np.minimum(np.floor(xs).astype(int), gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    tl = lattice[np.ix_(y0, x0)]
    tr = lattice[np.ix_(y0, x0 + 1)]
    bl = lattice[np.ix_(y0 + 1, x0)]
    br = lattice[np.ix_(y0 + 1, x0 + 1)]
    top = tl * (1 - fx) + tr * fx
    bot = bl * (1 - fx) + br * fx
    return top * (1 - fy) + bot * fy


# ---------------------------------------------------------------------------
# pattern banks and sidecar ingestion
# ---------------------------------------------------------------------------

@dataclass
class PatternBank:
    """Immutable set of RGBA overlay entries sharing a semantic tag."""

    entries: list = field(default_factory=list)
    tags: list = field(default_factory=list)
    kind: str = ""

    def __post_init__(self):
        for e in self.entries:
            if e.ndim != 3 or e.shape[2] != 4:
                raise ShapeError("pattern bank entries must be RGBA")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def scale_levels(self) -> set:
        return {e.shape[:2] for e in self.entries}

    def entry_resized(self, index: int, height: int, width: int) -> np.ndarray:
        e = self.entries[index % len(self.entries)]
        return clamp01(resize_field(e, height, width, "bilinear"))


def load_pattern_bank(directory, kind_tag: str) -> PatternBank:
    """Load every decodable image in a directory as an RGBA bank entry.

    RGB entries gain alpha = luminance (bright pixels blend strongest);
    grayscale is broadcast. Files that fail to decode are skipped with a
    warning; an empty usable set raises BankError.
    """
    if not os.path.isdir(directory):
        raise BankError(f"pattern bank directory not found: {directory}")
    entries, tags = [], []
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if not os.path.isfile(path):
            continue
        try:
            img = load_image(path)
        except Exception as exc:
            log.warning("pattern bank: skipping %s (%s)", path, exc)
            continue
        entries.append(_to_rgba(img))
        tags.append(kind_tag)
    if not entries:
        raise BankError(f"no usable pattern entries under {directory}")
    return PatternBank(entries=entries, tags=tags, kind=kind_tag)


def _to_rgba(img: np.ndarray) -> np.ndarray:
    img = ensure_image(img)
    h, w, c = img.shape
    rgba = np.empty((h, w, 4))
    if c == 4:
        return img.copy()
    if c == 3:
        rgba[:, :, :3] = img
        rgba[:, :, 3] = luminance(img)
    else:
        rgba[:, :, :3] = img
        rgba[:, :, 3] = img[:, :, 0]
    return rgba


def load_depth(path, match_size: tuple[int, int] | None = None) -> np.ndarray:
    """16-bit grayscale PNG to a normalized (H, W) depth field.

    0 reads as nearest, 65535 as farthest. If match_size is given the
    field is bilinearly resampled to pair with its clean image.
    """
    img = load_image(path)
    if img.shape[2] != 1:
        raise ShapeError(f"{path}: depth maps must be single-channel")
    d = img[:, :, 0]
    if match_size is not None and d.shape != tuple(match_size):
        d = resize_field(d, match_size[0], match_size[1], "bilinear")
    return np.clip(d, 0.0, 1.0)


def load_mask(path, match_size: tuple[int, int] | None = None) -> np.ndarray:
    """8-bit grayscale PNG of region ids to a contiguous (H, W) int map.

    Pixel values become region ids renumbered to {0..K-1} in value order.
    Resampling, when needed, is nearest-neighbor to keep ids crisp.
    """
    img = load_image(path)
    if img.shape[2] != 1:
        raise ShapeError(f"{path}: segmentation masks must be single-channel")
    raw = np.round(img[:, :, 0] * 255.0).astype(np.int64)
    if match_size is not None and raw.shape != tuple(match_size):
        f = resize_field(raw.astype(np.float64), match_size[0], match_size[1], "nearest")
        raw = np.round(f).astype(np.int64)
    _, contiguous = np.unique(raw, return_inverse=True)
    return contiguous.reshape(raw.shape)


def save_depth_png(depth: np.ndarray, path) -> None:
    """Write a (H, W) float depth field as 16-bit grayscale PNG."""
    d = np.clip(np.asarray(depth, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(d * 65535.0).astype(np.uint16)).save(path, format="PNG")


def save_mask_png(mask: np.ndarray, path) -> None:
    """Write a (H, W) integer region-id map as 8-bit grayscale PNG."""
    m = np.asarray(mask)
    if m.min() < 0 or m.max() > 255:
        raise ParameterError("mask region ids must fit in 0..255")
    Image.fromarray(m.astype(np.uint8)).save(path, format="PNG")
