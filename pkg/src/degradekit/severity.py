"""Severity scales: mapping a normalized strength in [0, 1] to concrete
operator parameters, plus the tagged parameter containers that land in
manifests and the dispatcher that replays them.

The shipped default map (DEFAULT_SEVERITY_MAP) is the versioned source of
truth for how strong each task gets. Severity 0 always lands on
identity-strength parameters; severity 1 on the strongest configured
band. Between the endpoints each scalar parameter is drawn uniformly
inside a band whose edges interpolate linearly from the identity value to
the severity-1 range:

    task         parameter        identity    range at severity 1
    ---------    -------------    --------    -------------------
    blur         sigma (px)       0           [2.5, 5.0]
    blur         length (px)      1           [9, 21]
    compression  jpeg quality     100         [5, 30]
    compression  resize scale     1.0         [0.35, 0.8]
    moire        blend weight     0           [0.15, 0.40]
    low_light    scale            1.0         [0.15, 0.25]
    low_light    gamma            1.0         [2.6, 3.0]
    low_light    read noise       0           [0.004, 0.02]
    noise        sigma            0           [0.06, 0.15]
    noise        region sigma     0           [0.04, 0.14]
    flare        intensity        0           [0.55, 0.95]
    reflection   alpha            1.0         [0.60, 0.80]
    reflection   beta             0           [0.25, 0.50]
    reflection   blur sigma       1.0         [1.5, 3.0]
    reflection   ghost offset     0           [5, 15] px
    haze         beta             0           [1.3, 3.2]
    haze         texture weight   0           [0.15, 0.45]
    rain         density (/kpx)   0           [1.0, 2.6]
    rain         length (px)      1           [14, 30]
    rain         width (px)       1.0         [1.2, 2.2]
    rain         splash prob      0           [0.15, 0.40]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import SeedTree, TaskKind, check_severity
from .degradations import (
    NoiseSpec,
    RainParams,
    apply_flare,
    apply_gaussian_blur,
    apply_haze,
    apply_jpeg,
    apply_lowlight,
    apply_moire,
    apply_motion_blur,
    apply_noise,
    apply_rain,
    apply_reflection,
    apply_resize_chain,
)
from .errors import ParameterError
from .patterns import PatternBank, RainStreakParams, gen_haze_texture


# ---------------------------------------------------------------------------
# per-task parameter containers (the manifest `params` payload)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlurTask:
    mode: str = "gaussian"  # gaussian | motion
    sigma: float = 0.0
    length: float = 1.0
    angle: float = 0.0


@dataclass(frozen=True)
class CompressionTask:
    quality: int = 100
    resize_chain: tuple = ()  # ((scale, interp), ...)


@dataclass(frozen=True)
class MoireTask:
    pattern_ids: tuple = ()
    weights: tuple = ()


@dataclass(frozen=True)
class LowLightTask:
    scale: float = 1.0
    gamma: float = 1.0
    read_noise: float = 0.0


@dataclass(frozen=True)
class NoiseTask:
    mode: str = "gaussian"
    sigma: float = 0.0
    grain_size: float = 3.0
    region_sigmas: tuple = ()


@dataclass(frozen=True)
class FlareTask:
    sprite_id: int = 0
    position: tuple = (0.5, 0.5)
    intensity: float = 0.0
    hflip: bool = False
    vflip: bool = False


@dataclass(frozen=True)
class ReflectionTask:
    alpha: float = 1.0
    beta: float = 0.0
    blur_sigma: float = 1.0
    ghost_offset: tuple = (0, 0)


@dataclass(frozen=True)
class HazeTask:
    beta: float = 0.0
    airlight: float = 0.85
    texture_weight: float = 0.0
    texture_octaves: int = 3


@dataclass(frozen=True)
class RainTask:
    density: float = 0.0
    length: float = 1.0
    angle: float = np.pi / 2
    width: float = 1.0
    wind_jitter: float = 0.2
    splash_prob: float = 0.0
    perspective_gain: float = 0.6
    bank_pattern_id: Optional[int] = None


TASK_PARAM_TYPES = {
    TaskKind.BLUR: BlurTask,
    TaskKind.COMPRESSION: CompressionTask,
    TaskKind.MOIRE: MoireTask,
    TaskKind.LOW_LIGHT: LowLightTask,
    TaskKind.NOISE: NoiseTask,
    TaskKind.FLARE: FlareTask,
    TaskKind.REFLECTION: ReflectionTask,
    TaskKind.HAZE: HazeTask,
    TaskKind.RAIN: RainTask,
}

_KIND_OF_TYPE = {cls: task for task, cls in TASK_PARAM_TYPES.items()}


def params_to_json(params) -> dict:
    """Tagged snake_case dict; this is the manifest replay contract."""
    task = _KIND_OF_TYPE.get(type(params))
    if task is None:
        raise ParameterError(f"not a task parameter container: {type(params)!r}")
    out = {"kind": task.value}
    for key, value in params.__dict__.items():
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        out[key] = value
    return out


def params_from_json(obj: dict):
    kind = TaskKind.parse(obj.get("kind", ""))
    cls = TASK_PARAM_TYPES[kind]
    kwargs = {}
    for key, value in obj.items():
        if key == "kind":
            continue
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# severity bands
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Band:
    """A severity-indexed uniform range.

    At severity s the draw is uniform on [lerp(identity, lo1, s),
    lerp(identity, hi1, s)], so s = 0 collapses to the identity value and
    s = 1 spans [lo1, hi1].
    """

    identity: float
    lo1: float
    hi1: float

    def bounds(self, severity: float) -> tuple[float, float]:
        s = check_severity(severity)
        return (self.identity + s * (self.lo1 - self.identity),
                self.identity + s * (self.hi1 - self.identity))

    def draw(self, severity: float, rng: np.random.Generator) -> float:
        lo, hi = self.bounds(severity)
        return float(rng.uniform(lo, hi))


@dataclass(frozen=True)
class SeverityMap:
    """Named strength bands per task; override entries to retune recipes."""

    bands: dict = field(default_factory=dict)

    def band(self, task: TaskKind, name: str) -> Band:
        try:
            return self.bands[task][name]
        except KeyError:
            raise ParameterError(f"severity map has no band {task.value}.{name}") from None

    def with_band(self, task: TaskKind, name: str, band: Band) -> "SeverityMap":
        bands = {t: dict(v) for t, v in self.bands.items()}
        bands.setdefault(task, {})[name] = band
        return SeverityMap(bands=bands)


DEFAULT_SEVERITY_MAP = SeverityMap(bands={
    TaskKind.BLUR: {
        "sigma": Band(0.0, 3.0, 4.0),
        "length": Band(1.0, 12.0, 18.0),
    },
    TaskKind.COMPRESSION: {
        "quality": Band(100.0, 10.0, 20.0),
        "resize_scale": Band(1.0, 0.4, 0.7),
    },
    TaskKind.MOIRE: {
        "weight": Band(0.0, 0.15, 0.40),
    },
    TaskKind.LOW_LIGHT: {
        "scale": Band(1.0, 0.15, 0.25),
        "gamma": Band(1.0, 2.6, 3.0),
        "read_noise": Band(0.0, 0.004, 0.02),
    },
    TaskKind.NOISE: {
        "sigma": Band(0.0, 0.09, 0.13),
        "region_sigma": Band(0.0, 0.05, 0.12),
    },
    TaskKind.FLARE: {
        "intensity": Band(0.0, 0.55, 0.95),
    },
    TaskKind.REFLECTION: {
        "alpha": Band(1.0, 0.60, 0.80),
        "beta": Band(0.0, 0.25, 0.50),
        "blur_sigma": Band(1.0, 1.5, 3.0),
        "ghost": Band(0.0, 5.0, 15.0),
    },
    TaskKind.HAZE: {
        "beta": Band(0.0, 2.0, 3.0),
        "texture_weight": Band(0.0, 0.2, 0.4),
    },
    TaskKind.RAIN: {
        "density": Band(0.0, 1.0, 2.6),
        "length": Band(1.0, 14.0, 30.0),
        "width": Band(1.0, 1.2, 2.2),
        "splash_prob": Band(0.0, 0.15, 0.40),
    },
})


def severity_to_params(task: TaskKind, severity: float,
                       smap: SeverityMap = DEFAULT_SEVERITY_MAP,
                       seed: SeedTree | int = 0,
                       n_mask_regions: int | None = None,
                       rain_bank: bool = False):
    """Draw concrete operator parameters for a task at a given severity.

    Identical (task, severity, seed) always yields identical parameters.
    Segment-aware noise is only drawn when the caller reports a region
    count; rain bank blending only when a bank is actually available.
    """
    severity = check_severity(severity)
    task = TaskKind(task)
    rng = seed.rng() if isinstance(seed, SeedTree) else SeedTree(int(seed)).rng()

    if task is TaskKind.BLUR:
        mode = "gaussian" if rng.random() < 0.5 else "motion"
        return BlurTask(
            mode=mode,
            sigma=smap.band(task, "sigma").draw(severity, rng),
            length=smap.band(task, "length").draw(severity, rng),
            angle=float(rng.uniform(0, np.pi)),
        )

    if task is TaskKind.COMPRESSION:
        quality = int(round(smap.band(task, "quality").draw(severity, rng)))
        use_resize = rng.random() < 0.6 and severity > 0
        scale = smap.band(task, "resize_scale").draw(severity, rng)
        interp = ("bilinear", "bicubic")[rng.integers(0, 2)]
        chain = ((float(scale), interp),) if use_resize else ()
        return CompressionTask(quality=quality, resize_chain=chain)

    if task is TaskKind.MOIRE:
        count = int(rng.integers(1, 4))
        ids = tuple(int(i) for i in rng.integers(0, 2 ** 31, size=count))
        weights = tuple(smap.band(task, "weight").draw(severity, rng) for _ in range(count))
        return MoireTask(pattern_ids=ids, weights=weights)

    if task is TaskKind.LOW_LIGHT:
        return LowLightTask(
            scale=smap.band(task, "scale").draw(severity, rng),
            gamma=smap.band(task, "gamma").draw(severity, rng),
            read_noise=smap.band(task, "read_noise").draw(severity, rng),
        )

    if task is TaskKind.NOISE:
        modes = ["gaussian", "grain"]
        if n_mask_regions:
            modes.append("segment")
        mode = modes[rng.integers(0, len(modes))]
        if mode == "segment":
            sigmas = tuple(smap.band(task, "region_sigma").draw(severity, rng)
                           for _ in range(int(n_mask_regions)))
            return NoiseTask(mode="segment", region_sigmas=sigmas)
        return NoiseTask(
            mode=mode,
            sigma=smap.band(task, "sigma").draw(severity, rng),
            grain_size=float(rng.uniform(2.0, 5.0)),
        )

    if task is TaskKind.FLARE:
        return FlareTask(
            sprite_id=int(rng.integers(0, 2 ** 31)),
            position=(float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.2, 0.8))),
            intensity=smap.band(task, "intensity").draw(severity, rng),
            hflip=bool(rng.random() < 0.5),
            vflip=bool(rng.random() < 0.5),
        )

    if task is TaskKind.REFLECTION:
        ghosting = rng.random() < 0.5
        mag = smap.band(task, "ghost").draw(severity, rng)
        signs = rng.integers(0, 2, size=2) * 2 - 1
        offset = (int(round(mag)) * int(signs[0]), int(round(mag)) * int(signs[1])) if ghosting else (0, 0)
        return ReflectionTask(
            alpha=smap.band(task, "alpha").draw(severity, rng),
            beta=smap.band(task, "beta").draw(severity, rng),
            blur_sigma=smap.band(task, "blur_sigma").draw(severity, rng),
            ghost_offset=offset,
        )

    if task is TaskKind.HAZE:
        return HazeTask(
            beta=smap.band(task, "beta").draw(severity, rng),
            airlight=float(rng.uniform(0.78, 0.92)),
            texture_weight=smap.band(task, "texture_weight").draw(severity, rng),
            texture_octaves=int(rng.integers(2, 5)),
        )

    if task is TaskKind.RAIN:
        return RainTask(
            density=smap.band(task, "density").draw(severity, rng),
            length=smap.band(task, "length").draw(severity, rng),
            angle=float(np.pi / 2 + rng.uniform(-0.4, 0.4)),
            width=smap.band(task, "width").draw(severity, rng),
            wind_jitter=float(rng.uniform(0.05, 0.35)),
            splash_prob=smap.band(task, "splash_prob").draw(severity, rng),
            perspective_gain=float(rng.uniform(0.4, 1.0)),
            bank_pattern_id=int(rng.integers(0, 2 ** 31)) if rain_bank else None,
        )

    raise ParameterError(f"no severity recipe for task {task}")


# ---------------------------------------------------------------------------
# dispatcher
# ---------------------------------------------------------------------------

@dataclass
class Resources:
    """Side inputs a record may need: sidecars, a second image, banks."""

    depth: np.ndarray | None = None
    mask: np.ndarray | None = None
    reflection: np.ndarray | None = None
    moire_bank: PatternBank | None = None
    flare_bank: PatternBank | None = None
    rain_bank: PatternBank | None = None


def apply_degradation(img: np.ndarray, params, seed: SeedTree,
                      resources: Resources | None = None) -> np.ndarray:
    """Replay one task's degradation from its parameter container.

    This is the single entry point batch synthesis and manifest replay
    share, so params + seed here *define* what a PairRecord means.
    """
    res = resources or Resources()
    if isinstance(params, BlurTask):
        if params.mode == "motion":
            return apply_motion_blur(img, params.length, params.angle)
        return apply_gaussian_blur(img, params.sigma)

    if isinstance(params, CompressionTask):
        out = apply_resize_chain(img, params.resize_chain) if params.resize_chain else img.copy()
        if params.quality >= 100:
            # quality 100 in a manifest means "no recompression pass"
            return out
        return apply_jpeg(out, params.quality)

    if isinstance(params, MoireTask):
        if res.moire_bank is None or len(res.moire_bank) == 0:
            raise ParameterError("moiré degradation requires a pattern bank")
        h, w = img.shape[:2]
        pats = [res.moire_bank.entry_resized(i, h, w) for i in params.pattern_ids]
        return apply_moire(img, pats, list(params.weights))

    if isinstance(params, LowLightTask):
        return apply_lowlight(img, params.scale, params.gamma, params.read_noise,
                              seed=seed.child(0))

    if isinstance(params, NoiseTask):
        spec = NoiseSpec(mode=params.mode, sigma=params.sigma,
                         grain_size=params.grain_size, region_sigmas=params.region_sigmas)
        return apply_noise(img, spec, seed.child(0), mask=res.mask)

    if isinstance(params, FlareTask):
        if res.flare_bank is None or len(res.flare_bank) == 0:
            raise ParameterError("flare degradation requires a sprite bank")
        sprite = res.flare_bank.entries[params.sprite_id % len(res.flare_bank)]
        return apply_flare(img, sprite, params.position, params.intensity,
                           hflip=params.hflip, vflip=params.vflip)

    if isinstance(params, ReflectionTask):
        if params.beta > 0 and res.reflection is None:
            raise ParameterError("reflection degradation requires a reflection-layer image")
        refl = res.reflection if res.reflection is not None else img
        return apply_reflection(img, refl, params.alpha, params.beta,
                                params.blur_sigma, params.ghost_offset)

    if isinstance(params, HazeTask):
        if res.depth is None:
            raise ParameterError("haze degradation requires a depth map")
        texture = None
        if params.texture_weight > 0:
            texture = gen_haze_texture(max(img.shape[0], img.shape[1]),
                                       params.texture_octaves, seed.child(0))
            texture = texture[:img.shape[0], :img.shape[1]]
        return apply_haze(img, res.depth, params.beta, params.airlight,
                          texture=texture, texture_weight=params.texture_weight)

    if isinstance(params, RainTask):
        rp = RainParams(
            streaks=RainStreakParams(density=params.density, length=max(params.length, 1.0),
                                     angle=params.angle, width=params.width,
                                     wind_jitter=params.wind_jitter),
            splash_prob=params.splash_prob,
            perspective_gain=params.perspective_gain,
            bank_pattern_id=params.bank_pattern_id,
        )
        return apply_rain(img, rp, seed.child(0), bank=res.rain_bank)

    raise ParameterError(f"unknown parameter container {type(params)!r}")
