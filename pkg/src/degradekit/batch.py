"""Manifest-driven batch synthesis with deterministic parallelism.

Every record's pixels derive from (config, clean image, task, record
seed) alone, so worker count and scheduling order can never change the
output; a record's seed is addressed by its (image index, task index)
rather than by draw order. Replaying a manifest re-runs records from
their stored parameters and reproduces files bit-exactly.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import (
    Manifest,
    PairRecord,
    SeedTree,
    TaskKind,
    load_image,
    save_image,
)
from .degradations import apply_web_chain, WebChainConfig
from .errors import ConfigError, ParameterError
from .patterns import (
    PatternBank,
    gen_flare_sprite,
    gen_moire_pattern,
    load_depth,
    load_mask,
    load_pattern_bank,
    random_moire_params,
)
from .severity import (
    DEFAULT_SEVERITY_MAP,
    Resources,
    apply_degradation,
    params_from_json,
    params_to_json,
    severity_to_params,
)

log = logging.getLogger(__name__)

_IMAGE_EXTS = (".png", ".jpg", ".jpeg")

# seed tree layout: child 0 = shared banks, child 1 = records
_BANK_BRANCH = 0
_RECORD_BRANCH = 1


@dataclass(frozen=True)
class SynthConfig:
    """Everything a worker needs to synthesize one record independently."""

    input_dir: str
    out_dir: str
    tasks: tuple = tuple(t.value for t in TaskKind)
    seed: int = 0
    workers: int = 1
    severity_lo: float = 0.25
    severity_hi: float = 1.0
    depth_dir: str | None = None
    mask_dir: str | None = None
    moire_bank_dir: str | None = None
    flare_bank_dir: str | None = None
    rain_bank_dir: str | None = None
    image_format: str = "png"
    jpeg_quality: int = 95
    png_compress_level: int = 1
    moire_bank_size: int = 32
    flare_bank_size: int = 12
    sprite_scale: float = 0.75  # flare sprite size relative to min(H, W)

    def task_kinds(self) -> tuple[TaskKind, ...]:
        return tuple(TaskKind.parse(t) for t in self.tasks)


def list_clean_images(input_dir: str) -> list[str]:
    if not os.path.isdir(input_dir):
        raise ConfigError(f"input directory not found: {input_dir}")
    names = [n for n in sorted(os.listdir(input_dir))
             if n.lower().endswith(_IMAGE_EXTS)]
    if not names:
        raise ConfigError(f"no PNG/JPEG images under {input_dir}")
    return [os.path.join(input_dir, n) for n in names]


@dataclass(frozen=True)
class RecordPlan:
    image_index: int
    task_index: int
    clean_path: str


def plan_records(config: SynthConfig) -> list[RecordPlan]:
    paths = list_clean_images(config.input_dir)
    tasks = config.task_kinds()
    return [RecordPlan(i, j, p)
            for i, p in enumerate(paths)
            for j in range(len(tasks))]


# ---------------------------------------------------------------------------
# per-process shared state (derived deterministically from the config)
# ---------------------------------------------------------------------------

_BANK_CACHE: dict = {}


def _default_moire_bank(seed: int, count: int, size: int = 512) -> PatternBank:
    key = ("moire", seed, count, size)
    if key not in _BANK_CACHE:
        rng = SeedTree(seed, (_BANK_BRANCH, 0)).rng()
        entries = [gen_moire_pattern(random_moire_params(rng), size) for _ in range(count)]
        _BANK_CACHE[key] = PatternBank(entries=entries, tags=["moire"] * count, kind="moire")
    return _BANK_CACHE[key]


def _default_flare_bank(seed: int, count: int, size: int) -> PatternBank:
    key = ("flare", seed, count, size)
    if key not in _BANK_CACHE:
        kinds = ("radial_glow", "streak", "ring")
        entries = [gen_flare_sprite(kinds[k % 3], intensity=1.0,
                                    color_temp=(k * 0.37) % 1.0,
                                    seed=SeedTree(seed, (_BANK_BRANCH, 1, k)),
                                    size=size)
                   for k in range(count)]
        _BANK_CACHE[key] = PatternBank(entries=entries, tags=["flare"] * count, kind="flare")
    return _BANK_CACHE[key]


def _dir_bank(path: str, kind: str) -> PatternBank:
    key = ("dir", path, kind)
    if key not in _BANK_CACHE:
        _BANK_CACHE[key] = load_pattern_bank(path, kind)
    return _BANK_CACHE[key]


def _sidecar(dir_path: str | None, clean_path: str) -> str | None:
    if not dir_path:
        return None
    stem = os.path.splitext(os.path.basename(clean_path))[0]
    candidate = os.path.join(dir_path, stem + ".png")
    return candidate if os.path.isfile(candidate) else None


class RecordSkip(Exception):
    """A record cannot be synthesized (missing sidecar); logged, not fatal."""


def _build_resources(config: SynthConfig, task: TaskKind, img: np.ndarray,
                     plan: RecordPlan, record_seed: SeedTree,
                     clean_paths: list[str]) -> tuple[Resources, int | None]:
    h, w = img.shape[:2]
    res = Resources()
    n_regions = None
    if task is TaskKind.HAZE:
        depth_path = _sidecar(config.depth_dir, plan.clean_path)
        if depth_path is None:
            raise RecordSkip(f"no depth sidecar for {plan.clean_path}")
        res.depth = load_depth(depth_path, match_size=(h, w))
    elif task is TaskKind.NOISE:
        mask_path = _sidecar(config.mask_dir, plan.clean_path)
        if mask_path is not None:
            res.mask = load_mask(mask_path, match_size=(h, w))
            n_regions = int(res.mask.max()) + 1
    elif task is TaskKind.MOIRE:
        if config.moire_bank_dir:
            res.moire_bank = _dir_bank(config.moire_bank_dir, "moire")
        else:
            res.moire_bank = _default_moire_bank(config.seed, config.moire_bank_size)
    elif task is TaskKind.FLARE:
        if config.flare_bank_dir:
            res.flare_bank = _dir_bank(config.flare_bank_dir, "flare")
        else:
            sprite_size = max(64, int(round(config.sprite_scale * min(h, w))))
            res.flare_bank = _default_flare_bank(config.seed, config.flare_bank_size, sprite_size)
    elif task is TaskKind.REFLECTION:
        if len(clean_paths) > 1:
            rng = record_seed.child(3).rng()
            offset = int(rng.integers(1, len(clean_paths)))
            partner = clean_paths[(plan.image_index + offset) % len(clean_paths)]
        else:
            partner = plan.clean_path
        other = load_image(partner)
        res.reflection = other[:, :, :3] if other.shape[2] == 4 else other
    elif task is TaskKind.RAIN:
        if config.rain_bank_dir:
            res.rain_bank = _dir_bank(config.rain_bank_dir, "rain")
    return res, n_regions


def _degraded_name(clean_path: str, task: TaskKind, fmt: str) -> str:
    stem = os.path.splitext(os.path.basename(clean_path))[0]
    ext = "png" if fmt == "png" else "jpg"
    return f"{stem}__{task.value}.{ext}"


def synthesize_record(config: SynthConfig, plan: RecordPlan,
                      clean_paths: list[str]) -> PairRecord:
    """Synthesize one record end to end. Raises RecordSkip when a required
    sidecar is missing."""
    tasks = config.task_kinds()
    task = tasks[plan.task_index]
    record_seed = SeedTree(config.seed, (_RECORD_BRANCH, plan.image_index, plan.task_index))

    img = load_image(plan.clean_path)
    if img.shape[2] == 4:
        img = img[:, :, :3]

    sev_rng = record_seed.child(0).rng()
    severity = float(sev_rng.uniform(config.severity_lo, config.severity_hi))

    res, n_regions = _build_resources(config, task, img, plan, record_seed, clean_paths)
    params = severity_to_params(
        task, severity, DEFAULT_SEVERITY_MAP, seed=record_seed.child(1),
        n_mask_regions=n_regions,
        rain_bank=(task is TaskKind.RAIN and res.rain_bank is not None),
    )
    degraded = apply_degradation(img, params, record_seed.child(2), res)

    out_dir = os.path.join(config.out_dir, "degraded")
    os.makedirs(out_dir, exist_ok=True)
    degraded_path = os.path.join(out_dir, _degraded_name(plan.clean_path, task, config.image_format))
    save_image(degraded, degraded_path, format=config.image_format,
               quality=config.jpeg_quality, png_compress_level=config.png_compress_level)

    return PairRecord(
        clean_path=plan.clean_path,
        degraded_path=degraded_path,
        task=task,
        severity=severity,
        seed_path=record_seed.path,
        params=params_to_json(params),
        origin="synthetic",
    )


def _worker(args) -> tuple[int, PairRecord | None, str | None]:
    config, plan, clean_paths = args
    try:
        return plan.image_index, synthesize_record(config, plan, clean_paths), None
    except RecordSkip as exc:
        return plan.image_index, None, str(exc)


def run_synth(config: SynthConfig) -> tuple[Manifest, list[str]]:
    """Synthesize the full (images x tasks) grid; returns the canonical
    manifest and a list of skip reasons."""
    plans = plan_records(config)
    clean_paths = list_clean_images(config.input_dir)
    os.makedirs(config.out_dir, exist_ok=True)
    jobs = [(config, plan, clean_paths) for plan in plans]
    records, skips = [], []
    if config.workers <= 1:
        results = map(_worker, jobs)
        for _, rec, skip in results:
            if rec is not None:
                records.append(rec)
            elif skip:
                skips.append(skip)
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for _, rec, skip in pool.map(_worker, jobs, chunksize=4):
                if rec is not None:
                    records.append(rec)
                elif skip:
                    skips.append(skip)
    for s in skips:
        log.warning("skipped record: %s", s)
    manifest = Manifest(records=records).sorted()
    manifest.save(os.path.join(config.out_dir, "manifest.jsonl"))
    _write_meta(config, manifest)
    return manifest, skips


def _write_meta(config: SynthConfig, manifest: Manifest) -> None:
    meta = {
        "created": manifest.created,
        "tool_version": manifest.tool_version,
        "records": len(manifest),
        "config": asdict(config),
    }
    path = os.path.join(config.out_dir, "manifest.meta.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def replay_record(config: SynthConfig, record: PairRecord,
                  clean_paths: list[str] | None = None) -> np.ndarray:
    """Re-synthesize a record's pixels from its stored params and seed."""
    clean_paths = clean_paths or list_clean_images(config.input_dir)
    img = load_image(record.clean_path)
    if img.shape[2] == 4:
        img = img[:, :, :3]
    record_seed = SeedTree(config.seed, tuple(record.seed_path))
    # the plan indices are recoverable from the seed path
    if len(record.seed_path) != 3 or record.seed_path[0] != _RECORD_BRANCH:
        raise ParameterError(f"unrecognized seed path {record.seed_path}")
    plan = RecordPlan(record.seed_path[1], record.seed_path[2], record.clean_path)
    res, _ = _build_resources(config, record.task, img, plan, record_seed, clean_paths)
    params = params_from_json(record.params)
    return apply_degradation(img, params, record_seed.child(2), res)


# ---------------------------------------------------------------------------
# web-style augmentation over a directory (chain synthesis helper)
# ---------------------------------------------------------------------------

def run_web_chain_dir(input_dir: str, out_dir: str, seed: int,
                      config: WebChainConfig = WebChainConfig(),
                      order_policy: str = "fixed") -> list[dict]:
    """Apply a sampled web chain to every image in a directory."""
    paths = list_clean_images(input_dir)
    os.makedirs(out_dir, exist_ok=True)
    applied_all = []
    for i, p in enumerate(paths):
        img = load_image(p)
        if img.shape[2] == 4:
            img = img[:, :, :3]
        out, applied = apply_web_chain(img, SeedTree(seed, (i,)), config, order_policy)
        name = os.path.splitext(os.path.basename(p))[0] + "__web.png"
        save_image(out, os.path.join(out_dir, name))
        applied_all.append({"input": p, "stages": applied})
    return applied_all
