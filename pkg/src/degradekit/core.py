"""Shared substrate: pixel conventions, file I/O, seeding, manifests.

Images are plain numpy arrays of shape (H, W, C) with C in {1, 3, 4},
dtype float64, values in [0, 1], sRGB-encoded unless an operation says
otherwise. Conversions to integer samples happen only at file boundaries;
everything in between stays floating so chained degradations do not pick
up quantization drift.

Randomness is addressed, never sequential: a SeedTree names a stream by
(root seed, path of child indices), so any record in a batch can rebuild
its own generator regardless of worker count or execution order.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ParameterError, ShapeError

TOOL_VERSION = "degradekit 0.1.0"

# Rec.709 luma weights, used wherever a single-channel view is needed.
_LUMA = np.array([0.2126, 0.7152, 0.0722])


# ---------------------------------------------------------------------------
# pixel helpers
# ---------------------------------------------------------------------------

def clamp01(img: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and replace non-finite samples with 0."""
    out = np.asarray(img, dtype=np.float64)
    out = np.nan_to_num(out, nan=0.0, posinf=1.0, neginf=0.0)
    return np.clip(out, 0.0, 1.0)


def ensure_image(img: np.ndarray) -> np.ndarray:
    """Validate the (H, W, C) float convention, returning a float64 view."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3, 4):
        raise ShapeError(f"expected (H, W, C) with C in 1/3/4, got {arr.shape}")
    arr = arr.astype(np.float64, copy=False)
    if arr.size and (arr.min() < -1e-9 or arr.max() > 1 + 1e-9 or not np.isfinite(arr).all()):
        raise ParameterError("image samples must be finite and within [0, 1]")
    return arr


def luminance(img: np.ndarray) -> np.ndarray:
    """(H, W) luma; single-channel images pass through."""
    img = ensure_image(img)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img[:, :, :3] @ _LUMA


def srgb_to_linear(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    low = img <= 0.04045
    return np.where(low, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    low = img <= 0.0031308
    return np.where(low, img * 12.92, 1.055 * np.power(np.maximum(img, 0.0), 1 / 2.4) - 0.055)


# ---------------------------------------------------------------------------
# image file I/O
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Decode a PNG or JPEG file into the float convention.

    8-bit samples map to v/255, 16-bit to v/65535; channel count is
    preserved (grayscale stays single-channel). Unreadable or truncated
    files surface as OSError, non-PNG/JPEG content as FormatError.
    """
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise FormatError(f"{path}: unsupported format {im.format!r}, need PNG or JPEG")
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            elif mode == "LA":
                im = im.convert("RGBA")
                mode = im.mode
            arr = np.asarray(im)
    except UnidentifiedImageError as exc:
        raise OSError(f"{path}: cannot decode image: {exc}") from exc

    if mode in ("I;16", "I;16B", "I;16L", "I"):
        data = arr.astype(np.float64) / 65535.0
    elif arr.dtype == np.uint8:
        data = arr.astype(np.float64) / 255.0
    else:
        raise FormatError(f"{path}: unsupported sample type {arr.dtype} in mode {mode}")
    if data.ndim == 2:
        data = data[:, :, None]
    if data.shape[2] not in (1, 3, 4):
        raise FormatError(f"{path}: unsupported channel count {data.shape[2]}")
    return np.clip(data, 0.0, 1.0)


def save_image(img: np.ndarray, path, format: str = "png", quality: int = 95,
               png_compress_level: int = 4) -> None:
    """Quantize to 8-bit and encode as PNG (lossless) or baseline JPEG.

    JPEG follows the compression operator's convention: 4:2:0 chroma
    subsampling below quality 90, 4:4:4 at or above.
    """
    img = ensure_image(img)
    fmt = format.lower()
    eight = np.round(img * 255.0).astype(np.uint8)
    if eight.shape[2] == 1:
        pil = Image.fromarray(eight[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(eight, mode="RGB" if eight.shape[2] == 3 else "RGBA")
    if fmt == "png":
        pil.save(path, format="PNG", compress_level=int(png_compress_level))
    elif fmt in ("jpeg", "jpg"):
        if not 1 <= int(quality) <= 100:
            raise ParameterError(f"jpeg quality must be 1..100, got {quality}")
        if pil.mode == "RGBA":
            raise ParameterError("JPEG cannot carry an alpha channel")
        pil.save(path, format="JPEG", quality=int(quality),
                 subsampling=0 if quality >= 90 else 2)
    else:
        raise ParameterError(f"unknown format {format!r}, need png or jpeg")


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeedTree:
    """Address of a reproducible random stream: a root seed plus a path.

    Identical (root, path) always yields the identical generator; distinct
    paths map to statistically independent streams (numpy SeedSequence
    spawn keys). Children never collide with their parents or siblings,
    which makes per-record seeding safe under any batch schedule.
    """

    root: int
    path: tuple[int, ...] = ()

    def child(self, index: int) -> "SeedTree":
        if index < 0:
            raise ParameterError("seed child index must be non-negative")
        return SeedTree(self.root, self.path + (int(index),))

    def rng(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.root, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))

    def to_json(self) -> list[int]:
        return list(self.path)

    @staticmethod
    def from_json(root: int, path: Sequence[int]) -> "SeedTree":
        return SeedTree(int(root), tuple(int(p) for p in path))


def seed_child(tree: SeedTree, index: int) -> SeedTree:
    return tree.child(index)


# ---------------------------------------------------------------------------
# tasks, severities, records
# ---------------------------------------------------------------------------

class TaskKind(str, Enum):
    """The nine degradation/restoration task families."""

    BLUR = "blur"
    COMPRESSION = "compression"
    MOIRE = "moire"
    LOW_LIGHT = "low_light"
    NOISE = "noise"
    FLARE = "flare"
    REFLECTION = "reflection"
    HAZE = "haze"
    RAIN = "rain"

    @staticmethod
    def parse(name: str) -> "TaskKind":
        try:
            return TaskKind(name.strip().lower().replace("-", "_"))
        except ValueError:
            raise ParameterError(f"unknown task {name!r}") from None


ALL_TASKS: tuple[TaskKind, ...] = tuple(TaskKind)


def check_severity(value: float) -> float:
    v = float(value)
    if not (0.0 <= v <= 1.0) or not np.isfinite(v):
        raise ParameterError(f"severity must be in [0, 1], got {value}")
    return v


_ORIGINS = ("synthetic", "real")


@dataclass
class PairRecord:
    """Provenance of one clean/degraded pair; params + seed replay the pixels."""

    clean_path: str
    degraded_path: str
    task: TaskKind
    severity: float
    seed_path: tuple[int, ...]
    params: dict
    origin: str = "synthetic"

    def __post_init__(self):
        self.task = TaskKind(self.task)
        self.severity = check_severity(self.severity)
        self.seed_path = tuple(int(p) for p in self.seed_path)
        if self.origin not in _ORIGINS:
            raise ParameterError(f"origin must be one of {_ORIGINS}, got {self.origin!r}")

    def to_json_line(self) -> str:
        # Key set and names are the on-disk contract; keep them stable.
        payload = {
            "clean_path": self.clean_path,
            "degraded_path": self.degraded_path,
            "task": self.task.value,
            "severity": self.severity,
            "seed_path": list(self.seed_path),
            "params": self.params,
            "origin": self.origin,
        }
        return json.dumps(payload, sort_keys=False, separators=(",", ":"))

    @staticmethod
    def from_json_line(line: str) -> "PairRecord":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad manifest line: {exc}") from exc
        missing = {"clean_path", "degraded_path", "task", "severity",
                   "seed_path", "params", "origin"} - set(obj)
        if missing:
            raise FormatError(f"manifest line missing keys: {sorted(missing)}")
        return PairRecord(
            clean_path=obj["clean_path"],
            degraded_path=obj["degraded_path"],
            task=TaskKind.parse(obj["task"]),
            severity=obj["severity"],
            seed_path=tuple(obj["seed_path"]),
            params=obj["params"],
            origin=obj["origin"],
        )


@dataclass
class Manifest:
    """An ordered collection of PairRecords with unique degraded paths."""

    records: list[PairRecord] = field(default_factory=list)
    created: str = ""
    tool_version: str = TOOL_VERSION

    def __post_init__(self):
        if not self.created:
            self.created = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self._check_unique()

    def _check_unique(self):
        seen = set()
        for r in self.records:
            if r.degraded_path in seen:
                raise FormatError(f"duplicate degraded_path in manifest: {r.degraded_path}")
            seen.add(r.degraded_path)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PairRecord]:
        return iter(self.records)

    def sorted(self) -> "Manifest":
        """Canonical order: (clean_path, task, degraded_path)."""
        recs = sorted(self.records, key=lambda r: (r.clean_path, r.task.value, r.degraded_path))
        return Manifest(records=recs, created=self.created, tool_version=self.tool_version)

    def save(self, path) -> None:
        """Write JSON Lines atomically (write-then-rename)."""
        path = os.fspath(path)
        d = os.path.dirname(path) or "."
        fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=d)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                for rec in self.records:
                    fh.write(rec.to_json_line())
                    fh.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @staticmethod
    def load(path) -> "Manifest":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(PairRecord.from_json_line(line))
        return Manifest(records=records)


# ---------------------------------------------------------------------------
# dataset statistics
# ---------------------------------------------------------------------------

@dataclass
class DatasetStats:
    """Per-task, per-origin pair counts with marginal totals."""

    counts: dict  # {TaskKind: {"synthetic": n, "real": n}}

    def task_total(self, task: TaskKind) -> int:
        c = self.counts.get(task, {})
        return c.get("synthetic", 0) + c.get("real", 0)

    @property
    def synthetic_total(self) -> int:
        return sum(c.get("synthetic", 0) for c in self.counts.values())

    @property
    def real_total(self) -> int:
        return sum(c.get("real", 0) for c in self.counts.values())

    @property
    def grand_total(self) -> int:
        return self.synthetic_total + self.real_total


def dataset_stats(records: Iterable[PairRecord] | Manifest) -> DatasetStats:
    """Aggregate counts; pure reduction, so record order never matters."""
    ctr: Counter = Counter()
    for rec in records:
        ctr[(rec.task, rec.origin)] += 1
    counts: dict = {}
    for (task, origin), n in ctr.items():
        counts.setdefault(task, {})[origin] = n
    return DatasetStats(counts=counts)


def severity_histogram(records: Iterable[PairRecord], bins: int = 10) -> dict:
    """Per-task histogram of severities over [0, 1]."""
    per_task: dict = {}
    for rec in records:
        per_task.setdefault(rec.task, []).append(rec.severity)
    out = {}
    edges = np.linspace(0.0, 1.0, bins + 1)
    for task, values in per_task.items():
        hist, _ = np.histogram(np.asarray(values), bins=edges)
        out[task] = hist.tolist()
    return out
