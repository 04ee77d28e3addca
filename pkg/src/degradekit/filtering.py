"""Pair-quality gates: semantic prompt filtering, degradation-delta
checks, skeleton-shift alignment, and watermark verdict ingestion.

Embedding and detection models are never bundled. Each gate that would
need one accepts a backend object instead; file-ingestion backends read
precomputed scores, and a null backend passes everything for hermetic
runs. The pipeline is a short-circuit chain that partitions a manifest
into kept and rejected records with recorded reasons.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import Manifest, PairRecord, TaskKind, luminance
from .errors import BackendError, ConfigError, FormatError, ParameterError, ShapeError

# Semantic prompts for the six degradation types collected from the web;
# the other three tasks have no semantic gate defined.
CLIP_PROMPTS = {
    TaskKind.FLARE: "a photo with lens flare, bright streaks of light",
    TaskKind.HAZE: "a hazy photo, foggy atmosphere, low contrast",
    TaskKind.RAIN: "a rainy photo with rain streaks or raindrops",
    TaskKind.LOW_LIGHT: "a dark photo, underexposed, low illumination",
    TaskKind.BLUR: "a blurry photo with motion blur or out-of-focus regions",
    TaskKind.REFLECTION: "a photo with glass or mirror-like reflection artifacts",
}


def prompt_config_default() -> dict:
    """The shipped per-task semantic prompt table (six entries)."""
    return dict(CLIP_PROMPTS)


class FilterReason(str, Enum):
    OK = "ok"
    LOW_SEMANTIC_SCORE = "low_semantic_score"
    INSUFFICIENT_DELTA = "insufficient_delta"
    MISALIGNED = "misaligned"
    WATERMARKED = "watermarked"
    EXTERNAL_REJECT = "external_reject"


@dataclass(frozen=True)
class FilterVerdict:
    passed: bool
    reason: FilterReason
    measurements: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.passed and self.reason is not FilterReason.OK:
            raise ParameterError("a passing verdict must carry reason ok")
        if not self.passed and self.reason is FilterReason.OK:
            raise ParameterError("a rejection needs a non-ok reason")

    @staticmethod
    def ok(**measurements) -> "FilterVerdict":
        return FilterVerdict(True, FilterReason.OK, dict(measurements))

    @staticmethod
    def reject(reason: FilterReason, **measurements) -> "FilterVerdict":
        return FilterVerdict(False, reason, dict(measurements))


# ---------------------------------------------------------------------------
# semantic filter
# ---------------------------------------------------------------------------

class CosineEmbedderBackend:
    """Adapts a pair of embedding callables into a similarity backend.

    embed_image(image) and embed_text(text) must return vectors; cosine
    similarity is computed here, with normalization applied defensively.
    """

    name = "embedder"

    def __init__(self, embed_image, embed_text):
        self._embed_image = embed_image
        self._embed_text = embed_text

    def similarity(self, image, prompt: str) -> float:
        try:
            vi = np.asarray(self._embed_image(image), dtype=np.float64)
            vt = np.asarray(self._embed_text(prompt), dtype=np.float64)
        except Exception as exc:
            raise BackendError(f"embedding backend failed: {exc}") from exc
        ni, nt = np.linalg.norm(vi), np.linalg.norm(vt)
        if ni == 0 or nt == 0:
            raise BackendError("embedding backend returned a zero vector")
        return float(np.dot(vi, vt) / (ni * nt))


class FileSimilarityBackend:
    """Precomputed semantic scores from JSON Lines of {id, score};
    the image argument passed to similarity() is the id."""

    name = "file"

    def __init__(self, path):
        self._table: dict = {}
        with open(path, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    self._table[str(obj["id"])] = float(obj["score"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise FormatError(f"{path}:{ln}: bad score line: {exc}") from exc

    def similarity(self, image, prompt: str) -> float:
        key = str(image)
        if key not in self._table:
            raise BackendError(f"no semantic score for id {key!r}")
        return self._table[key]


class NullSemanticBackend:
    """Pass-all backend for hermetic pipelines; similarity is always 1."""

    name = "null"

    def similarity(self, image, prompt: str) -> float:
        return 1.0


def semantic_filter(image, task: TaskKind, backend, threshold: float,
                    prompts: dict | None = None) -> FilterVerdict:
    """Pass when cosine(image, task prompt) clears the threshold."""
    task = TaskKind(task)
    table = prompts if prompts is not None else CLIP_PROMPTS
    if task not in table:
        raise ConfigError(f"no semantic prompt configured for task {task.value}")
    if not -1.0 <= threshold <= 1.0:
        raise ParameterError("semantic threshold must be in [-1, 1]")
    sim = float(backend.similarity(image, table[task]))
    if sim >= threshold:
        return FilterVerdict.ok(similarity=sim)
    return FilterVerdict.reject(FilterReason.LOW_SEMANTIC_SCORE, similarity=sim)


# ---------------------------------------------------------------------------
# degradation score delta
# ---------------------------------------------------------------------------

def degradation_delta_filter(clean_score: float, degraded_score: float,
                             min_delta: float = 1.0) -> FilterVerdict:
    """Require the clean image to score at least min_delta above the
    degraded one on the 1..5 scale; inverted pairs are inconsistent and
    rejected regardless of the threshold."""
    for name, v in (("clean_score", clean_score), ("degraded_score", degraded_score)):
        if not 1.0 <= float(v) <= 5.0:
            raise ParameterError(f"{name} must be in [1, 5], got {v}")
    if min_delta < 0:
        raise ParameterError("min_delta must be >= 0")
    delta = float(clean_score) - float(degraded_score)
    if delta >= min_delta and clean_score >= degraded_score:
        return FilterVerdict.ok(delta=delta)
    return FilterVerdict.reject(FilterReason.INSUFFICIENT_DELTA, delta=delta)


# ---------------------------------------------------------------------------
# skeleton-shift alignment
# ---------------------------------------------------------------------------

def edge_skeleton(img: np.ndarray, quantile: float = 0.90) -> np.ndarray:
    """Binary edge skeleton: gradient magnitude thresholded at the given
    quantile, then one 3x3 thinning pass."""
    lum = luminance(img)
    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    thr = np.quantile(mag, quantile)
    return _thin_once(mag > thr)


def _thin_once(mask: np.ndarray) -> np.ndarray:
    """One pair of Zhang-Suen sub-iterations over a boolean mask."""
    out = mask.copy()
    for first in (True, False):
        p = np.pad(out, 1, mode="constant").astype(np.int8)
        # clockwise neighbours P2..P9 starting at north
        p2 = p[:-2, 1:-1]
        p3 = p[:-2, 2:]
        p4 = p[1:-1, 2:]
        p5 = p[2:, 2:]
        p6 = p[2:, 1:-1]
        p7 = p[2:, :-2]
        p8 = p[1:-1, :-2]
        p9 = p[:-2, :-2]
        ring = [p2, p3, p4, p5, p6, p7, p8, p9]
        b = sum(ring)
        a = sum(((ring[i] == 0) & (ring[(i + 1) % 8] == 1)).astype(np.int8)
                for i in range(8))
        if first:
            cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
        else:
            cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
        remove = out & (b >= 2) & (b <= 6) & (a == 1) & cond
        out = out & ~remove
    return out


def estimate_skeleton_shift(a: np.ndarray, b: np.ndarray,
                            search_radius: int) -> tuple[int, int, float]:
    """Integer (dx, dy) maximizing skeleton cross-correlation in the
    +-search_radius window; dx positive means b's content sits to the
    right of a's. Returns (dx, dy, normalized peak)."""
    sa = edge_skeleton(a).astype(np.float64)
    sb = edge_skeleton(b).astype(np.float64)
    h, w = sa.shape
    corr = np.fft.irfft2(np.fft.rfft2(sb) * np.conj(np.fft.rfft2(sa)), s=(h, w))
    corr = np.fft.fftshift(corr)
    cy, cx = h // 2, w // 2
    r = int(search_radius)
    win = corr[cy - r:cy + r + 1, cx - r:cx + r + 1]
    iy, ix = np.unravel_index(np.argmax(win), win.shape)
    dy, dx = iy - r, ix - r
    denom = np.sqrt(sa.sum() * sb.sum()) + 1e-12
    return int(dx), int(dy), float(win[iy, ix] / denom)


def skeleton_shift_filter(a: np.ndarray, b: np.ndarray, search_radius: int = 15,
                          max_shift: int = 1) -> FilterVerdict:
    """Reject pairs whose edge skeletons are displaced beyond max_shift.

    Near-empty skeletons (< 0.1% of pixels) make the estimate meaningless;
    those pairs come back as external_reject so a human or another gate
    can decide.
    """
    if a.shape[:2] != b.shape[:2]:
        raise ShapeError(f"pair shapes differ: {a.shape[:2]} vs {b.shape[:2]}")
    if search_radius < max_shift:
        raise ParameterError("search_radius must be >= max_shift")
    sa = edge_skeleton(a)
    sb = edge_skeleton(b)
    min_density = 0.001 * sa.size
    if sa.sum() < min_density or sb.sum() < min_density:
        return FilterVerdict.reject(FilterReason.EXTERNAL_REJECT,
                                    skeleton_density=float(min(sa.sum(), sb.sum()) / sa.size))
    dx, dy, peak = estimate_skeleton_shift(a, b, search_radius)
    meas = {"dx": float(dx), "dy": float(dy), "peak": peak}
    if max(abs(dx), abs(dy)) <= max_shift:
        return FilterVerdict(True, FilterReason.OK, meas)
    return FilterVerdict(False, FilterReason.MISALIGNED, meas)


# ---------------------------------------------------------------------------
# watermark verdicts
# ---------------------------------------------------------------------------

class WatermarkVerdicts:
    """Externally produced watermark decisions: JSON Lines {id, watermarked}."""

    def __init__(self, path):
        self._table: dict = {}
        with open(path, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    self._table[str(obj["id"])] = bool(obj["watermarked"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise FormatError(f"{path}:{ln}: bad verdict line: {exc}") from exc

    def verdict(self, image_id: str) -> FilterVerdict:
        key = str(image_id)
        if key not in self._table:
            # absence of a decision is treated conservatively
            return FilterVerdict.reject(FilterReason.EXTERNAL_REJECT)
        if self._table[key]:
            return FilterVerdict.reject(FilterReason.WATERMARKED)
        return FilterVerdict.ok()


def watermark_filter(image_id: str, verdict_file) -> FilterVerdict:
    return WatermarkVerdicts(verdict_file).verdict(image_id)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class FilterOutcome:
    kept: Manifest
    rejected: Manifest
    results: list  # [(PairRecord, FilterVerdict)] in input order

    @property
    def reason_counts(self) -> Counter:
        return Counter(v.reason.value for _, v in self.results)

    def report_lines(self) -> list[str]:
        """JSON Lines of {id, pass, reason, measurements} per record."""
        lines = []
        for rec, verdict in self.results:
            lines.append(json.dumps({
                "id": rec.degraded_path,
                "pass": verdict.passed,
                "reason": verdict.reason.value,
                "measurements": verdict.measurements,
            }, separators=(",", ":")))
        return lines


def run_filter_pipeline(manifest: Manifest, gates: list) -> FilterOutcome:
    """Run ordered (name, record -> FilterVerdict) gates over a manifest.

    Each record short-circuits at its first failing gate; the kept and
    rejected manifests partition the input exactly.
    """
    if not gates:
        raise ParameterError("filter pipeline needs at least one gate")
    kept, rejected, results = [], [], []
    for rec in manifest:
        verdict = FilterVerdict.ok()
        for _name, gate in gates:
            verdict = gate(rec)
            if not verdict.passed:
                break
        results.append((rec, verdict))
        (kept if verdict.passed else rejected).append(rec)
    return FilterOutcome(
        kept=Manifest(records=kept),
        rejected=Manifest(records=rejected),
        results=results,
    )
