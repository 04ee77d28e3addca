"""Two-stage training curriculum math: task sampling, synthetic/real
mixing, and learning-rate schedules. No optimizer or model lives here;
these are the deterministic, testable pieces of the training recipe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ALL_TASKS, SeedTree, TaskKind
from .errors import ParameterError


@dataclass(frozen=True)
class StageConfig:
    """One curriculum stage. mix_synth : mix_real is the data ratio;
    frozen_fraction is bookkeeping only (there is no model to freeze here)."""

    name: str
    steps: int
    warmup_steps: int
    base_lr: float
    lr_mode: str  # constant | cosine_to_zero
    batch: int
    mix_synth: float
    mix_real: float
    frozen_fraction: float = 0.0
    progressive_ramp: bool = False  # optional within-stage drift of the mix

    def __post_init__(self):
        if self.lr_mode not in ("constant", "cosine_to_zero"):
            raise ParameterError(f"unknown lr mode {self.lr_mode!r}")
        if self.warmup_steps > self.steps:
            raise ParameterError("warmup cannot exceed total steps")
        if self.mix_synth < 0 or self.mix_real < 0 or self.mix_synth + self.mix_real == 0:
            raise ParameterError("mix weights must be non-negative and not both zero")
        if not 0.0 <= self.frozen_fraction <= 1.0:
            raise ParameterError("frozen fraction must be in [0, 1]")

    @property
    def synth_share(self) -> float:
        return self.mix_synth / (self.mix_synth + self.mix_real)


def default_stages() -> tuple[StageConfig, StageConfig]:
    """The shipped two-stage recipe: a synthetic-only transfer stage at a
    constant learning rate, then a mixed fine-tuning stage whose cosine
    schedule decays to exactly zero."""
    stage1 = StageConfig(name="transfer", steps=500, warmup_steps=100,
                         base_lr=1e-5, lr_mode="constant", batch=16,
                         mix_synth=1.0, mix_real=0.0, frozen_fraction=0.0)
    stage2 = StageConfig(name="sft", steps=1500, warmup_steps=100,
                         base_lr=1e-5, lr_mode="cosine_to_zero", batch=32,
                         mix_synth=2.0, mix_real=8.0, frozen_fraction=0.25)
    return stage1, stage2


def lr_at(stage: StageConfig, step: int) -> float:
    """Learning rate at an integer step in [0, steps].

    Linear warmup from 0 reaches base_lr exactly at warmup_steps, so the
    schedule is continuous there; cosine then lands on exactly 0 at the
    final step.
    """
    if not 0 <= step <= stage.steps:
        raise ParameterError(f"step {step} outside [0, {stage.steps}]")
    if stage.warmup_steps > 0 and step < stage.warmup_steps:
        return stage.base_lr * step / stage.warmup_steps
    if stage.lr_mode == "constant":
        return stage.base_lr
    span = stage.steps - stage.warmup_steps
    if span == 0:
        return 0.0
    phase = np.pi * (step - stage.warmup_steps) / span
    return stage.base_lr * 0.5 * (1.0 + float(np.cos(phase)))


def lr_schedule(stage: StageConfig) -> list[tuple[int, float]]:
    return [(step, lr_at(stage, step)) for step in range(stage.steps + 1)]


def task_sample(seed: SeedTree | int, n: int) -> list[TaskKind]:
    """n i.i.d. draws uniform over the nine tasks (the average sampling
    ratio used in stage one)."""
    if n < 1:
        raise ParameterError("need at least one draw")
    rng = seed.rng() if isinstance(seed, SeedTree) else SeedTree(int(seed)).rng()
    idx = rng.integers(0, len(ALL_TASKS), size=n)
    return [ALL_TASKS[i] for i in idx]


def mix_sample(stage: StageConfig, seed: SeedTree | int, n: int) -> list[str]:
    """n i.i.d. origin draws with P(synthetic) = stage.synth_share.

    With progressive_ramp the synthetic share drifts linearly from 1.0 at
    the first draw down to the configured share at the last, a reading of
    "progressively mixed" kept behind this flag because the fixed ratio is
    the documented recipe.
    """
    if n < 1:
        raise ParameterError("need at least one draw")
    rng = seed.rng() if isinstance(seed, SeedTree) else SeedTree(int(seed)).rng()
    u = rng.random(n)
    if stage.progressive_ramp and n > 1:
        t = np.arange(n) / (n - 1)
        share = 1.0 + t * (stage.synth_share - 1.0)
    else:
        share = np.full(n, stage.synth_share)
    return ["synthetic" if ui < si else "real" for ui, si in zip(u, share)]


def draw_log(stage: StageConfig, seed: SeedTree | int, n: int) -> list[dict]:
    """Combined per-draw log of (task, origin), JSON-ready."""
    root = seed if isinstance(seed, SeedTree) else SeedTree(int(seed))
    tasks = task_sample(root.child(0), n)
    origins = mix_sample(stage, root.child(1), n)
    return [{"draw": i, "task": t.value, "origin": o}
            for i, (t, o) in enumerate(zip(tasks, origins))]
