#!/usr/bin/env python3
"""Fit the heuristic scorer's piecewise-linear anchors on the shipped
calibration corpus and report them, along with the pooled severity
monotonicity each statistic achieves with those anchors.

Run after changing any statistic, the corpus generator, or the default
severity bands, then paste the printed CALIBRATION_ANCHORS into
degradekit/metrics.py.

Fitting rule: with u = direction-normalized statistics, pick the linear
map so the worst clean image lands at score 4.55 and the worst severity-1
image at 1.45 (a little slack inside the 4.5 / 1.5 contract):
S = (min_u(clean) - max_u(deg)) / 0.775, b_u = max_u(deg) - 0.1125 * S,
a_u = b_u + S.
"""

import numpy as np
from scipy import stats as sstats

from degradekit.core import SeedTree, TaskKind
from degradekit.metrics import (
    CALIBRATION_SEED,
    HEURISTIC_TASKS,
    _STATISTICS,
    calibration_images,
)
from degradekit.severity import (
    DEFAULT_SEVERITY_MAP,
    Resources,
    apply_degradation,
    severity_to_params,
)
from degradekit.batch import _default_moire_bank, _default_flare_bank


def degrade(img, depth, task, severity, seed):
    res = Resources(depth=depth)
    if task is TaskKind.MOIRE:
        res.moire_bank = _default_moire_bank(CALIBRATION_SEED, 16, 256)
    if task is TaskKind.FLARE:
        res.flare_bank = _default_flare_bank(CALIBRATION_SEED, 8, 192)
    params = severity_to_params(task, severity, DEFAULT_SEVERITY_MAP, seed=seed.child(0))
    return apply_degradation(img, params, seed.child(1), res)


def main():
    corpus = calibration_images()
    draws_per_image = 3
    print("task          clean(min..max)        sev1(min..max)         anchors (a, b)")
    anchors = {}
    for task in HEURISTIC_TASKS:
        stat = _STATISTICS[task]
        clean_stats, deg_stats = [], []
        for i, (img, depth) in enumerate(corpus):
            clean_stats.append(stat(img))
            for d in range(draws_per_image):
                seed = SeedTree(CALIBRATION_SEED, (task.value.__hash__() % 97, i, d))
                deg_stats.append(stat(degrade(img, depth, task, 1.0, seed)))
        clean_stats = np.asarray(clean_stats)
        deg_stats = np.asarray(deg_stats)
        direction = 1.0 if clean_stats.mean() > deg_stats.mean() else -1.0
        worst_clean = np.min(direction * clean_stats)
        worst_deg = np.max(direction * deg_stats)
        if worst_clean <= worst_deg:
            raise SystemExit(f"{task.value}: corpus does not separate clean from severity 1 "
                             f"({worst_clean:.4f} <= {worst_deg:.4f})")
        span = (worst_clean - worst_deg) / 0.775
        b_u = worst_deg - 0.1125 * span
        a_u = b_u + span
        a, b = direction * a_u, direction * b_u
        anchors[task] = (a, b)
        print(f"{task.value:<13} [{clean_stats.min():8.4f} {clean_stats.max():8.4f}]  "
              f"[{deg_stats.min():8.4f} {deg_stats.max():8.4f}]   ({a:.6g}, {b:.6g})")

    print("\npooled Spearman(severity, score) over 10 levels x 20 images:")
    for task in HEURISTIC_TASKS:
        a, b = anchors[task]
        sev_vals, scores = [], []
        for i, (img, depth) in enumerate(corpus):
            for li, sev in enumerate(np.linspace(0.0, 1.0, 10)):
                seed = SeedTree(CALIBRATION_SEED + 1, (i, li))
                deg = img if sev == 0 else degrade(img, depth, task, float(sev), seed)
                x = _STATISTICS[task](deg)
                r = np.clip((x - b) / (a - b), 0.0, 1.0)
                sev_vals.append(sev)
                scores.append(1.0 + 4.0 * r)
        rho = sstats.spearmanr(sev_vals, scores).statistic
        print(f"{task.value:<13} rho = {rho:+.4f}")

    print("\nCALIBRATION_ANCHORS = {")
    for task, (a, b) in anchors.items():
        print(f"    TaskKind.{task.name}: ({a:.6g}, {b:.6g}),")
    print("}")


if __name__ == "__main__":
    main()
