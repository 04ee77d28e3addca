"""degradekit: deterministic degradation synthesis, pair filtering, and
non-reference restoration benchmarking.

The package is organized around plain numpy arrays (H, W, C) in [0, 1]:

- core          image I/O, seed trees, pair records, manifests, stats
- patterns      moiré / flare / rain / haze asset generators and banks
- degradations  the nine degradation operators and the web-style chain
- severity      severity -> parameter maps and the replay dispatcher
- filtering     semantic, score-delta, alignment, and watermark gates
- metrics       RS / LPS / FS scoring, leaderboards, rank correlations
- curriculum    two-stage training schedule and sampling math
- batch         parallel manifest-driven synthesis and replay
- cli           the `degradekit` command-line front end
"""

from .core import (
    ALL_TASKS,
    DatasetStats,
    Manifest,
    PairRecord,
    SeedTree,
    TaskKind,
    clamp01,
    dataset_stats,
    load_image,
    luminance,
    save_image,
    seed_child,
)
from .curriculum import StageConfig, default_stages, lr_at, mix_sample, task_sample
from .degradations import (
    NoiseSpec,
    RainParams,
    WebChainConfig,
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
    apply_temporal_average,
    apply_web_chain,
)
from .filtering import (
    CLIP_PROMPTS,
    FilterReason,
    FilterVerdict,
    degradation_delta_filter,
    prompt_config_default,
    run_filter_pipeline,
    semantic_filter,
    skeleton_shift_filter,
    watermark_filter,
)
from .metrics import (
    CorrelationStats,
    EvalRecord,
    FileDistance,
    FileScorer,
    HeuristicScorer,
    Leaderboard,
    OverallRow,
    StructuralDistance,
    TaskReport,
    aggregate,
    emit_leaderboard,
    final_score,
    heuristic_degradation_score,
    perceptual_distance,
    rank_correlations,
    render_scoring_instruction,
    restoration_score,
)
from .patterns import (
    MoireParams,
    PatternBank,
    RainStreakParams,
    gen_flare_sprite,
    gen_haze_texture,
    gen_moire_pattern,
    gen_rain_streaks,
    load_depth,
    load_mask,
    load_pattern_bank,
)
from .severity import (
    DEFAULT_SEVERITY_MAP,
    Band,
    Resources,
    SeverityMap,
    apply_degradation,
    params_from_json,
    params_to_json,
    severity_to_params,
)
from .batch import SynthConfig, run_synth, replay_record

__version__ = "0.1.0"
