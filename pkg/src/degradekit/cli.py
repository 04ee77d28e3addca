"""Command-line front end.

Subcommands: synth, patterns gen, filter, eval, eval instruction, stats,
schedule emit, schedule sample. Exit codes: 0 ok, 2 usage, 3 I/O,
4 data/format, 5 backend.

A --config TOML file can pre-set any long flag of the invoked subcommand
(keys match flag names with dashes as underscores); explicit flags win.
Python 3.10 lacks tomllib and the environment carries no TOML package, so
a small reader for the flat subset we need lives here.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys

import numpy as np

from . import __version__
from .batch import SynthConfig, run_synth
from .core import (
    Manifest,
    SeedTree,
    TaskKind,
    dataset_stats,
    load_image,
    save_image,
    severity_histogram,
)
from .curriculum import StageConfig, default_stages, draw_log, lr_schedule
from .errors import (
    BackendError,
    ConfigError,
    DegradeKitError,
    FormatError,
    ParameterError,
    ShapeError,
    UndefinedCorrelationError,
    UnsupportedTaskError,
)
from .filtering import (
    FileSimilarityBackend,
    WatermarkVerdicts,
    degradation_delta_filter,
    run_filter_pipeline,
    semantic_filter,
    skeleton_shift_filter,
)
from .metrics import (
    EvalRecord,
    FileDistance,
    FileScorer,
    HeuristicScorer,
    Leaderboard,
    StructuralDistance,
    aggregate,
    emit_leaderboard,
    render_scoring_instruction,
)
from .patterns import (
    MoireParams,
    gen_flare_sprite,
    gen_haze_texture,
    gen_moire_pattern,
    gen_rain_streaks,
    RainStreakParams,
    random_moire_params,
)

log = logging.getLogger("degradekit")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_BACKEND = 5


# ---------------------------------------------------------------------------
# minimal TOML subset: [tables], key = string|number|bool|flat array
# ---------------------------------------------------------------------------

_TOML_LINE = re.compile(r"^\s*([A-Za-z0-9_.-]+)\s*=\s*(.+?)\s*$")


def _parse_toml_value(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_toml_value(p) for p in _split_toml_array(inner)]
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"unparseable TOML value: {text!r}") from None


def _split_toml_array(inner: str) -> list[str]:
    parts, depth, buf, quoted = [], 0, "", False
    for ch in inner:
        if ch == '"':
            quoted = not quoted
        if ch == "," and depth == 0 and not quoted:
            parts.append(buf)
            buf = ""
            continue
        if ch == "[" and not quoted:
            depth += 1
        if ch == "]" and not quoted:
            depth -= 1
        buf += ch
    if buf.strip():
        parts.append(buf)
    return parts


def read_config_toml(path: str) -> dict:
    """Flat key=value TOML subset; [section] prefixes keys with 'section.'"""
    table: dict = {}
    section = ""
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip() if not raw.strip().startswith("#") else ""
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip() + "."
                continue
            m = _TOML_LINE.match(line)
            if not m:
                raise FormatError(f"{path}:{ln}: unparseable config line: {raw.strip()!r}")
            table[section + m.group(1)] = _parse_toml_value(m.group(2))
    return table


def _collect_defaults(parser: argparse.ArgumentParser, into: dict) -> None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _collect_defaults(sub, into)
        elif action.dest != argparse.SUPPRESS:
            into.setdefault(action.dest, action.default)


def _apply_config_defaults(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill flags still at their declared default from the --config table.

    An explicit flag always wins unless it happens to repeat the default,
    which is indistinguishable post-parse and documented as config-wins.
    """
    if not getattr(args, "config", None):
        return
    defaults: dict = {}
    _collect_defaults(parser, defaults)
    table = read_config_toml(args.config)
    for key, value in table.items():
        dest = key.split(".")[-1].replace("-", "_")
        if hasattr(args, dest) and getattr(args, dest) == defaults.get(dest):
            setattr(args, dest, value)


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    tasks = tuple(t.strip() for t in args.tasks.split(",")) if args.tasks else tuple(
        t.value for t in TaskKind)
    config = SynthConfig(
        input_dir=args.input,
        out_dir=args.out,
        tasks=tasks,
        seed=args.seed,
        workers=args.workers,
        severity_lo=args.severity_lo,
        severity_hi=args.severity_hi,
        depth_dir=args.depth_dir,
        mask_dir=args.mask_dir,
        moire_bank_dir=args.moire_bank,
        flare_bank_dir=args.flare_bank,
        rain_bank_dir=args.rain_bank,
        image_format=args.format,
    )
    manifest, skips = run_synth(config)
    print(f"synthesized {len(manifest)} records "
          f"({len(skips)} skipped) -> {os.path.join(args.out, 'manifest.jsonl')}")
    return EXIT_OK


def _cmd_patterns_gen(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    root = SeedTree(args.seed)
    for i in range(args.count):
        rng = root.child(i).rng()
        if args.kind == "moire":
            img = gen_moire_pattern(random_moire_params(rng), args.size)
        elif args.kind == "flare":
            kind = ("radial_glow", "streak", "ring")[i % 3]
            img = gen_flare_sprite(kind, intensity=1.0, color_temp=float(rng.uniform(0, 1)),
                                   seed=root.child(i), size=args.size)
        elif args.kind == "rain":
            params = RainStreakParams(density=float(rng.uniform(0.8, 2.5)),
                                      length=float(rng.uniform(12, 30)),
                                      angle=float(np.pi / 2 + rng.uniform(-0.4, 0.4)),
                                      width=float(rng.uniform(1.0, 2.2)),
                                      wind_jitter=float(rng.uniform(0.05, 0.35)))
            img = gen_rain_streaks((args.size, args.size), params, root.child(i))
        else:  # haze
            field2d = gen_haze_texture(args.size, octaves=int(rng.integers(2, 6)),
                                       seed=root.child(i))
            img = np.repeat(field2d[:, :, None], 4, axis=2)
        save_image(img[:, :, :3] if args.kind == "haze" else img,
                   os.path.join(args.out, f"{args.kind}_{i:04d}.png"))
    print(f"wrote {args.count} {args.kind} patterns to {args.out}")
    return EXIT_OK


def _build_gates(args):
    gates = []
    for name in (g.strip() for g in args.gates.split(",") if g.strip()):
        if name == "semantic":
            if not args.semantic_scores:
                raise ConfigError("semantic gate needs --semantic-scores FILE")
            backend = FileSimilarityBackend(args.semantic_scores)
            thr = args.semantic_threshold

            def semantic_gate(rec, backend=backend, thr=thr):
                return semantic_filter(rec.degraded_path, rec.task, backend, thr)
            gates.append(("semantic", semantic_gate))
        elif name == "delta":
            if not args.scores:
                raise ConfigError("delta gate needs --scores FILE ({id, clean, degraded})")
            table = {}
            with open(args.scores, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        obj = json.loads(line)
                        table[str(obj["id"])] = (float(obj["clean"]), float(obj["degraded"]))
            min_delta = args.min_delta

            def delta_gate(rec, table=table, min_delta=min_delta):
                if rec.degraded_path not in table:
                    raise BackendError(f"no scores for {rec.degraded_path}")
                clean, degraded = table[rec.degraded_path]
                return degradation_delta_filter(clean, degraded, min_delta)
            gates.append(("delta", delta_gate))
        elif name == "shift":
            radius, max_shift = args.search_radius, args.max_shift

            def shift_gate(rec, radius=radius, max_shift=max_shift):
                return skeleton_shift_filter(load_image(rec.clean_path),
                                             load_image(rec.degraded_path),
                                             radius, max_shift)
            gates.append(("shift", shift_gate))
        elif name == "watermark":
            if not args.watermarks:
                raise ConfigError("watermark gate needs --watermarks FILE")
            verdicts = WatermarkVerdicts(args.watermarks)

            def wm_gate(rec, verdicts=verdicts):
                return verdicts.verdict(rec.degraded_path)
            gates.append(("watermark", wm_gate))
        else:
            raise ConfigError(f"unknown gate {name!r}")
    return gates


def _cmd_filter(args) -> int:
    manifest = Manifest.load(args.manifest)
    gates = _build_gates(args)
    if not gates:
        raise ConfigError("at least one gate is required (--gates)")
    outcome = run_filter_pipeline(manifest, gates)
    os.makedirs(args.out, exist_ok=True)
    outcome.kept.save(os.path.join(args.out, "kept.jsonl"))
    outcome.rejected.save(os.path.join(args.out, "rejected.jsonl"))
    with open(os.path.join(args.out, "filter_report.jsonl"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(outcome.report_lines()) + "\n")
    for reason, n in sorted(outcome.reason_counts.items()):
        print(f"{reason}: {n}")
    print(f"kept {len(outcome.kept)} / {len(manifest)}")
    return EXIT_OK


def _iter_eval_pairs(degraded_dir: str, restored_dir: str, default_task: str | None):
    """Match files by stem between the two directories; parse the task from
    a '__<task>' stem suffix unless --task forces one."""
    def index(d):
        out = {}
        for name in sorted(os.listdir(d)):
            stem, ext = os.path.splitext(name)
            if ext.lower() in (".png", ".jpg", ".jpeg"):
                out[stem] = os.path.join(d, name)
        return out

    deg, res = index(degraded_dir), index(restored_dir)
    unmatched = sorted(set(deg) ^ set(res))
    for stem in unmatched:
        log.warning("eval: unmatched id %r, excluded", stem)
    for stem in sorted(set(deg) & set(res)):
        if default_task:
            task = TaskKind.parse(default_task)
        elif "__" in stem:
            task = TaskKind.parse(stem.rsplit("__", 1)[1])
        else:
            raise ConfigError(f"cannot infer task for {stem!r}; pass --task or "
                              f"use '<id>__<task>' file names")
        yield stem, task, deg[stem], res[stem]


def _cmd_eval(args) -> int:
    scorer = FileScorer(args.scores) if args.backend == "file" else HeuristicScorer()
    if args.backend == "file" and not args.scores:
        raise ConfigError("--backend file needs --scores FILE")
    if args.distance == "file" and not args.distances:
        raise ConfigError("--distance file needs --distances FILE")
    dist_backend = FileDistance(args.distances) if args.distance == "file" else StructuralDistance()

    records = []
    for stem, task, deg_path, res_path in _iter_eval_pairs(args.degraded, args.restored, args.task):
        if args.backend == "file":
            deg_score = scorer.score(f"degraded/{stem}", task)
            res_score = scorer.score(f"restored/{stem}", task)
        else:
            deg_score = scorer.score(load_image(deg_path), task)
            res_score = scorer.score(load_image(res_path), task)
        if args.distance == "file":
            lps = dist_backend.dist(f"degraded/{stem}", f"restored/{stem}")
        else:
            a, b = load_image(deg_path), load_image(res_path)
            if a.shape != b.shape:
                from .patterns import resize_field
                log.warning("eval: resampling %s to match its degraded input", stem)
                b = np.clip(resize_field(b, a.shape[0], a.shape[1], "bilinear"), 0, 1)
            lps = dist_backend.dist(a, b)
        records.append(EvalRecord(image_id=stem, task=task, deg_score=deg_score,
                                  restored_score=res_score, lps=lps))
    if not records:
        raise ConfigError("no evaluable pairs found")
    board = Leaderboard()
    board.add(args.method, records)
    os.makedirs(args.out, exist_ok=True)
    csv_text = emit_leaderboard(board, "csv")
    md_text = emit_leaderboard(board, "markdown")
    with open(os.path.join(args.out, "leaderboard.csv"), "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    with open(os.path.join(args.out, "leaderboard.md"), "w", encoding="utf-8") as fh:
        fh.write(md_text)
    print(md_text, end="")
    return EXIT_OK


def _cmd_eval_instruction(args) -> int:
    print(render_scoring_instruction(TaskKind.parse(args.task)), end="")
    return EXIT_OK


def _cmd_stats(args) -> int:
    records = []
    for path in args.manifests:
        records.extend(Manifest.load(path).records)
    st = dataset_stats(records)
    print(f"{'task':<12} {'synthetic':>12} {'real':>10} {'total':>12}")
    for task in TaskKind:
        c = st.counts.get(task, {})
        print(f"{task.value:<12} {c.get('synthetic', 0):>12,} "
              f"{c.get('real', 0):>10,} {st.task_total(task):>12,}")
    print(f"{'total':<12} {st.synthetic_total:>12,} {st.real_total:>10,} "
          f"{st.grand_total:>12,}")
    if args.histogram:
        hist = severity_histogram(records)
        for task, bins in sorted(hist.items(), key=lambda kv: kv[0].value):
            print(f"severity[{task.value}]: {bins}")
    return EXIT_OK


def _stage_for(args) -> StageConfig:
    stage1, stage2 = default_stages()
    stage = stage1 if args.stage == 1 else stage2
    if getattr(args, "ramp", False):
        from dataclasses import replace
        stage = replace(stage, progressive_ramp=True)
    return stage


def _cmd_schedule_emit(args) -> int:
    stage = _stage_for(args)
    rows = lr_schedule(stage)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("step,lr\n")
        for step, lr in rows:
            fh.write(f"{step},{lr:.12g}\n")
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def _cmd_schedule_sample(args) -> int:
    stage = _stage_for(args)
    entries = draw_log(stage, SeedTree(args.seed), args.n)
    out = args.out or "-"
    text = "\n".join(json.dumps(e, separators=(",", ":")) for e in entries) + "\n"
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root 64-bit seed")
    p.add_argument("--workers", type=int, default=1, help="parallel worker count")
    p.add_argument("--config", default=None, help="TOML config file (flags override)")
    p.add_argument("--out", default="out", help="output directory or file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degradekit",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize degraded pairs from clean images")
    _add_common(p)
    p.add_argument("--input", required=True, help="directory of clean PNG/JPEG images")
    p.add_argument("--tasks", default=None, help="comma list (default: all nine)")
    p.add_argument("--severity-lo", type=float, default=0.25)
    p.add_argument("--severity-hi", type=float, default=1.0)
    p.add_argument("--depth-dir", default=None, help="16-bit PNG depth sidecars (haze)")
    p.add_argument("--mask-dir", default=None, help="8-bit PNG region masks (segment noise)")
    p.add_argument("--moire-bank", default=None)
    p.add_argument("--flare-bank", default=None)
    p.add_argument("--rain-bank", default=None)
    p.add_argument("--format", choices=("png", "jpeg"), default="png")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("patterns", help="pattern bank utilities")
    psub = p.add_subparsers(dest="patterns_command", required=True)
    g = psub.add_parser("gen", help="generate a procedural pattern bank")
    _add_common(g)
    g.add_argument("--kind", choices=("moire", "flare", "rain", "haze"), required=True)
    g.add_argument("--count", type=int, default=16)
    g.add_argument("--size", type=int, default=512)
    g.set_defaults(func=_cmd_patterns_gen)

    p = sub.add_parser("filter", help="run pair-quality gates over a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--gates", default="", help="ordered comma list: semantic,delta,shift,watermark")
    p.add_argument("--semantic-scores", default=None, help="JSONL {id, score}")
    p.add_argument("--semantic-threshold", type=float, default=0.22)
    p.add_argument("--scores", default=None, help="JSONL {id, clean, degraded}")
    p.add_argument("--min-delta", type=float, default=1.0)
    p.add_argument("--search-radius", type=int, default=15)
    p.add_argument("--max-shift", type=int, default=1)
    p.add_argument("--watermarks", default=None, help="JSONL {id, watermarked}")
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("eval", help="non-reference evaluation of restorations")
    _add_common(p)
    esub = p.add_subparsers(dest="eval_command")
    instr = esub.add_parser("instruction", help="print the scoring instruction")
    instr.add_argument("--task", required=True)
    instr.set_defaults(func=_cmd_eval_instruction)
    p.add_argument("--degraded", help="directory of degraded inputs")
    p.add_argument("--restored", help="directory of restored outputs")
    p.add_argument("--task", default=None, help="force one task for all pairs")
    p.add_argument("--method", default="method")
    p.add_argument("--backend", choices=("heuristic", "file"), default="heuristic")
    p.add_argument("--scores", default=None, help="JSONL {id, task, score}")
    p.add_argument("--distance", choices=("structural", "file"), default="structural")
    p.add_argument("--distances", default=None, help="JSONL {id_a, id_b, dist}")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stats", help="dataset statistics from manifests")
    _add_common(p)
    p.add_argument("manifests", nargs="+")
    p.add_argument("--histogram", action="store_true")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("schedule", help="curriculum schedules and samplers")
    ssub = p.add_subparsers(dest="schedule_command", required=True)
    e = ssub.add_parser("emit", help="write (step, lr) rows as CSV")
    _add_common(e)
    e.add_argument("--stage", type=int, choices=(1, 2), required=True)
    e.set_defaults(func=_cmd_schedule_emit)
    s = ssub.add_parser("sample", help="write a (task, origin) draw log")
    _add_common(s)
    s.add_argument("--stage", type=int, choices=(1, 2), required=True)
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--ramp", action="store_true", help="progressive within-stage mix ramp")
    s.set_defaults(func=_cmd_schedule_sample)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "eval" and getattr(args, "eval_command", None) is None:
        if not (args.degraded and args.restored):
            parser.error("eval requires --degraded and --restored (or the 'instruction' subcommand)")
    try:
        _apply_config_defaults(args, parser)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ShapeError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (BackendError, UnsupportedTaskError, UndefinedCorrelationError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except DegradeKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
