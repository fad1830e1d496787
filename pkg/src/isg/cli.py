"""Command-line entry point: data prep, training, synthesis, benchmarking.

Exit codes: 0 success, 1 validation error (bad arguments, invalid plan,
missing files), 2 runtime error.  Every run writes a resolved-config
snapshot into its output directory.  ISG_DATA_DIR, when set, is the
default root for relative corpus paths.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from isg.config import (
    DataConfig,
    SyntheticConfig,
    apply_overrides,
    asdict_config,
    write_config_snapshot,
)


class ValidationError(Exception):
    """User-input problems: reported on stderr, exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argument problems are validation errors (exit 1, not argparse's 2)
        raise ValidationError(message)


def _data_root() -> Path:
    return Path(os.environ.get("ISG_DATA_DIR", "."))


def _resolve(path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() or p.exists() else _data_root() / p


def _load_data_config(path: str | None) -> DataConfig:
    cfg = DataConfig()
    if path:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        if "audio" in raw:
            cfg.audio = apply_overrides(cfg.audio, raw.pop("audio"))
        cfg = apply_overrides(cfg, raw)
    cfg.validate()
    return cfg


def build_parser() -> _Parser:
    parser = _Parser(prog="isg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthgen", parents=[], help="generate a synthetic "
                       "paired corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-utterances", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON overrides for the "
                   "synthetic generator")

    p = sub.add_parser("prepare", help="breathgroup-bigram augmentation of a "
                       "raw manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON overrides for "
                   "DataConfig")

    p = sub.add_parser("train", help="run a training plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)

    p = sub.add_parser("synth", help="synthesize speech and gesture")
    p.add_argument("--model", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gesture-checkpoint", default=None,
                   help="second-stage checkpoint for the pipeline model")
    p.add_argument("--text", default=None)
    p.add_argument("--text-file", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--length-scale", type=float, default=0.9)
    p.add_argument("--gesture-input", choices=("attn", "mel"), default="attn",
                   help="recorded in the snapshot; the checkpoint itself "
                   "fixes which input path was trained")
    p.add_argument("--vocoder-iters", type=int, default=30)

    p = sub.add_parser("bench", help="objective comparisons")
    p.add_argument("what", choices=("params", "timing", "plot", "stats"))
    p.add_argument("--checkpoint", action="append", default=[],
                   help="model checkpoints as name=path (repeatable)")
    p.add_argument("--gesture-checkpoint", default=None)
    p.add_argument("--text", action="append", default=[])
    p.add_argument("--text-file", default=None)
    p.add_argument("--n-repeats", type=int, default=3)
    p.add_argument("--motion", action="append", default=[],
                   help="motion CSV files (for plot/stats)")
    p.add_argument("--motion-fps", type=float, default=20.0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _read_texts(args) -> list[str]:
    texts: list[str] = []
    if getattr(args, "text", None):
        if isinstance(args.text, list):
            texts.extend(args.text)
        else:
            texts.append(args.text)
    if getattr(args, "text_file", None):
        path = _resolve(args.text_file)
        if not path.exists():
            raise ValidationError(f"text file {path} not found")
        for line in path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line:
                texts.append(line)
    if not texts:
        raise ValidationError("provide --text or --text-file")
    return texts


def _cmd_synthgen(args) -> int:
    from isg.corpus import generate_synthetic_corpus

    if args.n_utterances < 1:
        raise ValidationError("--n-utterances must be >= 1")
    cfg = SyntheticConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            cfg = apply_overrides(cfg, json.load(f))
    out = Path(args.out)
    generate_synthetic_corpus(args.seed, args.n_utterances, cfg, out)
    write_config_snapshot(out, "resolved-config.json", {
        "command": "synthgen", "seed": args.seed,
        "n_utterances": args.n_utterances, "config": asdict_config(cfg)})
    print(f"wrote {args.n_utterances} utterances under {out}")
    return 0


def _cmd_prepare(args) -> int:
    from isg.corpus import CorpusManifest, ManifestError, prepare_corpus

    manifest_path = _resolve(args.manifest)
    if not manifest_path.exists():
        raise ValidationError(f"manifest {manifest_path} not found")
    cfg = _load_data_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        manifest = CorpusManifest.load(manifest_path)
        manifest.validate(check_files=True)
        prepared = prepare_corpus(manifest, cfg, out / "prepared.jsonl")
    except ManifestError as exc:
        raise ValidationError(str(exc)) from exc
    write_config_snapshot(out, "resolved-config.json", {
        "command": "prepare", "manifest": str(manifest_path),
        "config": asdict_config(cfg)})
    print(f"prepared {len(prepared.entries)} utterances -> "
          f"{out / 'prepared.jsonl'}")
    return 0


def _cmd_train(args) -> int:
    from isg.training.plan import load_plan, validate_plan
    from isg.training.trainer import run_plan

    plan_path = _resolve(args.plan)
    if not plan_path.exists():
        raise ValidationError(f"plan {plan_path} not found")
    try:
        plan = load_plan(plan_path)
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise ValidationError(f"cannot parse plan: {exc}") from exc
    errors = validate_plan(plan, root=plan_path.parent)
    if errors:
        raise ValidationError("invalid plan:\n" +
                              "\n".join(f"- {e}" for e in errors))
    for stage in plan.stages:
        corpus = Path(stage.corpus)
        if not corpus.is_absolute() and not corpus.exists():
            stage.corpus = str(plan_path.parent / corpus)
        if stage.checkpoint_in not in (None, "previous"):
            ckpt = Path(stage.checkpoint_in)
            if not ckpt.is_absolute() and not ckpt.exists():
                stage.checkpoint_in = str(plan_path.parent / ckpt)
    cfg = _load_data_config(args.config)
    out = Path(args.out)
    write_config_snapshot(out, "resolved-config.json", {
        "command": "train", "plan": plan.to_json(),
        "config": asdict_config(cfg)})
    results = run_plan(plan, out, data_cfg=cfg)
    for r in results:
        final = r.metrics[-1] if r.metrics else {}
        print(f"stage {r.stage.name}: {r.checkpoint_path} "
              f"(final: {json.dumps(final)})")
    return 0


def _cmd_synth(args) -> int:
    from isg.synth import MODEL_NAMES, synthesize_utterance, write_outputs

    if args.model not in MODEL_NAMES:
        raise ValidationError(
            f"unknown model {args.model!r}; valid models: "
            f"{', '.join(MODEL_NAMES)}")
    ckpt = _resolve(args.checkpoint)
    if not ckpt.exists():
        raise ValidationError(f"checkpoint {ckpt} not found")
    gesture_ckpt = None
    if args.model == "pipeline":
        if not args.gesture_checkpoint:
            raise ValidationError("pipeline requires --gesture-checkpoint")
        gesture_ckpt = _resolve(args.gesture_checkpoint)
        if not gesture_ckpt.exists():
            raise ValidationError(f"checkpoint {gesture_ckpt} not found")
    texts = _read_texts(args)
    out = Path(args.out)
    write_config_snapshot(out, "resolved-config.json", {
        "command": "synth", "model": args.model, "checkpoint": str(ckpt),
        "gesture_checkpoint": str(gesture_ckpt) if gesture_ckpt else None,
        "seed": args.seed, "temperature": args.temperature,
        "length_scale": args.length_scale, "texts": texts,
        "gesture_input": args.gesture_input,
        "vocoder_iters": args.vocoder_iters})
    for i, text in enumerate(texts):
        result = synthesize_utterance(
            args.model, ckpt, text, seed=args.seed + i,
            temperature=args.temperature, length_scale=args.length_scale,
            gesture_checkpoint=gesture_ckpt,
            vocoder_iters=args.vocoder_iters)
        manifest = write_outputs(result, out, f"utt{i:03d}_{args.model}")
        print(f"[{i}] {text!r} -> {json.dumps(manifest['files'])}")
    return 0


def _bench_load(name_path: str):
    from isg.synth import LoadedModel

    if "=" not in name_path:
        raise ValidationError(
            f"--checkpoint wants name=path, got {name_path!r}")
    name, path = name_path.split("=", 1)
    resolved = _resolve(path)
    if not resolved.exists():
        raise ValidationError(f"checkpoint {resolved} not found")
    return name, resolved, LoadedModel(resolved)


def _cmd_bench(args) -> int:
    from isg import bench
    from isg.features.motion import load_motion_csv
    from isg.features.skeleton import toy_skeleton
    from isg.synth import synthesize_utterance

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_snapshot(out, "resolved-config.json", {
        "command": f"bench {args.what}",
        "checkpoints": args.checkpoint, "texts": args.text,
        "n_repeats": args.n_repeats, "motion": args.motion,
        "seed": args.seed})

    if args.what == "params":
        if not args.checkpoint:
            raise ValidationError("bench params needs --checkpoint name=path")
        counts = {}
        models = {}
        for spec in args.checkpoint:
            name, path, loaded = _bench_load(spec)
            counts[name] = bench.count_parameters(loaded.model)
            models[name] = loaded
        if "pipeline-speech" in counts and "pipeline-gesture" in counts:
            counts["pipeline"] = (counts["pipeline-speech"]
                                  + counts["pipeline-gesture"])
        with open(out / "params.json", "w", encoding="utf-8") as f:
            json.dump(counts, f, indent=2, sort_keys=True)
            f.write("\n")
        for name, c in sorted(counts.items()):
            print(f"{name}: {c} ({c / 1e6:.2f}M)")
        return 0

    if args.what == "timing":
        if not args.checkpoint:
            raise ValidationError("bench timing needs --checkpoint name=path")
        texts = _read_texts(args)
        reports = []
        counts = {}
        for spec in args.checkpoint:
            name, path, loaded = _bench_load(spec)
            model_kind = {"flow": "glowtts-isg", "isg": "tacotron2-isg-st",
                          "speech": "speech-only"}.get(loaded.kind)
            if loaded.kind == "pipeline_gesture":
                continue
            gesture_ckpt = args.gesture_checkpoint
            if gesture_ckpt:
                model_kind_here = "pipeline" if name == "pipeline" else model_kind
            else:
                model_kind_here = model_kind
            if model_kind_here is None:
                raise ValidationError(f"cannot time checkpoint kind "
                                      f"{loaded.kind!r}")

            def synthesize(text, _m=model_kind_here, _p=path):
                return synthesize_utterance(
                    _m, _p, text, seed=args.seed,
                    gesture_checkpoint=_resolve(gesture_ckpt)
                    if (gesture_ckpt and _m == "pipeline") else None,
                    vocoder_iters=1)

            report = bench.time_synthesis(synthesize, texts,
                                          n_repeats=args.n_repeats,
                                          model_name=name)
            counts[name] = bench.count_parameters(loaded.model)
            if model_kind_here == "pipeline":
                from isg.synth import LoadedModel
                counts[name] += bench.count_parameters(
                    LoadedModel(_resolve(gesture_ckpt)).model)
            reports.append(report)
        with open(out / "timing.jsonl", "w", encoding="utf-8") as f:
            for r in reports:
                f.write(json.dumps(r.to_json()) + "\n")
        table = bench.timing_table_markdown(reports, counts)
        (out / "timing.md").write_text(table, encoding="utf-8")
        print(table)
        return 0

    if not args.motion:
        raise ValidationError(f"bench {args.what} needs --motion CSV files")
    motions = [load_motion_csv(_resolve(m), args.motion_fps)
               for m in args.motion]
    if args.what == "stats":
        stats = []
        for m, path in zip(motions, args.motion):
            s = bench.motion_stats(m)
            stats.append({"motion": path, "variation": s["variation"],
                          "range_mean": s["range_mean"],
                          "range_max": s["range_max"]})
        with open(out / "motion_stats.json", "w", encoding="utf-8") as f:
            json.dump(stats, f, indent=2)
            f.write("\n")
        for s in stats:
            print(json.dumps(s))
        return 0

    # plot
    skeleton = toy_skeleton()
    bench.gesture_space_plot(motions, skeleton,
                             out_png=out / "gesture_space.png",
                             out_csv=out / "gesture_space.csv")
    print(f"wrote {out / 'gesture_space.png'} and CSV traces")
    return 0


_COMMANDS = {
    "synthgen": _cmd_synthgen,
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "synth": _cmd_synth,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
