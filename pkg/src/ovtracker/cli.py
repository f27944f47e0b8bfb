"""Command-line entry point.

Subcommands: generate, train, track, evaluate, ablate. Every run echoes its
fully resolved configuration next to its outputs, and all randomness flows
from a single seed, so reruns are byte-identical. Exit codes: 0 success,
2 usage or config error, 3 runtime data error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional

from . import io as ovio
from .consistency import ConsistencyConfig
from .promptattn import FusionWeights
from .report import (ablation_table, metrics_table, save_ablation_figure,
                     save_metrics_figure, save_training_curve)
from .sampling import SamplingPlan
from .synth import STANDARD_SCENARIO_NAMES, ScenarioConfig, generate_scenario, standard_scenario_config
from .tracker import TrackerConfig, track_sequence
from .training import (DEFAULT_EMBED_DIM, DEFAULT_LEARNING_RATE, AblationVariant,
                       DEFAULT_VARIANTS, run_ablation, train_association_head)

__all__ = ["main"]


def _build_dataclass(cls, data: dict, name: str):
    if not isinstance(data, dict):
        raise ValueError(f"{name} section must be a JSON object")
    unknown = set(data) - set(cls.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown {name} keys: {sorted(unknown)}")
    return cls(**data)


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _seeded(config: ScenarioConfig, seed: Optional[int]) -> ScenarioConfig:
    if seed is None:
        return config
    return ScenarioConfig.from_dict({**config.to_dict(), "seed": seed})


def cmd_generate(args) -> int:
    if (args.preset is None) == (args.config is None):
        raise ValueError("pass exactly one of --preset or --config")
    if args.preset is not None:
        config = standard_scenario_config(args.preset)
    else:
        config = ScenarioConfig.from_dict(_load_json(args.config))
    config = _seeded(config, args.seed)
    scenario = generate_scenario(config)
    out = Path(args.out)
    files = ovio.write_bundle(out, scenario)
    n_dets = sum(len(f.detections) for f in scenario.video.frames)
    print(f"wrote bundle to {out} ({', '.join(files)})")
    print(f"frames={config.num_frames} objects={config.num_objects} "
          f"classes={config.num_classes} detections={n_dets} seed={config.seed}")
    return 0


def _train_settings(args):
    raw = _load_json(args.config) if args.config else {}
    unknown = set(raw) - {"plan", "consistency", "steps", "embed_dim", "learning_rate"}
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    plan = _build_dataclass(SamplingPlan, raw.get("plan", {}), "plan")
    consistency = _build_dataclass(ConsistencyConfig, raw.get("consistency", {}), "consistency")
    steps = args.steps if args.steps is not None else int(raw.get("steps", 300))
    embed_dim = int(raw.get("embed_dim", DEFAULT_EMBED_DIM))
    learning_rate = float(raw.get("learning_rate", DEFAULT_LEARNING_RATE))
    if args.seed is not None:
        plan = _build_dataclass(SamplingPlan, {**asdict(plan), "seed": args.seed}, "plan")
    return plan, consistency, steps, embed_dim, learning_rate


def cmd_train(args) -> int:
    scenario = ovio.load_bundle(args.bundle)
    plan, consistency, steps, embed_dim, learning_rate = _train_settings(args)
    head = None
    start_step = 0
    if args.resume:
        head, start_step, consistency = ovio.load_checkpoint(args.resume)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    head, log = train_association_head(
        scenario, plan, consistency, steps, head=head, embed_dim=embed_dim,
        learning_rate=learning_rate, start_step=start_step)
    ovio.save_checkpoint(out / "head_checkpoint.json", head, start_step + steps, consistency)
    ovio.write_training_log(out / "training_log.csv", log)
    if log:
        save_training_curve(log, out / "training_curve.png")
    _write_json(out / "train_config.json", {
        "plan": asdict(plan), "consistency": asdict(consistency), "steps": steps,
        "embed_dim": embed_dim, "learning_rate": learning_rate,
        "resumed_from_step": start_step,
    })
    first = log[0].total if log else float("nan")
    last = log[-1].total if log else float("nan")
    print(f"trained {steps} step(s); total loss {first:.6f} -> {last:.6f}")
    print(f"checkpoint: {out / 'head_checkpoint.json'}")
    return 0


def cmd_track(args) -> int:
    scenario = ovio.load_bundle(args.bundle)
    head, _, _ = ovio.load_checkpoint(args.checkpoint)
    raw = _load_json(args.config) if args.config else {}
    unknown = set(raw) - {"tracker", "fusion"}
    if unknown:
        raise ValueError(f"unknown track config keys: {sorted(unknown)}")
    tracker_config = _build_dataclass(TrackerConfig, raw.get("tracker", {}), "tracker")
    fusion = _build_dataclass(FusionWeights, raw.get("fusion", {}), "fusion")
    if head.feature_dim != scenario.config.embedding.feature_dim:
        raise ValueError(
            f"checkpoint feature dim {head.feature_dim} does not match bundle "
            f"feature dim {scenario.config.embedding.feature_dim}")
    rows = track_sequence(scenario.video, head.embed, scenario.class_bank,
                          tracker_config, fusion)
    out = Path(args.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    ovio.write_track_csv(out, rows)
    _write_json(out.with_name(out.stem + "_config.json"),
                {"tracker": asdict(tracker_config), "fusion": asdict(fusion)})
    print(f"wrote {len(rows)} track rows over {len({r.track_id for r in rows})} "
          f"track(s) to {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import evaluation_report

    rows = ovio.load_track_csv(args.tracks)
    ground_truth = ovio.load_groundtruth_jsonl(args.groundtruth)
    base, novel = ovio.load_vocabulary(args.vocabulary)
    reports = evaluation_report(rows, ground_truth, base, novel, args.iou_threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {split: rep.as_dict() for split, rep in reports.items()}
    _write_json(out / "report.json", payload)
    table = metrics_table(reports)
    (out / "report.txt").write_text(table)
    save_metrics_figure(reports, out / "metrics.png")
    _write_json(out / "eval_config.json", {
        "iou_threshold": args.iou_threshold,
        "base_classes": sorted(base),
        "novel_classes": sorted(novel),
    })
    print(table, end="")
    return 0


def cmd_ablate(args) -> int:
    scenario = ovio.load_bundle(args.bundle)
    raw = _load_json(args.variants) if args.variants else {}
    unknown = set(raw) - {"variants", "plan", "consistency", "steps",
                          "embed_dim", "learning_rate"}
    if unknown:
        raise ValueError(f"unknown ablate config keys: {sorted(unknown)}")
    if "variants" in raw:
        variants = [AblationVariant.from_dict(v) for v in raw["variants"]]
    else:
        variants = list(DEFAULT_VARIANTS)
    plan = _build_dataclass(SamplingPlan, raw.get("plan", {}), "plan")
    consistency = _build_dataclass(ConsistencyConfig, raw.get("consistency", {}), "consistency")
    steps = args.steps if args.steps is not None else int(raw.get("steps", 150))
    embed_dim = int(raw.get("embed_dim", DEFAULT_EMBED_DIM))
    learning_rate = float(raw.get("learning_rate", DEFAULT_LEARNING_RATE))
    if args.seed is not None:
        plan = _build_dataclass(SamplingPlan, {**asdict(plan), "seed": args.seed}, "plan")
    rows = run_ablation(scenario, variants, plan, consistency, steps,
                        embed_dim=embed_dim, learning_rate=learning_rate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w") as fh:
        fh.write("variant,teta,loca,assoca,clsa\n")
        for row in rows:
            vals = row.report.as_dict()
            fh.write(f"{row.name},{vals['teta']!r},{vals['loca']!r},"
                     f"{vals['assoca']!r},{vals['clsa']!r}\n")
    table = ablation_table(rows)
    (out / "ablation.txt").write_text(table)
    save_ablation_figure(rows, out / "ablation.png")
    _write_json(out / "ablate_config.json", {
        "variants": [asdict(v) for v in variants], "plan": asdict(plan),
        "consistency": asdict(consistency), "steps": steps,
        "embed_dim": embed_dim, "learning_rate": learning_rate,
    })
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovtracker",
        description="Synthetic open-vocabulary tracking: scenario generation, "
                    "self-supervised association training, tracking and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a scenario bundle to a directory")
    p.add_argument("--preset", choices=STANDARD_SCENARIO_NAMES,
                   help="one of the shipped scenario presets")
    p.add_argument("--config", help="scenario config JSON (alternative to --preset)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the association head on a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="train config JSON (plan/consistency/steps/...)")
    p.add_argument("--steps", type=int, help="override the number of update steps")
    p.add_argument("--seed", type=int, help="override the sampling seed")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker over a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output track CSV path")
    p.add_argument("--config", help="tracker/fusion config JSON")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="score a track CSV against ground truth")
    p.add_argument("--tracks", required=True)
    p.add_argument("--groundtruth", required=True)
    p.add_argument("--vocabulary", required=True,
                   help='JSON {"base": [ids], "novel": [ids]}')
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and evaluate a set of variants")
    p.add_argument("--bundle", required=True)
    p.add_argument("--variants", help="variants config JSON")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ovio.DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
