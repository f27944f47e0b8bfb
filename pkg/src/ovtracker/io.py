"""File formats: JSONL detections and ground truth, embedding banks,
scenario bundles, head checkpoints, track CSVs and training logs.

All writers are deterministic given identical inputs (floats are serialized
with their shortest round-trip repr), so reruns with the same seed produce
byte-identical files.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .consistency import AssociationHead, ConsistencyConfig
from .core import (BoundingBox, Detection, FrameObservations, GroundTruthBox,
                   VideoSequence)
from .promptattn import ClassEmbeddingBank, PromptPairSet
from .tracker import TrackRow

__all__ = [
    "DataFormatError",
    "write_detections_jsonl",
    "load_detections_jsonl",
    "write_groundtruth_jsonl",
    "load_groundtruth_jsonl",
    "write_class_bank",
    "load_class_bank",
    "write_prompt_bank",
    "load_prompt_bank",
    "write_bundle",
    "load_bundle",
    "save_checkpoint",
    "load_checkpoint",
    "write_track_csv",
    "load_track_csv",
    "write_training_log",
    "load_vocabulary",
    "vocabulary_from_bank",
    "BUNDLE_FILES",
]

BUNDLE_FILES = ("detections.jsonl", "groundtruth.jsonl", "class_bank.json",
                "prompt_bank.json", "scenario_config.json")


class DataFormatError(ValueError):
    """Malformed input file; carries the offending 1-based line numbers."""

    def __init__(self, path, lines: List[int], detail: str):
        self.path = str(path)
        self.lines = lines
        super().__init__(f"{path}: malformed line(s) {lines}: {detail}")


def _json_dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def write_detections_jsonl(path, video: VideoSequence) -> None:
    with open(path, "w") as fh:
        for frame in video.frames:
            for det in frame.detections:
                fh.write(_json_dumps({
                    "frame": frame.frame_index,
                    "box": list(det.box.as_array()),
                    "conf": det.confidence,
                    "text_emb": det.text_embedding.tolist(),
                    "img_emb": det.image_embedding.tolist(),
                    "raw_feat": det.raw_feature.tolist(),
                    "class": det.class_label,
                }) + "\n")


def load_detections_jsonl(path, num_frames: Optional[int] = None) -> VideoSequence:
    """Read detections back into a sequence.

    ``num_frames`` forces the frame range [0, num_frames) so frames without
    detections still exist (the tracker ages through them).
    """
    per_frame: Dict[int, List[Detection]] = {}
    bad: List[int] = []
    detail = ""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                det = Detection(
                    box=BoundingBox(*[float(v) for v in obj["box"]]),
                    confidence=float(obj["conf"]),
                    text_embedding=np.asarray(obj["text_emb"], dtype=np.float64),
                    image_embedding=np.asarray(obj["img_emb"], dtype=np.float64),
                    raw_feature=np.asarray(obj["raw_feat"], dtype=np.float64),
                    class_label=obj.get("class"),
                )
                per_frame.setdefault(int(obj["frame"]), []).append(det)
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                bad.append(lineno)
                detail = str(exc)
    if bad:
        raise DataFormatError(path, bad, detail)
    hi = max(per_frame, default=-1) + 1
    count = max(num_frames or 0, hi)
    frames = [FrameObservations(frame_index=i, detections=per_frame.get(i, []))
              for i in range(count)]
    return VideoSequence(frames=frames)


def write_groundtruth_jsonl(path, ground_truth: Dict[int, List[GroundTruthBox]]) -> None:
    with open(path, "w") as fh:
        for frame in sorted(ground_truth):
            for gt in ground_truth[frame]:
                fh.write(_json_dumps({
                    "frame": frame,
                    "track": gt.track_id,
                    "class": gt.class_id,
                    "box": list(gt.box.as_array()),
                }) + "\n")


def load_groundtruth_jsonl(path) -> Dict[int, List[GroundTruthBox]]:
    out: Dict[int, List[GroundTruthBox]] = {}
    bad: List[int] = []
    detail = ""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                gt = GroundTruthBox(box=BoundingBox(*[float(v) for v in obj["box"]]),
                                    track_id=int(obj["track"]),
                                    class_id=int(obj["class"]))
                out.setdefault(int(obj["frame"]), []).append(gt)
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                bad.append(lineno)
                detail = str(exc)
    if bad:
        raise DataFormatError(path, bad, detail)
    return out


def write_class_bank(path, bank: ClassEmbeddingBank) -> None:
    with open(path, "w") as fh:
        fh.write(_json_dumps({
            "classes": bank.class_embeddings.tolist(),
            "background": bank.background.tolist(),
            "lambda": bank.temperature,
            "base_mask": [bool(b) for b in bank.base_mask],
        }))


def load_class_bank(path) -> ClassEmbeddingBank:
    with open(path) as fh:
        obj = json.load(fh)
    return ClassEmbeddingBank(
        class_embeddings=np.asarray(obj["classes"], dtype=np.float64),
        background=np.asarray(obj["background"], dtype=np.float64),
        temperature=float(obj["lambda"]),
        base_mask=np.asarray(obj["base_mask"], dtype=bool),
    )


def write_prompt_bank(path, prompts: PromptPairSet) -> None:
    pairs = []
    for m in range(len(prompts)):
        pairs.append({
            "pos": prompts.positives[m].tolist(),
            "neg": prompts.negatives[m].tolist(),
            "name_pos": prompts.names[m][0],
            "name_neg": prompts.names[m][1],
        })
    with open(path, "w") as fh:
        fh.write(_json_dumps({"pairs": pairs}))


def load_prompt_bank(path) -> PromptPairSet:
    with open(path) as fh:
        obj = json.load(fh)
    pairs = obj["pairs"]
    return PromptPairSet(
        positives=np.asarray([p["pos"] for p in pairs], dtype=np.float64),
        negatives=np.asarray([p["neg"] for p in pairs], dtype=np.float64),
        names=[(p["name_pos"], p["name_neg"]) for p in pairs],
    )


def write_bundle(out_dir, scenario) -> List[str]:
    """Write the five-file scenario bundle; returns the file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_detections_jsonl(out / "detections.jsonl", scenario.video)
    write_groundtruth_jsonl(out / "groundtruth.jsonl", scenario.video.ground_truth or {})
    write_class_bank(out / "class_bank.json", scenario.class_bank)
    write_prompt_bank(out / "prompt_bank.json", scenario.prompt_bank)
    with open(out / "scenario_config.json", "w") as fh:
        fh.write(_json_dumps(scenario.config.to_dict()))
    return list(BUNDLE_FILES)


def load_bundle(bundle_dir):
    """Load a bundle directory back into a Scenario (without degradation flags)."""
    from .synth import Scenario, ScenarioConfig

    bundle = Path(bundle_dir)
    for name in BUNDLE_FILES:
        if not (bundle / name).exists():
            raise FileNotFoundError(f"bundle is missing {name}: {bundle / name}")
    with open(bundle / "scenario_config.json") as fh:
        config = ScenarioConfig.from_dict(json.load(fh))
    video = load_detections_jsonl(bundle / "detections.jsonl", num_frames=config.num_frames)
    video.ground_truth = load_groundtruth_jsonl(bundle / "groundtruth.jsonl")
    return Scenario(
        config=config,
        video=video,
        class_bank=load_class_bank(bundle / "class_bank.json"),
        prompt_bank=load_prompt_bank(bundle / "prompt_bank.json"),
    )


def save_checkpoint(path, head: AssociationHead, steps_trained: int,
                    config: ConsistencyConfig) -> None:
    with open(path, "w") as fh:
        fh.write(_json_dumps({
            "shape": list(head.projection.shape),
            "projection": head.projection.tolist(),
            "learning_rate": head.learning_rate,
            "steps_trained": steps_trained,
            "config": asdict(config),
        }))


def load_checkpoint(path) -> Tuple[AssociationHead, int, ConsistencyConfig]:
    with open(path) as fh:
        obj = json.load(fh)
    proj = np.asarray(obj["projection"], dtype=np.float64)
    if list(proj.shape) != list(obj["shape"]):
        raise DataFormatError(path, [1], "projection shape does not match header")
    head = AssociationHead(projection=proj, learning_rate=float(obj["learning_rate"]))
    return head, int(obj["steps_trained"]), ConsistencyConfig(**obj["config"])


def write_track_csv(path, rows: Sequence[TrackRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "track_id", "class_id", "x", "y", "w", "h", "conf"])
        for r in rows:
            writer.writerow([r.frame, r.track_id, r.class_id,
                             repr(r.box.x), repr(r.box.y), repr(r.box.w), repr(r.box.h),
                             repr(r.confidence)])


def load_track_csv(path) -> List[TrackRow]:
    rows: List[TrackRow] = []
    bad: List[int] = []
    detail = ""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, record in enumerate(reader, start=1):
            if lineno == 1 or not record:
                continue
            try:
                frame, tid, cid = int(record[0]), int(record[1]), int(record[2])
                x, y, w, h, conf = (float(v) for v in record[3:8])
                rows.append(TrackRow(frame=frame, track_id=tid, class_id=cid,
                                     box=BoundingBox(x, y, w, h), confidence=conf))
            except (IndexError, ValueError) as exc:
                bad.append(lineno)
                detail = str(exc)
    if bad:
        raise DataFormatError(path, bad, detail)
    return rows


def write_training_log(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "intra", "inter", "total"])
        for rec in records:
            writer.writerow([rec.step, repr(rec.intra), repr(rec.inter), repr(rec.total)])


def load_vocabulary(path) -> Tuple[Set[int], Set[int]]:
    """Vocabulary file: {"base": [class ids], "novel": [class ids]}."""
    with open(path) as fh:
        obj = json.load(fh)
    return set(int(c) for c in obj["base"]), set(int(c) for c in obj["novel"])


def vocabulary_from_bank(bank: ClassEmbeddingBank) -> Tuple[Set[int], Set[int]]:
    base = {c for c in range(bank.num_classes) if bank.base_mask[c]}
    novel = set(range(bank.num_classes)) - base
    return base, novel
