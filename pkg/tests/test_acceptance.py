"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -v -s tests/test_acceptance.py`` to see the lines.
"""
import json
import time

import numpy as np
import pytest

from ovtracker.cli import main
from ovtracker.consistency import (AssociationHead, ConsistencyConfig, inter_loss,
                                   intra_loss, loss_gradient, margin_loss)
from ovtracker.core import BoundingBox, FrameObservations
from ovtracker.metrics import assoc_a, cls_a, evaluate_tracking, loc_a, teta
from ovtracker.promptattn import PromptPairSet, attention_weight, piecewise_reweight
from ovtracker.sampling import SamplingPlan
from ovtracker.synth import ScenarioConfig, generate_scenario, standard_scenario_config
from ovtracker.tracker import TrackerConfig, TrackerState, associate_frame, track_sequence
from ovtracker.training import AblationVariant, run_ablation

from conftest import make_detection
from test_consistency import (brute_force_margin, min_kink_margin, numerical_gradient,
                              random_group)
from test_metrics import brute_force_assoc, brute_force_ledger, gt, row


def _report(criterion, ok, detail):
    print(f"acceptance {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def test_criterion_01_gradient_fidelity():
    rng = np.random.default_rng(20240901)
    start = time.perf_counter()
    checked = 0
    worst = 0.0
    attempts = 0
    while checked < 100 and attempts < 1000:
        attempts += 1
        dim = int(rng.integers(3, 9))  # feature and embed dims up to 8
        group = random_group(rng, n_frames=3, max_objects=4, dim=dim)
        head = AssociationHead(projection=rng.normal(size=(dim, dim)))
        config = ConsistencyConfig(tau=float(rng.uniform(2.0, 8.0)), margin=0.5,
                                   alpha=0.9, adaptive_tau=False)
        if min_kink_margin([group], head, config) < 1e-3:
            continue
        analytic = loss_gradient([group], head, config)
        numeric = numerical_gradient([group], head, config, h=1e-5)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
        worst = max(worst, rel)
        assert rel < 1e-4, f"relative error {rel:.2e} on batch {attempts}"
        checked += 1
    elapsed = time.perf_counter() - start
    ok = checked == 100 and worst < 1e-4 and elapsed < 30.0
    _report("1 gradient fidelity", ok,
            f"{checked} batches, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_fixed_points():
    frames = (np.eye(4), np.eye(4), np.eye(4))
    config = ConsistencyConfig(tau=100.0, margin=0.5, adaptive_tau=False)
    intra = intra_loss(frames, config)
    a = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    s = np.clip(a, 1e-7, 1.0 - 1e-7)
    inter = inter_loss(s, a)
    ok = intra <= 1e-9 and inter < 2e-7
    _report("2 fixed points", ok, f"intra={intra:.2e}, inter={inter:.2e}")


def test_criterion_03_margin_loss_oracle():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        e = rng.uniform(size=(n, n))
        m = float(rng.uniform(0.0, 1.0))
        worst = max(worst, abs(margin_loss(e, m) - brute_force_margin(e, m)))
    _report("3 margin-loss oracle", worst <= 1e-12,
            f"1000 matrices up to 6x6, worst |diff|={worst:.2e}")


def _metric_fixtures():
    fixtures = []
    # perfect two tracks over three frames
    preds, truth = [], {}
    for f in range(3):
        for tid in range(2):
            box = BoundingBox(30 * tid + 10 + f, 10, 8, 8)
            preds.append(row(f, tid, tid, box))
            truth.setdefault(f, []).append(gt(tid, tid, box))
    fixtures.append(("perfect", preds, truth))
    # identity switch halfway plus one wrong class
    preds, truth = [], {}
    for f in range(4):
        box = BoundingBox(10 + f, 10, 8, 8)
        preds.append(row(f, 100 + (f // 2), 1 if f != 3 else 0, box))
        truth.setdefault(f, []).append(gt(7, 1, box))
    fixtures.append(("split", preds, truth))
    # crossed preferences needing optimal matching
    g1 = gt(0, 1, BoundingBox(0.0, 0.0, 10, 10))
    g2 = gt(1, 2, BoundingBox(2.9, 0.0, 10, 10))
    p1 = row(0, 10, 1, BoundingBox(0.4, 0.0, 10, 10))
    p2 = row(0, 11, 2, BoundingBox(-1.1, 0.0, 10, 10))
    fixtures.append(("crossed", [p1, p2], {0: [g1, g2]}))
    # random small instances: up to 4 tracks, up to 6 frames
    rng = np.random.default_rng(5150)
    for case in range(6):
        preds, truth = [], {}
        for f in range(int(rng.integers(2, 7))):
            for tid in range(int(rng.integers(0, 5))):
                truth.setdefault(f, []).append(
                    gt(tid, tid % 2, BoundingBox(float(rng.uniform(0, 40)),
                                                 float(rng.uniform(0, 40)), 10, 10)))
            for tid in range(int(rng.integers(0, 5))):
                preds.append(row(f, tid, tid % 2,
                                 BoundingBox(float(rng.uniform(0, 40)),
                                             float(rng.uniform(0, 40)), 10, 10)))
        fixtures.append((f"random{case}", preds, truth))
    return fixtures


def test_criterion_04_metric_oracle():
    worst = 0.0
    for name, preds, truth in _metric_fixtures():
        ours = evaluate_tracking(preds, truth)
        ledger = brute_force_ledger(preds, truth)
        expected = (loc_a(ledger), cls_a(ledger), brute_force_assoc(ledger))
        expected_teta = teta(*expected)
        for got, want in zip((ours.loc_a, ours.cls_a, ours.assoc_a, ours.teta),
                             (*expected, expected_teta)):
            worst = max(worst, abs(got - want))
            assert abs(got - want) <= 1e-12, (name, got, want)
    perfect = evaluate_tracking(*(_metric_fixtures()[0][1:]))
    ok = worst <= 1e-12 and perfect.teta == perfect.loc_a == 1.0
    _report("4 metric oracle", ok,
            f"{len(_metric_fixtures())} fixtures, worst |diff|={worst:.2e}, "
            f"perfect scores 1.0")


def test_criterion_05_piecewise_weighting():
    got = tuple(piecewise_reweight(v) for v in (0.25, 0.45, 0.70))
    ok = got == (0.0, 0.45, 1.0)
    _report("5 piecewise weighting", ok, f"0.25->{got[0]}, 0.45->{got[1]}, 0.70->{got[2]}")


def test_criterion_06_attention_symmetry():
    rng = np.random.default_rng(8)
    ok = True
    for m in (1, 3):
        pos = rng.normal(size=(m, 6))
        pos /= np.linalg.norm(pos, axis=1, keepdims=True)
        prompts = PromptPairSet(positives=pos, negatives=pos.copy())
        f = rng.normal(size=6)
        ok &= attention_weight(f, prompts, 0.007) == 0.5
    _report("6 attention symmetry", ok, "equal cosines give exactly 0.5")


def test_criterion_07_end_to_end_direction():
    start = time.perf_counter()
    variants = [AblationVariant(name="full"),
                AblationVariant(name="untrained", train=False),
                AblationVariant(name="wo_inter", alpha=0.0),
                AblationVariant(name="wo_intra", use_intra=False)]
    plan = SamplingPlan(segment_length=24, sub_min=2, sub_max=4,
                        frames_per_sequence=12, seed=0)
    config = ConsistencyConfig()
    base = standard_scenario_config("easy")
    details = []
    ok = True
    for seed in (11, 12, 13):
        scenario = generate_scenario(
            ScenarioConfig.from_dict({**base.to_dict(), "seed": seed}))
        rows = run_ablation(scenario, variants, plan, config, steps=150)
        scores = {r.name: r.report.assoc_a for r in rows}
        gain = scores["full"] - scores["untrained"]
        ok &= gain >= 0.10
        ok &= scores["full"] >= scores["wo_inter"]
        ok &= scores["full"] >= scores["wo_intra"]
        details.append(f"seed {seed}: gain {gain:+.3f}, full {scores['full']:.3f}, "
                       f"wo_inter {scores['wo_inter']:.3f}, wo_intra {scores['wo_intra']:.3f}")
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 300.0
    _report("7 end-to-end direction", ok, "; ".join(details) + f"; {elapsed:.0f}s")


def test_criterion_08_occlusion_sensitivity():
    scenario = generate_scenario(standard_scenario_config("occluded"))
    degraded, clean = [], []
    for frame in scenario.video.frames:
        for det, flag in zip(frame.detections, scenario.degraded[frame.frame_index]):
            if flag is None:
                continue
            w = attention_weight(det.text_embedding, scenario.prompt_bank,
                                 scenario.class_bank.temperature)
            (degraded if flag else clean).append(w)
    gap = float(np.mean(clean) - np.mean(degraded))
    ok = gap >= 0.2
    _report("8 occlusion sensitivity", ok,
            f"mean clean {np.mean(clean):.3f} vs degraded {np.mean(degraded):.3f}, "
            f"gap {gap:.3f}")


def test_criterion_09_cli_determinism(tmp_path):
    cfg = tmp_path / "scenario.json"
    cfg.write_text(json.dumps({"num_frames": 24, "num_objects": 6, "seed": 7}))
    train_cfg = tmp_path / "train.json"
    train_cfg.write_text(json.dumps({
        "plan": {"segment_length": 12, "sub_min": 2, "sub_max": 4,
                 "frames_per_sequence": 10, "seed": 0},
        "steps": 10,
    }))
    vocab = tmp_path / "vocab.json"
    vocab.write_text(json.dumps({"base": [0, 1, 2], "novel": [3]}))

    outputs = {}
    for run in ("a", "b"):
        root = tmp_path / run
        assert main(["generate", "--config", str(cfg), "--out", str(root / "bundle")]) == 0
        assert main(["train", "--bundle", str(root / "bundle"),
                     "--out", str(root / "run"), "--config", str(train_cfg)]) == 0
        assert main(["track", "--bundle", str(root / "bundle"),
                     "--checkpoint", str(root / "run" / "head_checkpoint.json"),
                     "--out", str(root / "tracks.csv")]) == 0
        assert main(["evaluate", "--tracks", str(root / "tracks.csv"),
                     "--groundtruth", str(root / "bundle" / "groundtruth.jsonl"),
                     "--vocabulary", str(vocab), "--out", str(root / "eval")]) == 0
        files = sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())
        outputs[run] = {str(f): (root / f).read_bytes() for f in files}
    same_names = set(outputs["a"]) == set(outputs["b"])
    diffs = [name for name in outputs["a"]
             if same_names and outputs["a"][name] != outputs["b"][name]]
    ok = same_names and not diffs
    _report("9 determinism", ok,
            f"{len(outputs['a'])} files byte-identical" if ok else f"differs: {diffs}")


def test_criterion_10_tracker_lifecycle():
    # part 1: unmatched for memory+1 frames is dropped exactly then
    state = TrackerState(config=TrackerConfig(memory_frames=10))
    emb = np.array([[1.0, 0.0, 0.0, 0.0]])
    associate_frame(state, FrameObservations(
        0, [make_detection(BoundingBox(5, 5, 4, 4), conf=0.9)]), emb)
    dropped_at = None
    for t in range(1, 15):
        result = associate_frame(state, FrameObservations(t, []), np.zeros((0, 4)))
        if result.dropped_tracks:
            dropped_at = t
            break
    part1 = dropped_at == 11

    # part 2: a 10-frame gap inside the memory window keeps the identity
    from test_tracker import _sequence_from_tracks
    emb_vec = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    boxes = [BoundingBox(10, 10, 5, 5) if not 3 <= t < 13 else None for t in range(16)]
    video = _sequence_from_tracks([(emb_vec, boxes)], 16)
    rows = track_sequence(video, lambda x: x / np.linalg.norm(x, axis=1, keepdims=True))
    ids = {r.track_id for r in rows}
    part2 = ids == {0} and len(rows) == 6
    ok = part1 and part2
    _report("10 tracker lifecycle", ok,
            f"dropped at frame {dropped_at} (memory 10); "
            f"10-frame gap kept ids {sorted(ids)}")
