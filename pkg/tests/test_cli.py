import json
import subprocess
import sys

import numpy as np
import pytest

from ovtracker import io as ovio
from ovtracker.cli import main
from ovtracker.consistency import AssociationHead

SMALL_CONFIG = {
    "num_frames": 24,
    "num_objects": 6,
    "num_base_classes": 2,
    "num_novel_classes": 1,
    "seed": 7,
    "detector": {"miss_rate": 0.0, "false_positive_rate": 0.0, "confidence_noise": 0.05},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "scenario.json"
    cfg.write_text(json.dumps(SMALL_CONFIG))
    assert main(["generate", "--config", str(cfg), "--out", str(root / "bundle")]) == 0
    train_cfg = root / "train.json"
    train_cfg.write_text(json.dumps({
        "plan": {"segment_length": 12, "sub_min": 2, "sub_max": 4,
                 "frames_per_sequence": 10, "seed": 0},
        "steps": 5,
    }))
    assert main(["train", "--bundle", str(root / "bundle"), "--out", str(root / "run"),
                 "--config", str(train_cfg)]) == 0
    assert main(["track", "--bundle", str(root / "bundle"),
                 "--checkpoint", str(root / "run" / "head_checkpoint.json"),
                 "--out", str(root / "tracks.csv")]) == 0
    vocab = root / "vocab.json"
    vocab.write_text(json.dumps({"base": [0, 1], "novel": [2]}))
    assert main(["evaluate", "--tracks", str(root / "tracks.csv"),
                 "--groundtruth", str(root / "bundle" / "groundtruth.jsonl"),
                 "--vocabulary", str(vocab), "--out", str(root / "eval")]) == 0
    return root


class TestGenerate:
    def test_bundle_has_five_files(self, workdir):
        files = sorted(p.name for p in (workdir / "bundle").iterdir())
        assert files == sorted(ovio.BUNDLE_FILES)

    def test_identical_reruns_byte_identical(self, workdir, tmp_path):
        cfg = workdir / "scenario.json"
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "b2")]) == 0
        for name in ovio.BUNDLE_FILES:
            assert (tmp_path / "b2" / name).read_bytes() == \
                (workdir / "bundle" / name).read_bytes()

    def test_invalid_rate_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({**SMALL_CONFIG,
                                   "detector": {"miss_rate": 1.5}}))
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2

    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({**SMALL_CONFIG, "wibble": 3}))
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2

    def test_preset_and_config_are_exclusive(self, tmp_path):
        assert main(["generate", "--out", str(tmp_path / "x")]) == 2

    def test_seed_override_changes_output(self, workdir, tmp_path):
        cfg = workdir / "scenario.json"
        assert main(["generate", "--config", str(cfg), "--seed", "99",
                     "--out", str(tmp_path / "b3")]) == 0
        assert (tmp_path / "b3" / "detections.jsonl").read_bytes() != \
            (workdir / "bundle" / "detections.jsonl").read_bytes()


class TestTrain:
    def test_outputs_exist(self, workdir):
        for name in ("head_checkpoint.json", "training_log.csv", "training_curve.png",
                     "train_config.json"):
            assert (workdir / "run" / name).exists()

    def test_zero_steps_checkpoint_equals_initialization(self, workdir, tmp_path):
        assert main(["train", "--bundle", str(workdir / "bundle"),
                     "--out", str(tmp_path / "r0"), "--steps", "0"]) == 0
        head, steps, _ = ovio.load_checkpoint(tmp_path / "r0" / "head_checkpoint.json")
        init = AssociationHead.initialize(32, 32, seed=0, learning_rate=1.0)
        np.testing.assert_array_equal(head.projection, init.projection)
        assert steps == 0

    def test_missing_bundle_exits_2(self, tmp_path):
        assert main(["train", "--bundle", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "r")]) == 2

    def test_resume_continues_steps(self, workdir, tmp_path):
        ckpt = workdir / "run" / "head_checkpoint.json"
        assert main(["train", "--bundle", str(workdir / "bundle"),
                     "--out", str(tmp_path / "r2"), "--steps", "3",
                     "--resume", str(ckpt)]) == 0
        _, steps, _ = ovio.load_checkpoint(tmp_path / "r2" / "head_checkpoint.json")
        assert steps == 8
        log = (tmp_path / "r2" / "training_log.csv").read_text().strip().splitlines()
        assert log[1].startswith("5,")


class TestTrack:
    def test_deterministic_bytes(self, workdir, tmp_path):
        assert main(["track", "--bundle", str(workdir / "bundle"),
                     "--checkpoint", str(workdir / "run" / "head_checkpoint.json"),
                     "--out", str(tmp_path / "t2.csv")]) == 0
        assert (tmp_path / "t2.csv").read_bytes() == (workdir / "tracks.csv").read_bytes()

    def test_config_echo_written(self, workdir):
        assert (workdir / "tracks_config.json").exists()

    def test_empty_detections_gives_header_only(self, workdir, tmp_path):
        bundle = tmp_path / "empty_bundle"
        bundle.mkdir()
        for name in ovio.BUNDLE_FILES:
            data = (workdir / "bundle" / name).read_bytes()
            (bundle / name).write_bytes(b"" if name == "detections.jsonl" else data)
        assert main(["track", "--bundle", str(bundle),
                     "--checkpoint", str(workdir / "run" / "head_checkpoint.json"),
                     "--out", str(tmp_path / "t.csv")]) == 0
        assert (tmp_path / "t.csv").read_text().strip() == \
            "frame,track_id,class_id,x,y,w,h,conf"

    def test_dimension_mismatch_exits_2(self, workdir, tmp_path):
        head = AssociationHead.initialize(8, 12, seed=0)
        from ovtracker.consistency import ConsistencyConfig
        ovio.save_checkpoint(tmp_path / "bad.json", head, 0, ConsistencyConfig())
        assert main(["track", "--bundle", str(workdir / "bundle"),
                     "--checkpoint", str(tmp_path / "bad.json"),
                     "--out", str(tmp_path / "t.csv")]) == 2


class TestEvaluate:
    def test_outputs_exist(self, workdir):
        for name in ("report.json", "report.txt", "metrics.png", "eval_config.json"):
            assert (workdir / "eval" / name).exists()
        report = json.loads((workdir / "eval" / "report.json").read_text())
        assert set(report) == {"base", "novel", "all"}
        for split in report.values():
            assert set(split) == {"teta", "loca", "assoca", "clsa"}

    def test_perfect_tracks_score_one(self, workdir, tmp_path):
        gts = ovio.load_groundtruth_jsonl(workdir / "bundle" / "groundtruth.jsonl")
        from ovtracker.tracker import TrackRow
        rows = [TrackRow(frame=f, track_id=g.track_id, class_id=g.class_id,
                         box=g.box, confidence=1.0)
                for f, boxes in gts.items() for g in boxes]
        ovio.write_track_csv(tmp_path / "perfect.csv", rows)
        vocab = tmp_path / "vocab.json"
        vocab.write_text(json.dumps({"base": [0, 1], "novel": [2]}))
        assert main(["evaluate", "--tracks", str(tmp_path / "perfect.csv"),
                     "--groundtruth", str(workdir / "bundle" / "groundtruth.jsonl"),
                     "--vocabulary", str(vocab), "--out", str(tmp_path / "ev")]) == 0
        report = json.loads((tmp_path / "ev" / "report.json").read_text())
        for split in ("base", "novel", "all"):
            for metric, value in report[split].items():
                assert value == 1.0, (split, metric)

    def test_empty_tracks_loca_zero(self, workdir, tmp_path):
        ovio.write_track_csv(tmp_path / "none.csv", [])
        vocab = tmp_path / "vocab.json"
        vocab.write_text(json.dumps({"base": [0, 1], "novel": [2]}))
        assert main(["evaluate", "--tracks", str(tmp_path / "none.csv"),
                     "--groundtruth", str(workdir / "bundle" / "groundtruth.jsonl"),
                     "--vocabulary", str(vocab), "--out", str(tmp_path / "ev0")]) == 0
        report = json.loads((tmp_path / "ev0" / "report.json").read_text())
        assert report["all"]["loca"] == 0.0

    def test_malformed_rows_exit_2(self, workdir, tmp_path, capsys):
        (tmp_path / "broken.csv").write_text(
            "frame,track_id,class_id,x,y,w,h,conf\nbad,row\n")
        vocab = tmp_path / "vocab.json"
        vocab.write_text(json.dumps({"base": [0], "novel": []}))
        code = main(["evaluate", "--tracks", str(tmp_path / "broken.csv"),
                     "--groundtruth", str(workdir / "bundle" / "groundtruth.jsonl"),
                     "--vocabulary", str(vocab), "--out", str(tmp_path / "ev2")])
        assert code == 2
        assert "line(s) [2]" in capsys.readouterr().err


class TestAblate:
    def test_two_variants_table(self, workdir, tmp_path):
        variants = tmp_path / "variants.json"
        variants.write_text(json.dumps({
            "variants": [{"name": "full"}, {"name": "wo_self_supervised", "train": False}],
            "plan": {"segment_length": 12, "sub_min": 2, "sub_max": 4,
                     "frames_per_sequence": 10, "seed": 0},
            "steps": 3,
        }))
        out1, out2 = tmp_path / "ab1", tmp_path / "ab2"
        for out in (out1, out2):
            assert main(["ablate", "--bundle", str(workdir / "bundle"),
                         "--variants", str(variants), "--out", str(out)]) == 0
        table = (out1 / "ablation.csv").read_text().splitlines()
        assert table[0] == "variant,teta,loca,assoca,clsa"
        assert table[1].startswith("full,") and table[2].startswith("wo_self_supervised,")
        assert (out1 / "ablation.csv").read_bytes() == (out2 / "ablation.csv").read_bytes()
        assert (out1 / "ablation.png").exists() and (out1 / "ablation.txt").exists()

    def test_variants_must_include_full(self, workdir, tmp_path):
        variants = tmp_path / "v.json"
        variants.write_text(json.dumps({"variants": [{"name": "only_one"}]}))
        assert main(["ablate", "--bundle", str(workdir / "bundle"),
                     "--variants", str(variants), "--out", str(tmp_path / "ab")]) == 2


class TestCliBasics:
    @pytest.mark.parametrize("cmd", ["generate", "train", "track", "evaluate", "ablate"])
    def test_help_exits_zero(self, cmd):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["generate", "--frobnicate"])
        assert exc.value.code == 2

    def test_console_script_help(self):
        proc = subprocess.run([sys.executable, "-m", "ovtracker.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "generate" in proc.stdout
