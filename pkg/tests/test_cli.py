import json
import subprocess
import sys

import pytest

from stomaforge.coco import Dataset, ImageRecord, parse_dataset, serialize_dataset, serialize_predictions

from pipeline import run
from synth import CATEGORIES, jitter_predictions, make_frames


@pytest.fixture
def frame_file(tmp_path):
    d = make_frames(2, seed=1)
    path = tmp_path / "frames.json"
    path.write_text(serialize_dataset(d))
    return path


def last_json(err):
    return json.loads(err.strip().splitlines()[-1])


def test_help_and_usage():
    assert run("--help")[0] == 0
    code, _, err = run()
    assert code == 2 and last_json(err)["error"] == "UsageError"
    code, _, err = run("tile", "--in", "x.json")
    assert code == 2


def test_validate_ok(frame_file, tmp_path):
    code, out, err = run("validate", "--in", frame_file, "--report", tmp_path / "r.json")
    assert code == 0 and out == ""
    assert err.startswith("valid: 2 images")
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["valid"] is True and report["stomaforge"]["config"]["patch"] == 341


def test_validate_failure_exit_3(tmp_path):
    raw = json.loads(serialize_dataset(make_frames(1, seed=1)))
    raw["annotations"][0]["area"] = 0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw))
    code, _, err = run("validate", "--in", path)
    assert code == 3
    assert last_json(err)["rules"] == ["NonPositiveArea"]


def test_malformed_json_exit_3(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{oops")
    code, _, err = run("validate", "--in", path)
    assert code == 3 and last_json(err)["error"] == "MalformedJson"


def test_missing_file_exit_3(tmp_path):
    code, _, err = run("stats", "--in", tmp_path / "none.json")
    assert code == 3 and last_json(err)["error"] == "FileNotReadable"


def test_tile_full_frame(tmp_path):
    d = Dataset([ImageRecord(1, "QL12_1_L10_abaxial_tip.jpg", 2592, 1944)], (), CATEGORIES)
    src = tmp_path / "one.json"
    src.write_text(serialize_dataset(d))
    code, _, err = run("tile", "--in", src, "--out", tmp_path / "drop", "--mode", "drop-empty")
    assert code == 0 and "48 windows, 0 patches kept" in err
    assert json.loads((tmp_path / "drop/manifest.json").read_text()) == []
    code, _, _ = run("tile", "--in", src, "--out", tmp_path / "keep", "--mode", "keep-empty")
    rows = json.loads((tmp_path / "keep/manifest.json").read_text())
    assert code == 0 and len(rows) == 48
    sidecar = json.loads((tmp_path / "keep/manifest.config.json").read_text())
    assert sidecar["config"]["empty_patch_mode"] == "keep_empty"


def test_config_merge_flags_win(frame_file, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"patch": 400, "stride": 390, "empty_patch_mode": "keep_empty"}))
    code, _, _ = run("tile", "--in", frame_file, "--out", tmp_path / "t", "--config", cfg, "--stride", 300)
    assert code == 0
    echoed = parse_dataset((tmp_path / "t/patches.json").read_text()).extra["stomaforge"]["config"]
    assert (echoed["patch"], echoed["stride"], echoed["empty_patch_mode"]) == (400, 300, "keep_empty")
    assert all(im.width == 400 for im in parse_dataset((tmp_path / "t/patches.json").read_text()).images)


def test_config_unknown_key(frame_file, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"patches": 1}))
    code, _, err = run("validate", "--in", frame_file, "--config", cfg)
    assert code == 3 and "unknown config keys" in last_json(err)["message"]


def test_jobs_env(frame_file, tmp_path, monkeypatch):
    monkeypatch.setenv("STOMAFORGE_JOBS", "two")
    assert run("validate", "--in", frame_file)[0] == 3
    monkeypatch.setenv("STOMAFORGE_JOBS", "2")
    assert run("tile", "--in", frame_file, "--out", tmp_path / "t")[0] == 0


def test_split_ratios(frame_file, tmp_path):
    code, _, err = run("split", "--in", frame_file, "--out", tmp_path / "s", "--ratios", "0.5,0.5,0", "--seed", 3)
    assert code == 0 and err.startswith("split: train=1 images")
    meta = parse_dataset((tmp_path / "s/train.json").read_text()).extra["stomaforge"]["config"]["split"]
    assert meta == {"ratios": [0.5, 0.5, 0.0], "seed": 3, "generator": "numpy.PCG64"}


def test_split_requires_seed(frame_file, tmp_path):
    code, _, err = run("split", "--in", frame_file, "--out", tmp_path / "s", "--ratios", "0.5,0.5,0")
    assert code == 3


def test_split_overlap(frame_file, tmp_path):
    d = parse_dataset(frame_file.read_text())
    names = [im.file_name for im in d.images]
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"train": names, "val": names[:1], "test": []}))
    code, _, err = run("split", "--in", frame_file, "--out", tmp_path / "s", "--spec", spec)
    assert code == 3 and last_json(err)["error"] == "OverlappingSplits"


def pseudo_inputs(tmp_path):
    patches = make_frames(3, seed=5, width=341, height=341, stomata=(1, 4))
    (tmp_path / "u.json").write_text(serialize_dataset(patches))
    (tmp_path / "p.json").write_text(serialize_predictions(jitter_predictions(patches, seed=5)))
    return patches


def test_pseudo_filter_and_merge(tmp_path):
    patches = pseudo_inputs(tmp_path)
    code, _, err = run("pseudo-filter", "--preds", tmp_path / "p.json", "--patches", tmp_path / "u.json",
                       "--thresholds", "default", "--out", tmp_path / "pl.json")
    assert code == 0 and "kept" in err and "dropped" in err
    pl = parse_dataset((tmp_path / "pl.json").read_text())
    assert len(pl.images) == len(patches.images)
    assert all(a.provenance == "pseudo" for a in pl.annotations)
    code, _, err = run("merge", "--human", tmp_path / "u.json", "--pseudo", tmp_path / "pl.json",
                       "--out", tmp_path / "m.json")
    merged = parse_dataset((tmp_path / "m.json").read_text())
    assert code == 0 and len(merged.images) == 2 * len(patches.images)
    assert len({im.id for im in merged.images}) == len(merged.images)


def test_pseudo_filter_threshold_file(tmp_path):
    pseudo_inputs(tmp_path)
    thr = tmp_path / "thr.json"
    thr.write_text(json.dumps({"complex area": 1.0, "guard cell area": 1.0, "pore area": 1.0}))
    code, _, err = run("pseudo-filter", "--preds", tmp_path / "p.json", "--patches", tmp_path / "u.json",
                       "--thresholds", thr, "--out", tmp_path / "pl.json")
    assert code == 0 and "kept 0" in err
    thr.write_text(json.dumps({"complex area": 0.7}))
    code, _, err = run("pseudo-filter", "--preds", tmp_path / "p.json", "--patches", tmp_path / "u.json",
                       "--thresholds", thr, "--out", tmp_path / "pl.json")
    assert code == 3 and last_json(err)["error"] == "MissingThreshold"


def test_pseudo_filter_bad_score(tmp_path):
    pseudo_inputs(tmp_path)
    preds = json.loads((tmp_path / "p.json").read_text())
    preds[0]["score"] = 2
    (tmp_path / "p.json").write_text(json.dumps(preds))
    code, _, err = run("pseudo-filter", "--preds", tmp_path / "p.json", "--patches", tmp_path / "u.json",
                       "--out", tmp_path / "pl.json")
    assert code == 3 and last_json(err)["error"] == "ScoreOutOfRange"


def test_eval_instance_table(frame_file, tmp_path):
    d = parse_dataset(frame_file.read_text())
    preds = tmp_path / "preds.json"
    preds.write_text(serialize_predictions(jitter_predictions(d, seed=0, miss=0, false_pos=0, shift=0)))
    code, out, err = run("eval-instance", "--gt", frame_file, "--preds", preds, "--out", tmp_path / "e.json")
    assert code == 0
    header, values = out.strip().splitlines()
    for col in ("Overall AP", "Pore area AP50", "Guard cell AP", "Complex area AP50"):
        assert col in header
    assert values.split()[0] == "100.00"
    assert json.loads((tmp_path / "e.json").read_text())["AP"] == 1.0


def test_eval_semantic_from_dataset(frame_file, tmp_path):
    code, out, err = run("eval-semantic", "--gt", frame_file, "--pred", frame_file)
    assert code == 0 and "mIoU 100.00" in err


def test_stats_meta(frame_file, tmp_path):
    code, out, _ = run("stats", "--in", frame_file, "--meta", "--csv", tmp_path / "s.csv")
    assert code == 0
    payload = json.loads(out)
    assert payload["metadata"]["genotype"] == {"QL12": 1, "TX7000": 1}
    assert (tmp_path / "s.csv").read_text().startswith("class,count,min,q25,median,q75,max")


def test_stats_strict_filename(tmp_path):
    d = Dataset([ImageRecord(1, "notes.txt", 10, 10)], (), CATEGORIES)
    (tmp_path / "d.json").write_text(serialize_dataset(d))
    assert run("stats", "--in", tmp_path / "d.json", "--meta")[0] == 0
    code, _, err = run("stats", "--in", tmp_path / "d.json", "--meta", "--strict")
    assert code == 3 and last_json(err)["error"] == "UnparseableFilename"


def test_stitch_dangling_prediction(tmp_path):
    frames = make_frames(1, seed=2, stomata=(1, 2))
    (tmp_path / "f.json").write_text(serialize_dataset(frames))
    assert run("tile", "--in", tmp_path / "f.json", "--out", tmp_path / "t", "--mode", "keep-empty")[0] == 0
    (tmp_path / "m.json").write_text("[]")
    (tmp_path / "p.json").write_text(json.dumps([{"image_id": 1, "category_id": 1, "score": 0.9,
                                                  "segmentation": [[1, 1, 5, 1, 5, 5]]}]))
    code, _, err = run("stitch", "--preds", tmp_path / "p.json", "--patches", tmp_path / "t/patches.json",
                       "--manifest", tmp_path / "m.json", "--frames", tmp_path / "f.json", "--out", tmp_path / "o.json")
    assert code == 4 and last_json(err)["error"] == "DanglingReference"


def test_console_script_entry(frame_file):
    proc = subprocess.run([sys.executable, "-m", "stomaforge.cli", "validate", "--in", str(frame_file)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == ""
