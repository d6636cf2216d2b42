import json
import shutil

import pytest

from seldkit import cli, io
from seldkit.cli import ConfigError, PipelineConfig, main
from seldkit.features import FeatureStats, extract_features
from seldkit.labels import HEADER, read_label_file, write_label_file
from seldkit.metrics import jitter_predictions

SMALL = {
    "roles": {"train": [3], "test": [1]},
    "scenes_per_split": 3,
    "duration": 6.0,
    "rir_len": 2048,
    "events_per_class": 1,
    "trajectory_elevations": [0],
}


def write_config(path, **overrides):
    raw = dict(SMALL, **overrides)
    path.write_text(json.dumps(raw))
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfg = write_config(root / "cfg.json", output_root=str(root / "out"))
    assert main(["synth", "--config", str(cfg)]) == 0
    return root


# --- config ---------------------------------------------------------------------------


def test_default_roles():
    cfg = PipelineConfig.from_dict({}, env={})
    roles = {sid: s["role"] for sid, s in cfg.splits.items()}
    assert roles == {3: "train", 4: "train", 5: "train", 6: "train", 2: "val", 1: "test"}
    assert cfg.scenes_per_split == 10


def test_overlapping_roles_rejected(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"roles": {"train": [1, 2], "test": [2]}}, env={})
    out = tmp_path / "out"
    cfg = write_config(tmp_path / "c.json", roles={"train": [1], "val": [1]}, output_root=str(out))
    assert main(["synth", "--config", str(cfg)]) == 1
    assert not out.exists()


@pytest.mark.parametrize("bad", [
    {"snr_range": [3, 30]}, {"polyphony": [3]}, {"formats": ["binaural"]},
    {"scenes_per_split": 0}, {"mystery": 1}, {"roles": {"holdout": [1]}},
])
def test_invalid_config_values(bad):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(bad, env={})


def test_env_overrides_output_root(tmp_path):
    cfg = PipelineConfig.from_dict({"output_root": "a"}, env={cli.OUTPUT_ENV: str(tmp_path)})
    assert cfg.output_root == tmp_path


def test_extra_splits_supported():
    cfg = PipelineConfig.from_dict({"roles": {"train": [3], "test": [7, 8]}}, env={})
    assert sorted(cfg.splits) == [3, 7, 8]


def test_malformed_json_is_user_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["synth", "--config", str(bad), "--output-root", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err


# --- synth ----------------------------------------------------------------------------


def test_synth_counts_and_manifest(dataset):
    out = dataset / "out"
    for fmt in ("foa", "mic"):
        assert len(list((out / f"{fmt}_dev").glob("*.wav"))) == 6
    assert len(list((out / "metadata_dev").glob("*.csv"))) == 6
    rows = io.read_manifest(out / "manifest.tsv")
    assert len(rows) == 18
    for rel, digest, size in rows:
        assert io.sha256_file(out / rel) == digest
        assert (out / rel).stat().st_size == size


def test_synth_rerun_identical_manifest(dataset, tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    assert main(["synth", "--config", str(cfg), "--output-root", str(tmp_path / "out")]) == 0
    a = (dataset / "out" / "manifest.tsv").read_bytes()
    b = (tmp_path / "out" / "manifest.tsv").read_bytes()
    assert a == b


def test_formats_share_metadata(dataset):
    out = dataset / "out"
    stems = {p.stem for p in (out / "foa_dev").glob("*.wav")}
    assert stems == {p.stem for p in (out / "mic_dev").glob("*.wav")}
    assert stems == {p.stem for p in (out / "metadata_dev").glob("*.csv")}


def test_synth_parallel_matches_serial(dataset, tmp_path):
    cfg = write_config(tmp_path / "cfg.json", output_root=str(tmp_path / "out"))
    assert main(["synth", "--config", str(cfg), "--jobs", "2"]) == 0
    assert (dataset / "out" / "manifest.tsv").read_bytes() == \
        (tmp_path / "out" / "manifest.tsv").read_bytes()


# --- features -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def featurized(dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("feat")
    shutil.copytree(dataset / "out", root / "out")
    assert main(["features", "--config", str(dataset / "cfg.json"),
                 "--output-root", str(root / "out")]) == 0
    return root / "out"


def test_feature_file_shapes(featurized):
    for fmt, channels in (("foa", 7), ("mic", 10)):
        files = sorted((featurized / f"feat_{fmt}").glob("*.feat"))
        assert len(files) == 6
        for path in files:
            tensor, _ = io.load_feature_file(path)
            assert tensor.shape[0] == channels and tensor.shape[2] == 64


def test_stats_from_train_split_only(featurized, tmp_path):
    for fmt in ("foa", "mic"):
        train = sorted((featurized / f"{fmt}_dev").glob("fold3_*.wav"))
        assert len(train) == 3
        stats = FeatureStats.fit(extract_features(io.read_wav(p)[1], fmt) for p in train)
        io.save_stats(tmp_path / f"{fmt}.bin", stats, fmt)
        expected = (tmp_path / f"{fmt}.bin").read_bytes()
        assert (featurized / f"feat_{fmt}" / "stats.bin").read_bytes() == expected


def test_features_manifest_covers_feature_files(featurized):
    rels = {r[0] for r in io.read_manifest(featurized / "manifest.tsv")}
    assert "feat_foa/stats.bin" in rels and "feat_mic/stats.bin" in rels
    assert len(rels) == 18 + 2 * 7


def test_features_on_empty_dataset_fails(tmp_path, capsys):
    assert main(["features", "--output-root", str(tmp_path)]) == 1
    assert "no synthesized scenes" in capsys.readouterr().err


# --- eval -----------------------------------------------------------------------------


def run_eval(ref, pred, tmp_path, *extra):
    report_path = tmp_path / "report.json"
    code = main(["eval", str(ref), str(pred), "--report", str(report_path), *extra])
    return code, (json.loads(report_path.read_text()) if code == 0 else None)


def test_eval_identity_is_ideal(dataset, tmp_path, capsys):
    meta = dataset / "out" / "metadata_dev"
    code, report = run_eval(meta, meta, tmp_path)
    assert code == 0
    overall = report["groups"]["overall"]
    assert overall["er_20"] == 0.0 and overall["f_20"] == 1.0
    assert overall["le_cd"] == 0.0 and overall["lr_cd"] == 1.0
    assert report["files"] == 6
    assert {"overlap1", "overlap2", "split1", "split3"} <= set(report["groups"])
    line = next(ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("overall"))
    assert line.split()[1:5] == ["0.00", "100.0", "0.0", "100.0"]


def test_eval_empty_predictions(dataset, tmp_path):
    meta = dataset / "out" / "metadata_dev"
    pred = tmp_path / "pred"
    pred.mkdir()
    for p in meta.glob("*.csv"):
        (pred / p.name).write_text(",".join(HEADER) + "\n")
    code, report = run_eval(meta, pred, tmp_path)
    overall = report["groups"]["overall"]
    assert code == 0 and overall["er_20"] == 1.0 and overall["f_20"] == 0.0


def test_eval_jitter_fixture(dataset, tmp_path):
    meta = dataset / "out" / "metadata_dev"
    pred = tmp_path / "pred"
    pred.mkdir()
    for i, p in enumerate(sorted(meta.glob("*.csv"))):
        write_label_file(jitter_predictions(read_label_file(p), 15.0, seed=i), pred / p.name)
    code, report = run_eval(meta, pred, tmp_path)
    overall = report["groups"]["overall"]
    assert code == 0
    assert 10.0 <= overall["le_cd"] <= 20.0
    assert overall["lr_cd"] == 1.0


def test_eval_stem_mismatch(dataset, tmp_path, capsys):
    meta = dataset / "out" / "metadata_dev"
    pred = tmp_path / "pred"
    shutil.copytree(meta, pred)
    victim = sorted(pred.glob("*.csv"))[0]
    victim.unlink()
    code, _ = run_eval(meta, pred, tmp_path)
    assert code == 1
    assert f"missing prediction: {victim.stem}" in capsys.readouterr().err
    code, report = run_eval(meta, pred, tmp_path, "--allow-partial")
    assert code == 0
    assert report["files"] == 5 and report["missing_predictions"] == [victim.stem]


def test_eval_writes_report_under_output_root(dataset, tmp_path):
    meta = dataset / "out" / "metadata_dev"
    assert main(["eval", str(meta), str(meta), "--output-root", str(tmp_path)]) == 0
    assert (tmp_path / "reports" / "eval_report.json").is_file()
    rels = [r[0] for r in io.read_manifest(tmp_path / "manifest.tsv")]
    assert rels == ["reports/eval_report.json"]


def test_eval_missing_reference_dir(tmp_path):
    assert main(["eval", str(tmp_path / "none"), str(tmp_path)]) == 1


def test_internal_error_exit_code(monkeypatch, tmp_path):
    def boom(*a, **k):
        raise RuntimeError("unexpected")

    monkeypatch.setattr(cli, "cmd_eval", boom)
    assert main(["eval", str(tmp_path), str(tmp_path)]) == 2


def test_bad_arguments_exit_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_simulate_rirs_writes_sets(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", output_root=str(tmp_path / "out"))
    assert main(["simulate-rirs", "--config", str(cfg), "--room", "1", "--format", "foa"]) == 0
    written = list((tmp_path / "out" / "rirs" / "foa").rglob("*"))
    assert any(p.is_file() for p in written)
