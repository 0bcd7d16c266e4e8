import json

import pytest

from fogbridge.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, run
from fogbridge.experiment import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    comparison_table,
    parse_config,
    preset_configs,
)

TINY = {
    "schema": 1,
    "seed": 0,
    "dataset": {"source_train": 8, "source_test": 3, "target_train": {"dense_fog": 4, "snow": 4}, "target_test": 3},
    "detector": {"widths": [4, 8, 8, 8], "stem_width": 4, "head_widths": [4, 4, 4]},
    "train": {"batch_size": 4, "warmup_steps": 1, "ssl_steps": 1, "targets": ["dense_fog"]},
}


def write_config(path, cfg=TINY):
    path.write_text(json.dumps(cfg))
    return str(path)


def flat(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and k != "target_train":
            out.update(flat(v, key + "."))
        else:
            out[key] = v
    return out


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = ExperimentConfig()
        assert parse_config(cfg.to_dict()) == cfg

    def test_hash_tracks_content(self):
        a = parse_config(TINY)
        b = parse_config({**TINY, "seed": 1})
        assert a.config_hash == parse_config(json.loads(json.dumps(TINY))).config_hash
        assert a.config_hash != b.config_hash

    @pytest.mark.parametrize("raw, field", [
        ({"schema": 1, "train": {"warmup_step": 3}}, "train.warmup_step"),
        ({"schema": 1, "trian": {}}, "trian"),
        ({"schema": 1, "train": {"det_lr": "fast"}}, "train.det_lr"),
        ({"schema": 1, "train": {"use_ssl": 1}}, "train.use_ssl"),
        ({"schema": 1, "train": {"seed": 4}}, "train.seed"),
        ({"schema": 1, "augment": {"p_backscatter": 1.5}}, "augment.p_backscatter"),
        ({"schema": 1, "detector": {"feature_source": "radar"}}, "detector.feature_source"),
        ({"schema": 1, "dataset": {"scene": {"focal": None}}}, "dataset.scene.focal"),
        ({"schema": 1, "dataset": {"target_train": {"rain": 3}}}, "dataset.target_train.rain"),
        ({"schema": 1, "pretext": {"tasks": ["colorize"]}}, "pretext.tasks"),
        ({"schema": 1, "eval": {"split": "val"}}, "eval.split"),
        ({"schema": 1, "seed": -1}, "seed"),
        ({"seed": 0}, "schema"),
        ({"schema": 3}, "schema"),
    ])
    def test_first_offending_field_named(self, raw, field):
        with pytest.raises(ConfigError) as exc:
            parse_config(raw)
        assert exc.value.field == field

    def test_partial_sections_fill_defaults(self):
        cfg = parse_config({"schema": 1, "train": {"lambda_adv": 0.5}})
        assert cfg.train.lambda_adv == 0.5 and cfg.train.batch_size == ExperimentConfig().train.batch_size


class TestPresets:
    def test_table2_rows_differ_by_one_toggle(self):
        rows = preset_configs("table2", ExperimentConfig())
        assert [r.name for r, _ in rows] == list("ABCDEF")
        for (_, prev), (_, cur) in zip(rows, rows[1:]):
            a, b = flat(prev.to_dict()), flat(cur.to_dict())
            assert len([k for k in a if a[k] != b[k]]) == 1

    def test_table2_endpoints(self):
        rows = dict((r.name, c) for r, c in preset_configs("table2", ExperimentConfig()))
        a, f = rows["A"], rows["F"]
        assert a.train.mode == "mtda" and len(a.train.targets) == 4
        assert a.detector.entropy_mode == "separate" and not a.train.use_augment
        assert not (a.train.use_discriminator or a.train.use_ssl or a.train.balanced)
        assert f.detector.entropy_mode == "max" and f.train.use_augment and f.train.use_discriminator
        assert f.train.use_ssl and f.train.balanced

    def test_table3_is_warm_up_only(self):
        rows = dict((r.name, c) for r, c in preset_configs("table3", ExperimentConfig()))
        assert all(c.train.mode == "stda" and c.train.targets == ("dense_fog",) and not c.train.use_ssl
                   for c in rows.values())
        assert rows["from_rgb"].detector.feature_source == "rgb"
        assert rows["from_lidar"].detector.feature_source == "depth"
        assert not rows["max_entropy_no_fm"].train.use_feature_matching
        assert rows["max_entropy"].train.use_feature_matching

    def test_table4_single_tasks(self):
        rows = dict((r.name, c) for r, c in preset_configs("table4", ExperimentConfig()))
        assert not rows["entropy_fusion"].train.use_ssl
        for task in ("jigsaw", "translation"):
            assert rows[task].pretext.tasks == (task,)
        assert rows["patch_rotation"].pretext.tasks == ("rotation",)
        assert all(not c.train.use_discriminator and c.detector.entropy_mode == "separate" for c in rows.values())

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_configs("table9", ExperimentConfig())

    def test_every_preset_parses(self):
        for name in PRESETS:
            assert preset_configs(name, parse_config(TINY))

    def test_comparison_table(self):
        result = {"rows": [{"name": "A", "domain_mean": {"clear_day": 50.0, "snow": None}, "overall_target_mean": 3.25}]}
        head, row = comparison_table(result).splitlines()
        assert len(head) == len(row) and "3.2" in row and "-" in row


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "tiny.json")
    out = root / "out"
    assert run(["gen-data", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert run(["train", "--config", cfg, "--out", str(out), "--mode", "source_only"]) == EXIT_OK
    assert run(["eval", "--out", str(out), "--mode", "source_only"]) == EXIT_OK
    return root, cfg, out


class TestPipeline:
    def test_report_has_every_domain(self, pipeline):
        _, _, out = pipeline
        report = json.loads((out / "runs" / "source_only" / "report.json").read_text())
        assert set(report["ap"]) == {"clear_day", "dense_fog", "snow"}
        assert all(set(v) == {"car", "pedestrian", "ridable"} for v in report["ap"].values())

    def test_artifacts_carry_config_hash(self, pipeline):
        _, _, out = pipeline
        run_dir = out / "runs" / "source_only"
        h = json.loads((run_dir / "config.json").read_text())["config_hash"]
        assert json.loads((run_dir / "report.json").read_text())["meta"]["config_hash"] == h
        assert json.loads((run_dir / "train_summary.json").read_text())["config_hash"] == h
        assert (run_dir / "metrics.csv").read_text().startswith(f"# config_hash={h}")
        manifest = json.loads((run_dir / "checkpoint" / "manifest.json").read_text())
        assert manifest["config_hash"] == h

    def test_eval_refuses_other_config(self, pipeline, tmp_path):
        _, _, out = pipeline
        other = write_config(tmp_path / "other.json", {**TINY, "seed": 5})
        args = ["eval", "--config", other, "--out", str(out), "--run", "source_only"]
        assert run(args) == EXIT_CONFIG
        assert run(args + ["--allow-hash-mismatch"]) != EXIT_CONFIG

    def test_eval_refuses_other_dataset(self, pipeline, tmp_path):
        _, cfg, out = pipeline
        other = tmp_path / "data"
        assert run(["gen-data", "--config", cfg, "--seed", "9", "--out", str(tmp_path)]) == EXIT_OK
        args = ["eval", "--out", str(out), "--mode", "source_only", "--data", str(other)]
        assert run(args) == EXIT_CONFIG
        assert run(args + ["--allow-hash-mismatch"]) == EXIT_OK

    def test_previews(self, pipeline, tmp_path):
        _, cfg, _ = pipeline
        assert run(["augment-preview", "--config", cfg, "--out", str(tmp_path), "--count", "1"]) == EXIT_OK
        assert run(["pretext-preview", "--config", cfg, "--out", str(tmp_path), "--count", "1"]) == EXIT_OK
        h = parse_config(TINY).config_hash
        ppm = (tmp_path / "augment-preview" / "000_aug.rgb.ppm").read_bytes()
        assert f"# config_hash={h}".encode() in ppm[:64]
        listing = json.loads((tmp_path / "pretext-preview" / "pretext_preview.json").read_text())
        assert listing["config_hash"] == h and {i["task"] for i in listing["items"]} == {"rotation", "jigsaw",
                                                                                         "translation"}


class TestExitCodes:
    def test_invalid_config_exits_2_naming_field(self, tmp_path, capsys):
        bad = write_config(tmp_path / "bad.json", {**TINY, "train": {"warmup_steps": "many"}})
        assert run(["train", "--config", bad, "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "train.warmup_steps" in capsys.readouterr().err

    def test_malformed_json_exits_2(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert run(["gen-data", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_bad_mode_flag_exits_2(self, tmp_path):
        assert run(["train", "--mode", "semi", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["fit"])
        assert exc.value.code == EXIT_CONFIG

    def test_missing_config_file_exits_3(self, tmp_path):
        assert run(["train", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_MISSING

    def test_missing_dataset_exits_3(self, tmp_path):
        cfg = write_config(tmp_path / "tiny.json")
        assert run(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_MISSING

    def test_missing_target_domain_exits_3(self, tmp_path):
        cfg = write_config(tmp_path / "tiny.json")
        assert run(["gen-data", "--config", cfg, "--out", str(tmp_path), "--domains", "snow"]) == EXIT_OK
        assert run(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_MISSING

    def test_missing_run_exits_3(self, tmp_path):
        assert run(["eval", "--out", str(tmp_path), "--run", "nothing"]) == EXIT_MISSING

    def test_unconfigured_domain_exits_2(self, tmp_path):
        cfg = write_config(tmp_path / "tiny.json")
        assert run(["gen-data", "--config", cfg, "--out", str(tmp_path), "--domains", "night"]) == EXIT_CONFIG
