import json
import subprocess
import sys
from pathlib import Path

import pytest

from labelqc.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> pretrain artifacts shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    synth_dir = root / "synth"
    code = main([
        "synth", "--n", "700", "--seed", "11", "--expert-fraction", "0.5",
        "--out", str(synth_dir),
    ])
    assert code == 0
    cfg = root / "pipeline.json"
    cfg.write_text(json.dumps({"seed": 3, "pretrain": {"epochs": 4}, "finetune": {"epochs": 4}}))
    pre_dir = root / "pretrain"
    code = main([
        "pretrain", "--labels", str(synth_dir / "labels.csv"),
        "--infra", str(synth_dir / "infra.jsonl"),
        "--config", str(cfg), "--out", str(pre_dir),
    ])
    assert code == 0
    return root, synth_dir, pre_dir, cfg


class TestSynth:
    def test_outputs_and_manifest(self, workspace):
        _, synth_dir, _, _ = workspace
        for name in ("labels.csv", "infra.jsonl", "truth.jsonl", "expert.csv", "manifest.json"):
            assert (synth_dir / name).exists()
        manifest = json.loads((synth_dir / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["seed"] == 11
        assert str(synth_dir / "labels.csv") in manifest["outputs"]


class TestLfReport:
    def test_table_columns(self, workspace, capsys):
        _, synth_dir, _, _ = workspace
        code = main([
            "lf-report", "--labels", str(synth_dir / "labels.csv"),
            "--infra", str(synth_dir / "infra.jsonl"),
        ])
        out = capsys.readouterr().out
        assert code == 0
        for col in ("Polarity", "Coverage", "Overlaps", "Conflicts"):
            assert col in out
        for lf in ("distance_i", "clustered", "severity", "zoom", "tag",
                   "description", "distance_r", "way_type"):
            assert lf in out

    def test_json_mode(self, workspace, capsys):
        _, synth_dir, _, _ = workspace
        code = main([
            "lf-report", "--labels", str(synth_dir / "labels.csv"),
            "--infra", str(synth_dir / "infra.jsonl"), "--json",
        ])
        assert code == 0
        body = json.loads(capsys.readouterr().out)
        assert set(body) == {"distance_i", "clustered", "severity", "zoom", "tag",
                             "description", "distance_r", "way_type"}


class TestPipelineCommands:
    def test_pretrain_artifacts(self, workspace):
        _, _, pre_dir, _ = workspace
        for name in ("bundle.ftb", "clusters.bin", "labelmodel.json", "lf_report.json",
                     "history.json", "manifest.json"):
            assert (pre_dir / name).exists()
        assert (pre_dir / "bundle.ftb").stat().st_size <= 131_072

    def test_pretrain_deterministic_across_runs(self, workspace, tmp_path):
        root, synth_dir, pre_dir, cfg = workspace
        again = tmp_path / "pretrain2"
        code = main([
            "pretrain", "--labels", str(synth_dir / "labels.csv"),
            "--infra", str(synth_dir / "infra.jsonl"),
            "--config", str(cfg), "--out", str(again),
        ])
        assert code == 0
        m1 = json.loads((pre_dir / "manifest.json").read_text())
        m2 = json.loads((again / "manifest.json").read_text())
        h1 = m1["outputs"][str(pre_dir / "bundle.ftb")]
        h2 = m2["outputs"][str(again / "bundle.ftb")]
        assert h1 == h2

    def test_finetune_evaluate_and_importance(self, workspace, tmp_path):
        root, synth_dir, pre_dir, cfg = workspace
        ft_dir = tmp_path / "ft"
        code = main([
            "finetune", "--bundle", str(pre_dir / "bundle.ftb"),
            "--expert", str(synth_dir / "expert.csv"),
            "--infra", str(synth_dir / "infra.jsonl"),
            "--clusters", str(pre_dir / "clusters.bin"),
            "--k-per-type", "4", "--config", str(cfg), "--out", str(ft_dir),
        ])
        assert code == 0
        assert (ft_dir / "bundle_finetuned.ftb").exists()
        sample = json.loads((ft_dir / "finetune_sample.json").read_text())
        assert len(sample) == 20

        ev_dir = tmp_path / "eval"
        code = main([
            "evaluate", "--bundle", str(ft_dir / "bundle_finetuned.ftb"),
            "--test", str(synth_dir / "expert.csv"),
            "--infra", str(synth_dir / "infra.jsonl"),
            "--clusters", str(pre_dir / "clusters.bin"),
            "--out", str(ev_dir),
        ])
        assert code == 0
        report = json.loads((ev_dir / "report.json").read_text())
        assert set(report) == {"overall", "per_type", "n_test", "threshold", "model_version"}

        imp_dir = tmp_path / "imp"
        code = main([
            "importance", "--bundle", str(ft_dir / "bundle_finetuned.ftb"),
            "--labels", str(synth_dir / "labels.csv"),
            "--infra", str(synth_dir / "infra.jsonl"),
            "--clusters", str(pre_dir / "clusters.bin"),
            "--out", str(imp_dir),
        ])
        assert code == 0
        imp = json.loads((imp_dir / "importance.json").read_text())
        for rows in imp.values():
            total = sum(r["coefficient"] for r in rows)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_export_model(self, workspace, tmp_path):
        _, _, pre_dir, _ = workspace
        out = tmp_path / "export"
        code = main(["export-model", "--bundle", str(pre_dir / "bundle.ftb"), "--out", str(out)])
        assert code == 0
        meta = json.loads((out / "model_meta.json").read_text())
        assert meta["size_bytes"] <= 131_072
        assert (out / "bundle.ftb").read_bytes() == (pre_dir / "bundle.ftb").read_bytes()

    def test_annotate_adds_columns(self, workspace, tmp_path):
        _, synth_dir, _, _ = workspace
        out = tmp_path / "ann"
        code = main([
            "annotate", "--labels", str(synth_dir / "labels.csv"),
            "--infra", str(synth_dir / "infra.jsonl"), "--out", str(out),
        ])
        assert code == 0
        lines = (out / "annotated.csv").read_text().splitlines()
        assert lines[0].endswith("p_correct,covered")
        assert len(lines) == 701


class TestErrorCategories:
    def test_missing_file_is_data_error(self, tmp_path, capsys):
        code = main([
            "evaluate", "--bundle", "missing.ftb", "--test", "missing.csv",
            "--infra", "missing.jsonl", "--clusters", "missing.bin",
            "--out", str(tmp_path / "x"),
        ])
        assert code == 3
        err = capsys.readouterr().err
        assert err.startswith("error=data")
        assert "missing.ftb" in err

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as e:
            main(["evaluate"])  # missing required args
        assert e.value.code == 2

    def test_unknown_lf_name_in_ablate(self, workspace, tmp_path, capsys):
        _, synth_dir, _, cfg = workspace
        code = main([
            "ablate", "--raw", str(synth_dir / "labels.csv"),
            "--expert", str(synth_dir / "expert.csv"),
            "--test", str(synth_dir / "expert.csv"),
            "--infra", str(synth_dir / "infra.jsonl"),
            "--drop", "nonexistent-lf", "--config", str(cfg),
            "--out", str(tmp_path / "ab"),
        ])
        assert code == 3
        assert "error=data" in capsys.readouterr().err
