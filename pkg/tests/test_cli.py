import json
import os

import numpy as np
import yaml
from click.testing import CliRunner

from freqpad.cli import main


def run_cli(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


class TestMakeSyntheticAndValidate:
    def test_generate_then_validate(self, tmp_path):
        out = tmp_path / "corpus"
        res = run_cli("make-synthetic", "--out", out, "--n-videos", 4,
                      "--frames", 2, "--size", 48, "--seed", 1)
        assert res.exit_code == 0, res.output
        manifest = out / "manifest.csv"
        assert manifest.exists()
        res = run_cli("validate-manifest", manifest)
        assert res.exit_code == 0
        assert "OK" in res.output

    def test_bad_manifest_exit_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,manifest\n")
        res = run_cli("validate-manifest", bad)
        assert res.exit_code == 2
        assert "validation error" in res.output

    def test_unknown_mode_exit_2(self, tmp_path):
        res = run_cli("make-synthetic", "--out", tmp_path / "x",
                      "--modes", "hologram")
        assert res.exit_code == 2


class TestDecompose:
    def test_npz_viz_and_masks(self, tmp_path, mini_corpus):
        manifest, _ = mini_corpus
        frame = manifest.records[0].frame_path
        out = tmp_path / "dec"
        res = run_cli("decompose", frame, "--out", out, "--viz", "--dump-masks")
        assert res.exit_code == 0, res.output
        stem = os.path.splitext(os.path.basename(frame))[0]
        data = np.load(out / f"{stem}.npz")
        assert data["components"].shape == (112, 112, 12)
        for band in (1, 2, 3, 4):
            assert (out / f"{stem}_band{band}.png").exists()
        masks = (out / "masks.txt").read_text()
        assert masks.count("# mask") == 4

    def test_band4_reconstructs_input(self, tmp_path, mini_corpus):
        from PIL import Image

        manifest, _ = mini_corpus
        frame = manifest.records[0].frame_path
        out = tmp_path / "dec2"
        assert run_cli("decompose", frame, "--out", out).exit_code == 0
        stem = os.path.splitext(os.path.basename(frame))[0]
        comps = np.load(out / f"{stem}.npz")["components"]
        img = np.asarray(Image.open(frame), dtype=np.float64) / 255.0
        assert np.abs(comps[:, :, 9:12] - img).max() < 1e-8

    def test_empty_dir_exit_2(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        res = run_cli("decompose", empty, "--out", tmp_path / "o")
        assert res.exit_code == 2


class TestTrainEvalReport:
    def test_full_workflow(self, tmp_path, mini_corpus):
        _, manifest_path = mini_corpus
        run_dir = tmp_path / "run"
        res = run_cli("train", "--manifest", manifest_path, "--out", run_dir,
                      "--set", "input_size=112", "--set", "max_epochs=1",
                      "--set", "batch_size=16")
        assert res.exit_code == 0, res.output
        ckpt = run_dir / "checkpoint.pt"
        assert ckpt.exists()
        assert (run_dir / "train_log.jsonl").exists()
        assert (run_dir / "config.resolved.json").exists()

        eval_dir = tmp_path / "eval"
        res = run_cli("eval", "--checkpoint", ckpt, "--manifest", manifest_path,
                      "--split", "test", "--out", eval_dir, "--dump-attention")
        assert res.exit_code == 0, res.output
        report = json.load(open(eval_dir / "report.json"))
        assert 0.0 <= report["auc"] <= 1.0
        assert set(report["apcer_per_pai"]) == {"lowpass_print", "moire_replay"}
        assert (eval_dir / "scores.csv").exists()
        assert any(f.startswith("attention_") for f in os.listdir(eval_dir))

        res = run_cli("report", "--scores", eval_dir / "scores.csv",
                      "--out", tmp_path / "rep.json")
        assert res.exit_code == 0
        assert "ACER" in res.output
        assert json.load(open(tmp_path / "rep.json"))["auc"] == report["auc"]

        # fixed threshold variant
        res = run_cli("report", "--scores", eval_dir / "scores.csv",
                      "--threshold", 0.5)
        assert res.exit_code == 0

        emb_dir = tmp_path / "emb"
        res = run_cli("export-embeddings", "--checkpoint", ckpt,
                      "--manifest", manifest_path, "--out", emb_dir)
        assert res.exit_code == 0, res.output
        assert (emb_dir / "embeddings.csv").exists()
        npz = np.load(emb_dir / "embeddings_reduced.npz")
        assert npz["coords_2d"].shape[1] == 2
        assert (emb_dir / "embedding_plot.png").exists()

        protocol = {"name": "intra-mini", "kind": "intra",
                    "folds": [{"name": "all", "dataset": "mini"}]}
        ppath = tmp_path / "protocol.yaml"
        ppath.write_text(yaml.safe_dump(protocol))
        proto_dir = tmp_path / "proto"
        res = run_cli("eval", "--checkpoint", ckpt, "--manifest", manifest_path,
                      "--protocol", ppath, "--out", proto_dir)
        assert res.exit_code == 0, res.output
        presult = json.load(open(proto_dir / "protocol_report.json"))
        assert len(presult["folds"]) == 1

    def test_unknown_config_key_exit_2(self, tmp_path, mini_corpus):
        _, manifest_path = mini_corpus
        res = run_cli("train", "--manifest", manifest_path,
                      "--out", tmp_path / "x", "--set", "not_a_key=1")
        assert res.exit_code == 2

    def test_bad_override_syntax_exit_2(self, tmp_path, mini_corpus):
        _, manifest_path = mini_corpus
        res = run_cli("train", "--manifest", manifest_path,
                      "--out", tmp_path / "x", "--set", "batch_size")
        assert res.exit_code == 2


class TestAblate:
    def test_two_presets_one_seed(self, tmp_path, mini_corpus):
        _, manifest_path = mini_corpus
        out = tmp_path / "abl"
        res = run_cli("ablate", "--manifest", manifest_path, "--out", out,
                      "--presets", "rgb_bce,full_flsl", "--seeds", "0",
                      "--set", "input_size=112", "--set", "max_epochs=1",
                      "--set", "batch_size=16")
        assert res.exit_code == 0, res.output
        table = json.load(open(out / "ablation.json"))
        assert set(table) == {"rgb_bce", "full_flsl"}
        for runs in table.values():
            assert len(runs) == 1
            assert 0.0 <= runs[0]["auc"] <= 1.0

    def test_unknown_preset_exit_2(self, tmp_path, mini_corpus):
        _, manifest_path = mini_corpus
        res = run_cli("ablate", "--manifest", manifest_path,
                      "--out", tmp_path / "x", "--presets", "bogus")
        assert res.exit_code == 2
