import json
import os

import numpy as np
import pytest

from fadeup import tensor as T
from fadeup.cli import main


def write_pair(tmp_path, seed=0, n=1, c=3, h=3, w=3, dtype=np.float32):
    rng = np.random.default_rng(seed)
    de = rng.normal(size=(n, c, h, w)).astype(dtype)
    en = rng.normal(size=(n, c, 2 * h, 2 * w)).astype(dtype)
    de_path, en_path = tmp_path / "de.ften", tmp_path / "en.ften"
    T.write_ften(de_path, de)
    T.write_ften(en_path, en)
    return en_path, de_path, en, de


class TestUpsample:
    def test_nearest_matches_primitive(self, tmp_path):
        _, de_path, _, de = write_pair(tmp_path)
        out = tmp_path / "out.ften"
        code = main(
            ["upsample", "--variant", "nearest", "--decoder", str(de_path), "--out", str(out)]
        )
        assert code == 0
        np.testing.assert_array_equal(T.read_ften(out), T.interp_nearest_x2(de))
        manifest = json.loads((tmp_path / "out.ften.manifest.json").read_text())
        assert manifest["command"] == "upsample"
        assert manifest["version"]

    def test_fade_impls_agree(self, tmp_path):
        en_path, de_path, _, _ = write_pair(tmp_path, seed=1)
        outs = {}
        for impl in ("h2l", "l2h"):
            out = tmp_path / f"out_{impl}.ften"
            code = main(
                [
                    "upsample", "--variant", "fade", "--decoder", str(de_path),
                    "--encoder", str(en_path), "--seed", "7", "--impl", impl,
                    "--d", "8", "--out", str(out),
                ]
            )
            assert code == 0
            outs[impl] = T.read_ften(out)
        dev = np.max(
            np.abs(outs["h2l"] - outs["l2h"])
            / np.maximum(1.0, np.maximum(np.abs(outs["h2l"]), np.abs(outs["l2h"])))
        )
        assert dev <= 1e-5

    def test_missing_encoder_exit_3(self, tmp_path, capsys):
        _, de_path, _, _ = write_pair(tmp_path)
        code = main(
            ["upsample", "--variant", "fade", "--decoder", str(de_path),
             "--out", str(tmp_path / "x.ften")]
        )
        assert code == 3
        assert "guide" in capsys.readouterr().err

    def test_bad_file_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.ften"
        bad.write_bytes(b"JUNK")
        code = main(
            ["upsample", "--variant", "nearest", "--decoder", str(bad),
             "--out", str(tmp_path / "x.ften")]
        )
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path):
        code = main(
            ["upsample", "--variant", "nearest", "--decoder", str(tmp_path / "nope.ften"),
             "--out", str(tmp_path / "x.ften")]
        )
        assert code == 2

    def test_weights_round_trip(self, tmp_path):
        from fadeup.operators import OperatorConfig, build_operator, save_checkpoint

        en_path, de_path, en, de = write_pair(tmp_path, seed=2)
        cfg = OperatorConfig("fade", channels=3, compressed=8, seed=5)
        op = build_operator(cfg)
        ckpt = tmp_path / "w.fckp"
        save_checkpoint(op, ckpt)
        out = tmp_path / "out.ften"
        code = main(
            ["upsample", "--variant", "fade", "--decoder", str(de_path),
             "--encoder", str(en_path), "--seed", "999", "--d", "8",
             "--weights", str(ckpt), "--out", str(out)]
        )
        assert code == 0
        np.testing.assert_array_equal(T.read_ften(out), op.forward(en, de))


class TestDeterminism:
    def test_upsample_rerun_byte_identical(self, tmp_path):
        en_path, de_path, _, _ = write_pair(tmp_path, seed=3)
        argv = [
            "upsample", "--variant", "fade_lite", "--decoder", str(de_path),
            "--encoder", str(en_path), "--seed", "11", "--out", "",
        ]
        blobs = []
        for run in range(2):
            out = tmp_path / f"run{run}.ften"
            argv[-1] = str(out)
            assert main(argv) == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]

    def test_cost_csv_byte_identical(self, tmp_path):
        blobs = []
        for run in range(2):
            out = tmp_path / f"cost{run}.csv"
            assert main(["cost", "--csv", str(out)]) == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]


class TestVerify:
    def test_cost_suite_prints_golden(self, capsys):
        assert main(["verify", "--suite", "cost"]) == 0
        out = capsys.readouterr().out
        assert "2.50" in out and "4.56" in out and "1.53" in out
        assert "73984" in out and "47424" in out and "13281" in out
        assert "PASS" in out

    def test_identities_suite(self, capsys):
        assert main(["verify", "--suite", "identities"]) == 0
        assert "FAIL" not in capsys.readouterr().out.replace("PASS", "")

    def test_equivalence_small(self, capsys):
        assert main(["verify", "--suite", "equivalence", "--seeds", "5"]) == 0
        assert "worst rel dev" in capsys.readouterr().out

    def test_gradcheck_small(self, capsys):
        assert main(["verify", "--suite", "gradcheck", "--seeds", "1"]) == 0
        assert "worst rel err" in capsys.readouterr().out


class TestCost:
    def test_table_output(self, capsys):
        assert main(["cost", "--C", "256", "--d", "64", "--K", "5", "--H", "112", "--W", "112"]) == 0
        out = capsys.readouterr().out
        assert "2.50" in out and "4.56" in out and "1.53" in out

    def test_unknown_row_exit_3(self, capsys):
        assert main(["cost", "--rows", "deconv"]) == 3

    def test_csv_columns(self, tmp_path):
        out = tmp_path / "cost.csv"
        assert main(["cost", "--rows", "fade,carafe", "--csv", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "row,gflops,flops,params,extras"
        assert len(lines) == 3


class TestTrainCli:
    def test_train_writes_outputs(self, tmp_path):
        outdir = tmp_path / "run"
        code = main(
            ["train", "--task", "binary_shapes", "--variant", "b6_full",
             "--epochs", "2", "--size", "32", "--count", "4", "--seed", "1",
             "--outdir", str(outdir)]
        )
        assert code == 0
        assert (outdir / "metrics.csv").exists()
        assert (outdir / "manifest.json").exists()
        assert (outdir / "prediction.pgm").exists()
        assert (outdir / "gate_stage1.pgm").exists()
        header = (outdir / "metrics.csv").read_text().splitlines()[0]
        assert header.startswith("epoch,loss")

    def test_train_rerun_byte_identical_csv(self, tmp_path):
        blobs = []
        for run in range(2):
            outdir = tmp_path / f"run{run}"
            assert main(
                ["train", "--task", "texture_recon", "--variant", "nearest",
                 "--epochs", "2", "--size", "32", "--count", "4", "--seed", "2",
                 "--outdir", str(outdir)]
            ) == 0
            blobs.append((outdir / "metrics.csv").read_bytes())
        assert blobs[0] == blobs[1]


class TestConfigPrecedence:
    def test_config_file_used(self, tmp_path, capsys):
        cfg = tmp_path / "fade.cfg"
        cfg.write_text("C=128  # smaller\nd=32\n")
        assert main(["--config", str(cfg), "cost", "--rows", "fade"]) == 0
        out = capsys.readouterr().out
        assert "C=128 d=32" in out

    def test_flag_beats_config(self, tmp_path, capsys):
        cfg = tmp_path / "fade.cfg"
        cfg.write_text("C=128\n")
        assert main(["--config", str(cfg), "cost", "--rows", "fade", "--C", "64"]) == 0
        assert "C=64" in capsys.readouterr().out

    def test_env_beats_config(self, tmp_path, capsys, monkeypatch):
        cfg = tmp_path / "fade.cfg"
        cfg.write_text("C=128\n")
        monkeypatch.setenv("FADEUP_C", "96")
        assert main(["--config", str(cfg), "cost", "--rows", "fade"]) == 0
        assert "C=96" in capsys.readouterr().out

    def test_bad_config_line_exit_3(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not a pair\n")
        assert main(["--config", str(cfg), "cost"]) == 3

    def test_bad_flag_exit_3(self):
        assert main(["cost", "--C", "notanint"]) == 3
