"""The command-line client, end to end against the in-process service."""

import numpy as np
import pytest

from dp3df.cli import main
from dp3df.fileio import read_config, read_ppm, write_config


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("cli_ds"))
    code = main(["synth", "--out", root, "--sequences", "2", "--frames", "4",
                 "--height", "16", "--width", "16", "--r", "2", "--seed", "0"])
    assert code == 0
    return root


class TestUsageErrors:
    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--does-not-exist", "1"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_contract_violation_exits_1(self, tmp_path, capsys):
        code = main(["synth", "--out", str(tmp_path), "--exposure", "0.0"])
        assert code == 1
        assert "exposure" in capsys.readouterr().err.lower()

    def test_missing_data_exits_1(self, tmp_path, capsys):
        code = main(["eval", "--data", str(tmp_path / "none"), "--baseline"])
        assert code == 1


class TestSynth:
    def test_writes_sequences(self, dataset, capsys):
        import os

        assert sorted(os.listdir(dataset)) == ["seq_0000", "seq_0001"]


class TestInferIdentity:
    def test_reproduces_nearest_neighbor_upsample(self, dataset, tmp_path, capsys):
        out = str(tmp_path / "id")
        code = main(["infer", "--data", dataset, "--sequence", "seq_0000",
                     "--identity", "--r", "2", "--frame", "2", "--out", out])
        assert code == 0
        y = read_ppm(out + "/frame_0002_y.ppm")
        lln = read_ppm(dataset + "/seq_0000/lln/frame_0002.ppm")
        np.testing.assert_array_equal(y, np.repeat(np.repeat(lln, 2, 0), 2, 1))


class TestTrainEvalFlow:
    def test_train_then_eval(self, dataset, tmp_path, capsys):
        out = str(tmp_path / "run")
        code = main(["train", "--data", dataset, "--out", out, "--steps", "3",
                     "--batch", "2", "--patch", "16", "--r", "2", "--levels", "1",
                     "--channels", "8", "--blocks", "1", "--seed", "0"])
        assert code == 0
        text = capsys.readouterr().out
        assert "checkpoint:" in text
        code = main(["eval", "--data", dataset, "--checkpoint", out + "/model.dpt"])
        assert code == 0
        assert "mean" in capsys.readouterr().out

    def test_config_file_with_flag_override(self, dataset, tmp_path, capsys):
        cfg_path = tmp_path / "train.cfg"
        write_config(cfg_path, {"steps": 2, "batch": 2, "patch": 16, "r": 2,
                                "levels": 1, "channels": (8,), "blocks": 1})
        out = str(tmp_path / "run2")
        code = main(["train", "--config", str(cfg_path), "--data", dataset,
                     "--out", out, "--seed", "1", "--steps", "4"])
        assert code == 0
        saved = read_config(out + "/model.cfg")
        assert saved["total_steps"] == 4  # flag wins over config file
        assert saved["seed"] == 1


class TestGradcheckCommand:
    def test_exit_zero_on_default_seed(self, capsys):
        code = main(["gradcheck", "--seed", "0", "--samples", "10"])
        assert code == 0
        out = capsys.readouterr().out
        assert "all passed" in out
        assert "apply_dp3df" in out


class TestBenchCommand:
    def test_small_instance(self, tmp_path, capsys):
        code = main(["bench", "--height", "16", "--width", "16", "--r", "2",
                     "--threads", "2", "--repeats", "1",
                     "--out", str(tmp_path / "bench.csv")])
        assert code == 0
        out = capsys.readouterr().out
        assert "naive" in out and "parallel" in out


class TestAblateCommand:
    def test_csv_has_all_variant_rows(self, dataset, tmp_path, capsys):
        out = str(tmp_path / "ablate")
        code = main(["ablate", "--data", dataset, "--test-data", dataset,
                     "--out", out, "--steps", "2", "--batch", "2", "--patch", "16",
                     "--r", "2", "--levels", "1", "--channels", "8", "--blocks", "1"])
        assert code == 0
        lines = open(out + "/ablation.csv").read().strip().splitlines()
        assert lines[0] == "variant,psnr,ssim"
        assert [ln.split(",")[0] for ln in lines[1:]] == [
            "full", "no_temporal", "no_spatial", "no_residual"]
