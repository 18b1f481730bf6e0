"""The udhf2 command line, driven in-process through main()."""

import numpy as np
import pytest

from udhf2.cli import main
from udhf2.netpbm import read_pgm, read_ppm

TINY = ["--set", "channels=8,8,8,8", "--set", "blocks_per_stage=1",
        "--set", "points=4", "--set", "num_scenes=2",
        "--set", "batch_size=2", "--set", "steps=2",
        "--set", "stage2_steps=2", "--set", "diffusion_steps=3"]


def test_gen_data_seg(tmp_path, capsys):
    assert main(["gen-data", "--task", "seg", "--out", str(tmp_path)] + TINY) == 0
    img = read_ppm(tmp_path / "scene_000.ppm")
    lab = read_pgm(tmp_path / "label_000.pgm")
    assert img.shape == (64, 64, 3)
    assert lab.shape == (64, 64)
    assert "2 scenes" in capsys.readouterr().out


def test_seed_flag_matches_config_override(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    main(["gen-data", "--out", str(a), "--seed", "7"] + TINY)
    main(["gen-data", "--out", str(b), "--set", "seed=7"] + TINY)
    main(["gen-data", "--out", str(c)] + TINY)
    flag = (a / "scene_000.ppm").read_bytes()
    assert flag == (b / "scene_000.ppm").read_bytes()
    assert flag != (c / "scene_000.ppm").read_bytes()


def test_gen_data_cd_manifest(tmp_path):
    assert main(["gen-data", "--task", "cd", "--out", str(tmp_path)] + TINY) == 0
    rows = (tmp_path / "pairs.tsv").read_text().strip().split("\n")
    assert len(rows) == 2
    first, second, mask = rows[0].split("\t")
    assert read_ppm(first).shape == (64, 64, 3)
    assert read_ppm(second).shape == (64, 64, 3)
    assert set(np.unique(read_pgm(mask))) <= {0, 255}


def test_decompose(tmp_path):
    main(["gen-data", "--task", "seg", "--out", str(tmp_path)] + TINY)
    out = tmp_path / "comp"
    assert main(["decompose", "--image", str(tmp_path / "scene_000.ppm"),
                 "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == [f"band_{i}.pgm" for i in (1, 2, 3, 4)] + \
        [f"wavelet_{i}.pgm" for i in (1, 2, 3, 4)]
    assert read_pgm(out / "wavelet_1.pgm").shape == (32, 32)
    assert read_pgm(out / "band_1.pgm").shape == (64, 64)


def test_train_infer_round_trip(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train-seg", "--out", str(run)] + TINY) == 0
    assert (run / "stage1.ckpt").exists()
    assert main(["train-seg", "--stage", "2", "--out", str(run)] + TINY) == 0
    assert (run / "stage2.ckpt").exists()
    out = tmp_path / "infer"
    assert main(["infer-seg", "--checkpoint", str(run / "stage1.ckpt"),
                 "--stage2-checkpoint", str(run / "stage2.ckpt"),
                 "--out", str(out)] + TINY) == 0
    printed = capsys.readouterr().out
    assert "initial: miou=" in printed
    assert "refined: miou=" in printed
    assert (out / "metrics.txt").exists()
    assert (out / "refined_metrics.txt").exists()


def test_eval_subcommand(tmp_path, capsys):
    pred = np.zeros((1, 8, 8), dtype=np.int64)
    truth = np.zeros((1, 8, 8), dtype=np.int64)
    truth[0, :2] = 1
    np.save(tmp_path / "pred.npy", pred)
    np.save(tmp_path / "truth.npy", truth)
    report = tmp_path / "metrics.txt"
    assert main(["eval", "--task", "cd", "--pred", str(tmp_path / "pred.npy"),
                 "--truth", str(tmp_path / "truth.npy"),
                 "--out", str(report)]) == 0
    text = report.read_text()
    assert "task=cd" in text
    assert "oa=0.75" in text
    assert text == capsys.readouterr().out


def test_grad_check_command(capsys):
    assert main(["grad-check", "--instances", "1"]) == 0
    out = capsys.readouterr().out
    assert "deformable_convolution" in out
    assert "overall worst" in out


def test_missing_checkpoint_is_reported(tmp_path, capsys):
    code = main(["train-seg", "--stage", "2", "--out", str(tmp_path),
                 "--stage1-checkpoint", str(tmp_path / "no.ckpt")] + TINY)
    assert code == 2
    assert "stage-1 checkpoint" in capsys.readouterr().err


def test_bad_config_value_is_reported(tmp_path, capsys):
    code = main(["gen-data", "--out", str(tmp_path), "--set", "rho=2.0"])
    assert code == 2
    assert "rho" in capsys.readouterr().err


def test_config_file_plus_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("num_scenes=1\nchannels=8,8,8,8\n")
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg), "--out", str(out),
                 "--set", "num_scenes=2"]) == 0
    assert sorted(p.name for p in out.iterdir() if p.suffix == ".ppm") == \
        ["scene_000.ppm", "scene_001.ppm"]


def test_malformed_set_flag(tmp_path):
    with pytest.raises(SystemExit, match="key=value"):
        main(["gen-data", "--out", str(tmp_path), "--set", "oops"])
