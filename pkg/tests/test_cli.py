import csv
import math

import pytest

from conftest import small_config
from phytac.cli import main
from phytac.config import dump_config
from phytac.dataset import ObjectClass, synthesize_candidates, synthesize_object
from phytac.geometry import Scene, write_scene
from phytac.numerics import Rng


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.yaml"
    dump_config(small_config(), path)
    return path


@pytest.fixture
def scene_file(tmp_path):
    obj = synthesize_object(Rng(4), ObjectClass())
    path = tmp_path / "scene.txt"
    write_scene(Scene(obj.points, synthesize_candidates(obj, Rng(5), 6)), path)
    return path


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("codec: {epochs: -3}\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert "epochs" in capsys.readouterr().err
    assert main(["gen-data", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert main(["gen-data", "--seed", "-1", "--out", str(tmp_path / "d")]) == 2


def test_unknown_key_is_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"codec": {"epoch": 3}}')
    assert main(["gen-data", "--config", str(bad)]) == 2


def test_missing_artifact_exit_code(tmp_path, config_file):
    assert main(["gen-data", "--config", str(config_file), "--out", str(tmp_path / "d")]) == 0
    code = main(["train-diffusion", "--config", str(config_file), "--data", str(tmp_path / "d"),
                 "--codec", str(tmp_path / "missing.phyt"), "--out", str(tmp_path / "x.phyt")])
    assert code == 3
    assert main(["rank-poses", "--scene", str(tmp_path / "none.txt")]) == 3


def test_rank_poses_csv(tmp_path, scene_file):
    out = tmp_path / "ranked.csv"
    assert main(["rank-poses", "--scene", str(scene_file), "--top-n", "4", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["rank"]) for r in rows] == [1, 2, 3, 4]
    costs = [float(r["f_cost"]) for r in rows]
    assert costs == sorted(costs)
    assert all(0.0 <= float(r["w_p"]) <= 1.0 for r in rows)
    assert len({r["candidate"] for r in rows}) == 4


def test_rank_poses_stdout_and_bad_weights(scene_file, capsys):
    assert main(["rank-poses", "--scene", str(scene_file)]) == 0
    assert capsys.readouterr().out.startswith("rank,candidate")
    assert main(["rank-poses", "--scene", str(scene_file), "--alpha", "-1"]) == 2
    assert main(["rank-poses", "--scene", str(scene_file), "--top-n", "0"]) == 2


def test_end_to_end_report(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    assert main(["report", "--config", str(config_file), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "FOSG" in text and "SSIM" in text
    for name in ("summary.csv", "episodes.csv", "traces.csv", "image_metrics.csv", "summary.txt",
                 "codec.phyt", "denoiser.phyt", "config.yaml"):
        assert (out / name).exists(), name
    for r in csv.DictReader((out / "summary.csv").open()):
        for k, v in r.items():
            if k not in ("policy", "texture_class"):
                assert math.isfinite(float(v))

    # downstream subcommands reuse the trained artifacts
    common = ["--config", str(config_file)]
    assert main(["sample", *common, "--data", str(out / "data"), "--codec", str(out / "codec.phyt"),
                 "--diffusion", str(out / "denoiser.phyt"), "--record", "0",
                 "--out", str(tmp_path / "s.csv")]) == 0
    assert main(["sample", *common, "--data", str(out / "data"), "--codec", str(out / "codec.phyt"),
                 "--diffusion", str(out / "denoiser.phyt"), "--record", "100000"]) == 2
    assert main(["eval", *common, "--codec", str(out / "codec.phyt"), "--diffusion", str(out / "denoiser.phyt"),
                 "--records", "3", "--out", str(tmp_path / "m.csv")]) == 0
    assert main(["run-grasp", *common, "--data", str(out / "data"), "--codec", str(out / "codec.phyt"),
                 "--goal", "oracle", "--episodes", "1", "--out", str(tmp_path / "g")]) == 0
    assert main(["run-grasp", *common, "--data", str(out / "data"), "--policy", "fixed-force",
                 "--episodes", "1", "--out", str(tmp_path / "f")]) == 0
