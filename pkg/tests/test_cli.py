import json

import numpy as np
import pytest
import torch
import yaml
from PIL import Image

from hyperadapt import load_checkpoint
from hyperadapt.cli import main
from hyperadapt.inference import z_from_seed
from hyperadapt.params import analytic_report
from hyperadapt.training import weights_checksum

TINY = {
    "synthesis": {"z_dim": 8, "w_dim": 8, "channels": [8, 4]},
    "data": {"resolution": 8, "source_samples": 8},
    "pretrain": {"steps": 5, "batch_size": 4},
    "inversion": {"steps": 5},
    "training": {"latent_dim": 8, "batch_size": 2, "steps": 3},
}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert main(["pretrain", "--config", str(cfg), "--out", str(d / "src.ckpt")]) == 0
    assert main(["prepare", "--source", str(d / "src.ckpt"), "--config", str(cfg), "--out", str(d / "prep.ckpt")]) == 0
    assert main(["train", "--checkpoint", str(d / "prep.ckpt"), "--log", str(d / "log.csv"),
                 "--out", str(d / "model.ckpt")]) == 0
    return d


def test_config_command(tmp_path, capsys):
    assert main(["config"]) == 0
    assert "training:" in capsys.readouterr().out
    assert main(["config", "--out", str(tmp_path / "c.yaml")]) == 0
    assert yaml.safe_load((tmp_path / "c.yaml").read_text())["training"]["lr"] == 0.002


def test_params_matches_analytic(capsys, tmp_path):
    assert main(["params", "--json", str(tmp_path / "p.json")]) == 0
    out = capsys.readouterr().out
    rep = analytic_report()
    assert f"conditional total:     {rep.total}" in out
    assert "full residual" in out
    assert json.loads((tmp_path / "p.json").read_text())["total"] == rep.total
    assert main(["params", "--scaling"]) == 0
    assert "separate" in capsys.readouterr().out


def test_params_on_checkpoint(run, capsys):
    assert main(["params", "--checkpoint", str(run / "model.ckpt")]) == 0
    assert "match the analytic formula" in capsys.readouterr().out


def test_pipeline_outputs(run):
    ck = load_checkpoint(run / "model.ckpt")
    assert ck.step == 3 and ck.registry.has_latents and len(ck.registry) == 4
    assert len((run / "log.csv").read_text().strip().splitlines()) == 4


def test_train_zero_steps_equals_init(run):
    from hyperadapt import Trainer

    assert main(["train", "--checkpoint", str(run / "prep.ckpt"), "--steps", "0", "--out", str(run / "zero.ckpt")]) == 0
    zero = load_checkpoint(run / "zero.ckpt")
    prep = load_checkpoint(run / "prep.ckpt")
    fresh = Trainer(prep.generator, prep.registry, prep.training)
    assert zero.step == 0
    assert weights_checksum(zero.adaptation) == weights_checksum(fresh.adaptation)
    assert weights_checksum(zero.generator) == weights_checksum(prep.generator)


def test_train_resumes(run):
    assert main(["train", "--checkpoint", str(run / "model.ckpt"), "--steps", "2", "--out", str(run / "more.ckpt")]) == 0
    assert load_checkpoint(run / "more.ckpt").step == 5


def test_synth_controls_off_equals_source(run):
    out = run / "s.png"
    assert main(["synth", "--checkpoint", str(run / "model.ckpt"), "--domain", "0", "--seeds", "1,2",
                 "--alpha", "0", "--kappa", "0", "--out", str(out)]) == 0
    ck = load_checkpoint(run / "model.ckpt")
    from hyperadapt.inference import to_uint8

    src = ck.generator(torch.cat([z_from_seed(s, 8) for s in (1, 2)]))
    grid = np.asarray(Image.open(out))
    assert np.array_equal(grid[2:10, 2:10], to_uint8(src[0]))
    assert np.array_equal(grid[2:10, 12:20], to_uint8(src[1]))
    meta = json.loads(out.with_suffix(".json").read_text())
    assert meta["cells"][0][0]["alpha"] == 0.0


def test_viewing_commands(run, tmp_path):
    img = tmp_path / "in.png"
    Image.new("RGB", (8, 8), (200, 30, 30)).save(img)
    m = str(run / "model.ckpt")
    assert main(["interp", "--checkpoint", m, "--from", "0", "--to", "blue-squares", "--steps", "3",
                 "--space", "v", "--out", str(tmp_path / "i.png")]) == 0
    assert main(["translate", "--checkpoint", m, "--image", str(img), "--inversion-steps", "3",
                 "--out", str(tmp_path / "t.png")]) == 0
    assert main(["sweep", "--checkpoint", m, "--domain", "1", "--alphas", "0,1", "--kappas", "0,0.5,1",
                 "--out", str(tmp_path / "w.png")]) == 0
    side = json.loads((tmp_path / "w.json").read_text())
    assert side["rows"] == 2 and side["cols"] == 3
    assert json.loads((tmp_path / "t.json").read_text())["cols"] == 6


@pytest.mark.parametrize("argv", [["bogus"], [], ["synth"], ["params", "--domains", "x"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path):
    (tmp_path / "bad.yaml").write_text("training: {nope: 1}\n")
    assert main(["config", "--config", str(tmp_path / "bad.yaml")]) == 2


def test_unknown_domain_exits_2(run, tmp_path):
    assert main(["synth", "--checkpoint", str(run / "model.ckpt"), "--domain", "zebra",
                 "--out", str(tmp_path / "x.png")]) == 2


def test_missing_checkpoint_exits_1(tmp_path):
    assert main(["synth", "--checkpoint", str(tmp_path / "none.ckpt"), "--domain", "0",
                 "--out", str(tmp_path / "x.png")]) == 1


def test_train_needs_prepared_registry(run, tmp_path):
    assert main(["train", "--checkpoint", str(run / "src.ckpt"), "--out", str(tmp_path / "x.ckpt")]) == 2
