"""Command-line behaviour: exit codes, determinism, config overlay."""

import json

import pytest

from headsynth.cli import main

TINY_RENDER = ["--size", "8", "--resolution", "16", "--channels", "4",
               "--coarse", "4", "--fine", "4"]
TINY_DATASET = TINY_RENDER + ["--points", "16"]


def test_unknown_flag_exits_2_with_help(capsys):
    with pytest.raises(SystemExit) as err:
        main(["render", "--bogus"])
    assert err.value.code == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2


def test_rig_gen_writes_rig(tmp_path, capsys):
    out = tmp_path / "rig.json"
    assert main(["rig", "gen", "--seed", "3", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "command: rig gen" in text and "seed = 3" in text
    from headsynth.headmodel import load_rig, procedural_rig
    assert load_rig(out).equals(procedural_rig(seed=3))


def test_render_seed_reproducible_pngs(tmp_path, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out in (a, b):
        assert main(["render", "--seed", "7", "--out", str(out)]
                    + TINY_RENDER) == 0
    assert main(["render", "--seed", "8", "--out", str(c)]
                + TINY_RENDER) == 0
    first = (a / "preview.png").read_bytes()
    assert first == (b / "preview.png").read_bytes()
    assert first != (c / "preview.png").read_bytes()


def test_render_maps_flag_writes_pfms(tmp_path):
    out = tmp_path / "r"
    assert main(["render", "--seed", "1", "--out", str(out), "--maps"]
                + TINY_RENDER) == 0
    for name in ("preview.png", "i_lr.pfm", "opa.pfm", "depth.pfm"):
        assert (out / name).exists()


def test_dataset_gen_then_validate_passes(tmp_path, capsys):
    out = tmp_path / "ds"
    assert main(["dataset", "gen", "--ids", "1", "--motions", "2",
                 "--views", "1", "--seed", "5", "--out", str(out)]
                + TINY_DATASET) == 0
    assert main(["dataset", "validate", str(out)]) == 0
    assert "result: PASS" in capsys.readouterr().out


def test_dataset_validate_failure_exits_1(tmp_path, capsys):
    out = tmp_path / "ds"
    assert main(["dataset", "gen", "--ids", "1", "--motions", "1",
                 "--views", "1", "--seed", "5", "--out", str(out)]
                + TINY_DATASET) == 0
    victim = next(out.glob("records/*/opa.pfm"))
    victim.unlink()
    assert main(["dataset", "validate", str(out)]) == 1
    assert "result: FAIL" in capsys.readouterr().out


def test_dataset_static_flag(tmp_path, capsys):
    out = tmp_path / "st"
    assert main(["dataset", "gen", "--static", "--ids", "1", "--views", "1",
                 "--seed", "5", "--out", str(out)] + TINY_DATASET) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kind"] == "static"


def test_config_file_overlay_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 9, "size": 8, "resolution": 16,
                               "channels": 4, "coarse": 4, "fine": 4}))
    out = tmp_path / "r"
    assert main(["render", "--config", str(cfg), "--out", str(out),
                 "--seed", "3"]) == 0
    text = capsys.readouterr().out
    assert "seed = 3" in text        # flag beats config
    assert "size = 8" in text        # config beats built-in default
    assert "resolution = 16" in text


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sizes": 8}))
    assert main(["render", "--config", str(cfg)]) == 2
    assert "sizes" in capsys.readouterr().err


def test_verify_suite_green(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "18/18 checks passed" in out
    assert "FAIL" not in out
