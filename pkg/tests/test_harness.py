import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from bcprobe import archive
from bcprobe.cli import EXIT_CODES, main
from bcprobe.config import PRESETS, ConfigError, ExperimentConfig, load, loads, preset
from bcprobe.geometry import SIGMA_DISK, Obstacle
from bcprobe.measurement import MeasurementConfig, MeasurementSet, add_awgn
from bcprobe.pgm import decode_pgm, encode_pgm, mask_to_image, read_pgm
from bcprobe.selftest import run_selftest

TINY = ["--n-space", "20", "--n-r", "5", "--centers", "2", "--raster", "40"]


# -- archives and images -----------------------------------------------------------


def _set(noise=False):
    rng = np.random.default_rng(0)
    d = MeasurementSet(MeasurementConfig(n_x=3, n_t=10, n_space=12), rng.normal(size=(3, 10, 3)), SIGMA_DISK)
    return add_awgn(d, 7, 42) if noise else d


@pytest.mark.parametrize("noise", [False, True])
def test_archive_round_trip(noise, tmp_path):
    d = _set(noise)
    digest = archive.save(d, tmp_path / "a.ndmap")
    back = archive.load(tmp_path / "a.ndmap")
    assert np.array_equal(back.traces, d.traces)
    assert back.config == d.config and back.obstacle == d.obstacle and back.noise == d.noise
    assert digest == archive.checksum((tmp_path / "a.ndmap").read_bytes())
    assert archive.encode(back) == archive.encode(d)


def test_archive_rejects_damage():
    buf = archive.encode(_set(True))
    with pytest.raises(archive.ArchiveFormatError, match="magic"):
        archive.decode(b"XX" + buf[2:])
    with pytest.raises(archive.ArchiveFormatError):
        archive.decode(buf[:-8])
    with pytest.raises(archive.ArchiveFormatError):
        archive.decode(buf[:20])
    bad_kind = bytearray(buf)
    bad_kind[7 + 12 + 16] = 9
    with pytest.raises(archive.ArchiveFormatError, match="kind"):
        archive.decode(bytes(bad_kind))


def test_pgm_round_trip_and_orientation():
    mask = np.zeros((3, 4), bool)
    mask[0, 0] = True  # bottom-left of the square
    buf = encode_pgm(mask)
    assert buf.startswith(b"P5\n4 3\n255\n")
    assert buf[-4] == 255  # stored last because files begin with the top row
    assert np.array_equal(decode_pgm(buf) > 127, mask)
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    assert np.array_equal(decode_pgm(b"P5\n# comment\n4 3\n255\n" + img[::-1].tobytes()), img)
    with pytest.raises(ValueError):
        decode_pgm(b"P2\n1 1\n255\n\x00")
    assert mask_to_image(mask).dtype == np.uint8


# -- configuration -----------------------------------------------------------------


@pytest.mark.parametrize("name", PRESETS)
def test_preset_round_trip(name):
    cfg = preset(name)
    assert loads(cfg.to_ini()) == cfg
    assert loads(cfg.to_ini()).config_hash() == cfg.config_hash()


def test_preset_values():
    assert preset("snr14").snr_db == 14 and preset("snr14").probe.epsilon == 4e-3
    assert preset("snr7").probe.alpha == 1e-3
    assert preset("noiseless").probe.epsilon == 5e-4 and preset("noiseless").snr_db is None
    desk = preset("desk")
    assert desk.measurement.n_space == 200 and desk.probe.n_r == 100 and len(desk.probe.y_samples) == 10
    paper = preset("paper")
    assert paper.paper and len(paper.probe.radii()) * 20 == 4020
    with pytest.raises(ConfigError):
        preset("bogus")


def test_hash_ignores_run_section_only():
    cfg = preset("noiseless")
    assert replace(cfg, workers=8, output="/elsewhere").config_hash() == cfg.config_hash()
    assert replace(cfg, seed=5).config_hash() != cfg.config_hash()


def test_paper_mode_pins_parameters():
    cfg = preset("paper")
    with pytest.raises(ConfigError):
        replace(cfg, measurement=MeasurementConfig(n_x=10, n_space=400))
    with pytest.raises(ConfigError):
        replace(cfg, snr_db=7.0)  # alpha must follow the noise level
    ok = replace(cfg, snr_db=7.0, probe=replace(cfg.probe, alpha=1e-3))
    assert ok.probe.alpha == 1e-3


@pytest.mark.parametrize("text, match", [
    ("[meta]\nschema_version = 2\n", "schema_version"),
    ("[probe]\nepsilon = 1\n", "schema_version"),
    ("[meta]\nschema_version = 1\n[extra]\na = 1\n", "section"),
    ("[meta]\nschema_version = 1\n[probe]\nepsilonn = 1\n", "keys"),
    ("[meta]\nschema_version = 1\n[probe]\nepsilon = -1\n", "epsilon"),
    ("[meta]\nschema_version = 1\n[obstacle]\nkind = blob\n", "blob"),
    ("[meta]\nschema_version = 1\n[measurement]\ncourant_dt = 0.9\n", "courant"),
    ("not an ini", "malformed"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        loads(text)


def test_config_file_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[meta]\nschema_version = 1\npreset = snr14\n[obstacle]\nkind = square\n"
                 "[probe]\ncenters = 0.25, 0.75\n[noise]\nseed = 2\n")
    cfg = load(p)
    assert cfg.obstacle.kind == "square" and cfg.seed == 2 and cfg.snr_db == 14
    assert cfg.probe.y_samples == (0.25, 0.75) and cfg.probe.epsilon == 4e-3
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.ini")
    assert isinstance(cfg, ExperimentConfig)


# -- command line ------------------------------------------------------------------


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _kv(out):
    return dict(line.split(" ", 1) for line in out.strip().splitlines())


def test_simulate_is_deterministic(tmp_path, capsys):
    args = ["simulate", "--obstacle", "none", "--output", str(tmp_path)] + TINY
    c1, o1, _ = run_cli(capsys, *args)
    c2, o2, _ = run_cli(capsys, *args)
    assert c1 == c2 == 0
    assert _kv(o1)["sha256"] == _kv(o2)["sha256"]
    data = archive.load(_kv(o1)["archive"])
    assert data.traces.shape[0] == 20 and data.obstacle.is_empty


def test_simulate_records_noise(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "simulate", "--preset", "snr7", "--output", str(tmp_path), *TINY)
    assert code == 0
    data = archive.load(_kv(out)["archive"])
    assert data.noise.snr_db == 7 and data.noise.seed == 1
    assert "snr7_seed1" in _kv(out)["archive"]


def test_probe_pipeline_writes_outputs(tmp_path, capsys):
    base = ["--output", str(tmp_path)] + TINY
    code, out, err = run_cli(capsys, "probe", *base)
    assert code == 0, err
    info = _kv(out)
    run = Path(info["run"])
    probe = run / "probe"
    for name in ("halfspace_data.csv", "halfspace_calibration.csv", "halfspace_difference.csv", "clearances.csv",
                 "reconstruction.pgm", "exact_region.pgm", "error_map.pgm", "error_summary.csv"):
        assert (probe / name).exists(), name
    assert len(list((probe / "differences").glob("y_*.csv"))) == 6
    assert read_pgm(probe / "error_map.pgm").shape == (40, 40)
    manifest = json.loads(Path(info["manifest"]).read_text())
    assert manifest["workers"] == 1 and manifest["config_hash"] == run.name
    assert set(manifest["outputs"]) >= {"probe/clearances.csv", "probe/error_map.pgm"}
    assert loads(manifest["config"]).config_hash() == run.name
    assert 0 <= float(info["error_fraction"]) <= 1

    # stored archives are reused and the outputs do not depend on the worker count
    first = {k: v for k, v in manifest["outputs"].items()}
    code, out, err = run_cli(capsys, "probe", *base, "--workers", "2")
    assert code == 0, err
    again = json.loads(Path(_kv(out)["manifest"]).read_text())
    assert again["outputs"] == first and again["workers"] == 2


def test_probe_refuses_mismatched_archives(tmp_path, capsys):
    base = ["--output", str(tmp_path)] + TINY
    _, out, _ = run_cli(capsys, "simulate", *base)
    data = _kv(out)["archive"]
    _, out, _ = run_cli(capsys, "simulate", "--calibration", *base)
    cal = _kv(out)["archive"]
    code, _, err = run_cli(capsys, "probe", *base, "--data", cal, "--calibration", cal)
    assert code == EXIT_CODES["data_mismatch"]
    assert json.loads(err.strip().splitlines()[-1])["error"] == "data_mismatch"
    code, _, err = run_cli(capsys, "probe", *base, "--data", data, "--calibration", data)
    assert code == EXIT_CODES["data_mismatch"]
    code, _, _ = run_cli(capsys, "probe", *base[:2], "--n-space", "24", "--n-r", "5", "--centers", "2",
                         "--data", data, "--calibration", cal)
    assert code == EXIT_CODES["data_mismatch"]


def test_curve_and_compare(tmp_path, capsys):
    base = ["--output", str(tmp_path)] + TINY
    _, out, _ = run_cli(capsys, "simulate", *base)
    data = _kv(out)["archive"]
    _, out, _ = run_cli(capsys, "simulate", "--calibration", *base)
    cal = _kv(out)["archive"]
    code, out, _ = run_cli(capsys, "curve", *TINY, "--data", data, "--family", "disk", "--y", "0.5")
    assert code == 0 and out.splitlines()[0] == "r,estimate,reference" and len(out.splitlines()) == 6
    dest = tmp_path / "diff.csv"
    code, _, _ = run_cli(capsys, "curve", *TINY, "--data", data, "--calibration", cal, "--out", str(dest))
    assert code == 0 and dest.read_text().startswith("r,estimate")

    code, out, _ = run_cli(capsys, "compare", data, data)
    rep = json.loads(out)
    assert code == 0 and rep["identical_bytes"] and rep["relative_l2"] == 0
    code, out, _ = run_cli(capsys, "compare", data, cal, "--tolerance", "1e-12")
    assert code == EXIT_CODES["comparison_failed"] and json.loads(out)["relative_l2"] > 0


def test_compare_masks(tmp_path, capsys):
    a = np.zeros((10, 10), bool)
    b = a.copy()
    b[:2] = True
    (tmp_path / "a.pgm").write_bytes(encode_pgm(a))
    (tmp_path / "b.pgm").write_bytes(encode_pgm(b))
    code, out, _ = run_cli(capsys, "compare", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm"))
    rep = json.loads(out)
    assert code == 0 and rep["false_negative_cells"] == 20 and rep["error_fraction"] == pytest.approx(0.2)
    code, _, _ = run_cli(capsys, "compare", str(tmp_path / "a.pgm"), str(tmp_path / "missing.pgm"))
    assert code == EXIT_CODES["io_error"]


@pytest.mark.parametrize("argv, category", [
    (["simulate", "--n-space", "0"], "config_error"),
    (["simulate", "--n-t", "801"], "config_error"),
    (["simulate", "--snr", "loud"], "config_error"),
    (["probe", "--config", "/nonexistent.ini"], "config_error"),
    (["probe", "--config", "x.ini", "--preset", "snr7"], "config_error"),
    (["probe", "--centers", "0"], "config_error"),
])
def test_error_categories(argv, category, capsys, tmp_path):
    code, _, err = run_cli(capsys, *argv, "--output", str(tmp_path))
    assert code == EXIT_CODES[category]
    assert json.loads(err.strip().splitlines()[-1])["error"] == category


def test_corrupted_archive_reported(tmp_path, capsys):
    path = tmp_path / "bad.ndmap"
    path.write_bytes(b"NOTMAGIC" + bytes(100))
    code, _, err = run_cli(capsys, "curve", "--data", str(path))
    assert code == EXIT_CODES["archive_error"]
    assert "magic" in json.loads(err.strip())["message"]
    assert "archive" in " ".join(run_selftest(archive_path=path, fast=True, stream=None))


def test_selftest_passes(capsys):
    code, out, _ = run_cli(capsys, "selftest")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    assert any("lagove" in line for line in lines)


def test_internal_errors_are_categorized(capsys, monkeypatch):
    import bcprobe.cli as cli

    def boom(args):
        raise RuntimeError("unexpected")

    args = cli.build_parser().parse_args(["compare", "a", "b"])
    args.func = boom
    monkeypatch.setattr(cli.argparse.ArgumentParser, "parse_args", lambda self, argv=None: args)
    code, _, err = run_cli(capsys, "compare", "a", "b")
    assert code == EXIT_CODES["internal_error"]
    assert json.loads(err.strip())["error"] == "internal_error"
