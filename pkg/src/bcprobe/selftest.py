"""Fast invariant suite behind ``bcprobe selftest``."""

from __future__ import annotations

import math
import sys
import time

import numpy as np

from . import archive
from .control import apply_J, apply_time_reversal, tikhonov_limit_check
from .geometry import (SIGMA_DISK, SIGMA_EMPTY, SIGMA_SQUARE, DiskProbe, HalfSpace, RasterGrid, distance_to_obstacle,
                       exact_volume_M, h_region_exact, influence_mask)
from .measurement import MeasurementConfig, MeasurementSet, add_awgn, noise_variance_ratio
from .pgm import decode_pgm, encode_pgm


def _time_operators():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400, 3))
    assert np.array_equal(apply_time_reversal(apply_time_reversal(x)), x), "R is not an involution"
    h = 2.0 / 800
    t = np.arange(400) * h + h / 2
    err = np.max(np.abs(apply_J(np.ones((800, 1)), h)[:, 0] - (1.0 - t)))
    assert err < 1e-6, f"J 1 differs from T - t by {err:.2e}"
    return f"J error {err:.1e}"


def _tikhonov():
    rep = tikhonov_limit_check(np.diag([1.0, 0.0]), np.array([1.0, 1.0]), [1e-1, 1e-2])
    assert np.allclose(rep.errors, [0.1 / 1.1, 0.01 / 1.01], rtol=1e-12), "diag(1, 0) example"
    rng = np.random.default_rng(1)
    worst = 0.0
    alphas = 10.0 ** -np.arange(0, 13)
    for _ in range(5):
        A = rng.normal(size=(6, 3)) @ rng.normal(size=(3, 6))
        rep = tikhonov_limit_check(A, rng.normal(size=6), alphas)
        assert rep.nonincreasing(), "error not monotone in alpha"
        worst = max(worst, rep.errors[-1])
    assert worst < 1e-6, f"limit error {worst:.2e}"
    return f"error at alpha=1e-12 {worst:.1e}"


def _geometry():
    d = distance_to_obstacle((0.5, 0.0), SIGMA_DISK)
    assert abs(d - 0.2) < 1e-12, f"disk distance {d}"
    d = distance_to_obstacle((0.5, 0.0), SIGMA_SQUARE)
    assert abs(d - (0.5 - 0.424 / math.sqrt(2))) < 1e-12, f"square distance {d}"
    v = exact_volume_M(DiskProbe(0.5, 0.3))
    assert abs(v - math.pi * 0.09 / 2) < 1e-12, "half-disk area"
    g = RasterGrid(400)
    area = g.area(influence_mask(DiskProbe(0.1, 0.3), g))
    assert abs(area - exact_volume_M(DiskProbe(0.1, 0.3))) < 2 / g.n, "raster area"
    g = RasterGrid(60)
    small = h_region_exact(SIGMA_DISK, 0.5, g)
    assert not np.any(small & ~h_region_exact(SIGMA_DISK, 1.0, g)), "visibility region not monotone in T"
    assert h_region_exact(SIGMA_EMPTY, 1.0, g).all(), "empty visibility region"
    return "distances, areas, visibility region"


def _measurement():
    cfg = MeasurementConfig(n_x=3, n_t=40, n_space=10)
    rng = np.random.default_rng(2)
    data = MeasurementSet(cfg, rng.normal(size=(3, 40, 3)))
    c = np.zeros((5, 3))
    c[4, 1] = 1.0
    out = data.synthesize(c)
    assert np.allclose(out[4:], data.traces[1][:-4], atol=1e-12) and np.all(np.abs(out[:4]) < 1e-12), "time shift"
    big = MeasurementSet(MeasurementConfig(n_x=2, n_t=20000, n_space=10), np.ones((2, 20000, 2)))
    for snr in (14.0, 7.0):
        noisy = add_awgn(big, snr, 3)
        ratio = float(np.mean((noisy.traces - big.traces) ** 2))
        assert abs(ratio / noise_variance_ratio(snr) - 1) < 0.05, f"noise ratio at {snr} dB"
    return "synthesis shift, awgn power"


def _archive_roundtrip():
    cfg = MeasurementConfig(n_x=2, n_t=8, n_space=10)
    data = MeasurementSet(cfg, np.arange(32, dtype=float).reshape(2, 8, 2), SIGMA_DISK)
    noisy = add_awgn(data, 14.0, 5)
    buf = archive.encode(noisy)
    back = archive.decode(buf)
    assert np.array_equal(back.traces, noisy.traces) and back.noise == noisy.noise, "round trip"
    bad = bytearray(buf)
    bad[:7] = b"XXXXXXX"
    try:
        archive.decode(bytes(bad))
    except archive.ArchiveFormatError:
        pass
    else:
        raise AssertionError("corrupted header was accepted")
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    assert np.array_equal(decode_pgm(encode_pgm(img)), img), "PGM round trip"
    return "archive and PGM round trips, corrupted header rejected"


def _blagoveshchenskii():
    from .oracles import blagoveshchenskii_check
    from .solver import simulate_basis

    data = simulate_basis(SIGMA_EMPTY, MeasurementConfig(n_space=100))
    rep = blagoveshchenskii_check(data, pairs=3, seed=0)
    assert rep.max_error < 0.05, f"relative error {rep.max_error:.2e}"
    return f"n_space=100, max relative error {rep.max_error:.2e}"


CHECKS = [
    ("control", "time operators R and J", _time_operators),
    ("control", "Tikhonov limit lemma", _tikhonov),
    ("geometry", "oracle geometry", _geometry),
    ("measurement", "synthesis and noise", _measurement),
    ("archive", "NDMAP01 and PGM formats", _archive_roundtrip),
    ("solver", "Blagoveshchenskii identity at reduced resolution", _blagoveshchenskii),
]


def _check_archive(path):
    try:
        data = archive.load(path)
    except archive.ArchiveFormatError as exc:
        raise AssertionError(f"archive-format failure: {exc}") from None
    except OSError as exc:
        raise AssertionError(f"cannot read archive: {exc.strerror}") from None
    return f"{data.config.n_x} traces, obstacle {data.obstacle.kind}"


def run_selftest(archive_path=None, fast: bool = False, stream=None) -> list[str]:
    """Run the checks, print one line each and return the failure labels."""
    stream = stream or sys.stdout
    checks = list(CHECKS)
    if fast:
        checks = [c for c in checks if c[0] != "solver"]
    if archive_path is not None:
        checks.append(("archive", f"file {archive_path}", lambda: _check_archive(archive_path)))
    failures = []
    for module, prop, fn in checks:
        t0 = time.perf_counter()
        try:
            detail = fn()
            ok = True
        except AssertionError as exc:
            detail, ok = str(exc), False
        dt = time.perf_counter() - t0
        print(f"{'PASS' if ok else 'FAIL'} {module}: {prop} ({detail}; {dt:.1f}s)", file=stream)
        if not ok:
            failures.append(f"{module}: {prop}")
    return failures
