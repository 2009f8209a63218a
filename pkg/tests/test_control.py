import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bcprobe.control import (STauIndex, apply_J, apply_J_half, apply_K, apply_K_tau, apply_time_reversal,
                             assemble_K_tau, assemble_rhs_b, slot_inner, solve_control, tikhonov_limit_check)
from bcprobe.geometry import SIGMA_DISK, DiskProbe, HalfSpace
from bcprobe.measurement import MeasurementConfig, add_awgn
from bcprobe.oracles import random_sources
from bcprobe.solver import simulate_basis

H = 0.0025
T = 1.0
t = (np.arange(400) + 0.5) * H


# -- time operators ----------------------------------------------------------------


@given(arrays(np.float64, (12, 3), elements=st.floats(-1e6, 1e6)))
def test_reversal_is_an_involution(x):
    assert np.array_equal(apply_time_reversal(apply_time_reversal(x)), x)


def test_reversal_examples():
    ones = np.ones((400, 2))
    assert np.array_equal(apply_time_reversal(ones), ones)
    # sample centers map onto each other: t -> T - t
    assert np.allclose(apply_time_reversal(t), T - t, atol=1e-15)


def test_J_examples():
    ones = np.ones((800, 4))
    J1 = apply_J(ones, H)
    assert J1.shape == (400, 4)
    assert np.max(np.abs(J1[:, 0] - (T - t))) < 1e-6
    # extrapolating to the sample edges: Jf(0) = T and Jf(T) = 0
    assert J1[0, 0] + 0.5 * H == pytest.approx(T)
    assert J1[-1, 0] - 0.5 * H == pytest.approx(0.0, abs=1e-12)
    s = (np.arange(800) + 0.5) * H
    Js = apply_J(s, H)
    assert Js[199] + Js[200] == pytest.approx(2 * T * T / 2, rel=1e-3)
    assert np.allclose(Js, (T - t) * T, rtol=1e-9, atol=1e-12)
    with pytest.raises(ValueError):
        apply_J(np.ones(7), H)


@given(arrays(np.float64, (40, 2), elements=st.floats(-10, 10)))
@settings(max_examples=50)
def test_J_half_is_J_of_zero_extension(f):
    padded = np.concatenate([f, np.zeros_like(f)])
    assert np.allclose(apply_J_half(f, 0.05), apply_J(padded, 0.05), atol=1e-12)


# -- connecting operator -------------------------------------------------------------


def test_K_of_zero_is_zero(empty100):
    assert not apply_K(np.zeros((400, 20)), empty100).any()


@pytest.mark.parametrize("name", ["empty100", "disk100"])
def test_K_positive_semidefinite_on_random_vectors(name, request):
    data = request.getfixturevalue(name)
    rng = np.random.default_rng(5)
    for _ in range(20):
        f = rng.normal(size=(400, 20))
        q = slot_inner(f, apply_K(f, data), H)
        assert q >= -1e-3 * slot_inner(f, f, H)


def test_K_receiver_subset_matches(disk100):
    f = random_sources(disk100, 1, 3)[0]
    cols = np.array([2, 3, 11])
    assert np.allclose(apply_K(f, disk100, cols)[:, cols], apply_K(f, disk100)[:, cols], atol=1e-12)


# -- S_tau and b -----------------------------------------------------------------


def test_index_examples():
    assert STauIndex.build(HalfSpace(0.0), 20, 800, 1.0).size == 0
    full = STauIndex.build(HalfSpace(1.0), 20, 800, 1.0)
    assert full.size == 8000
    assert full.slot_measure == pytest.approx(H / 20)
    half = STauIndex.build(HalfSpace(0.25), 20, 800, 1.0)
    assert half.mask[300:].all() and not half.mask[:300].any()
    probe = STauIndex.build(DiskProbe(0.5, 0.1), 20, 800, 1.0)
    assert list(probe.receivers) == [8, 9, 10, 11]
    # tau(0.475) = 0.075 -> 30 slots, tau(0.425) = 0.025 -> 10 slots
    assert probe.mask[:, 9].sum() == 30 and probe.mask[:, 8].sum() == 10


def test_index_sizes_at_sampling_of_the_experiments():
    for y in (0.0, 1.0):
        sizes = [STauIndex.build(DiskProbe(y, r), 20, 800, 1.0).size for r in np.linspace(0.1, 0.5, 9)]
        assert 30 <= min(sizes) and max(sizes) <= 1000
    # centered probes see both sides and carry up to twice as many slots
    assert STauIndex.build(DiskProbe(0.5, 0.5), 20, 800, 1.0).size == 2000


def test_rhs_examples():
    full = STauIndex.build(HalfSpace(1.0), 20, 800, 1.0)
    b = assemble_rhs_b(full)
    assert b[0, 0] == pytest.approx(T - H / 2)
    assert b[0, 0] == pytest.approx(0.99875)
    assert b[-1, 0] == pytest.approx(H / 2)
    assert abs(slot_inner(b, b, H) - T**3 / 3) < 1e-4
    part = assemble_rhs_b(STauIndex.build(DiskProbe(0.5, 0.1), 20, 800, 1.0))
    assert not part[:, :8].any() and not part[:, 12:].any()


# -- Galerkin matrix -------------------------------------------------------------


@pytest.fixture(scope="module")
def galerkin(disk100):
    index = STauIndex.for_data(DiskProbe(0.5, 0.1), disk100)
    return index, assemble_K_tau(index, disk100)


def test_galerkin_matrix_small_and_consistent(galerkin, disk100):
    index, G = galerkin
    assert G.shape == (80, 80)
    f = np.where(index.mask, np.random.default_rng(0).normal(size=index.mask.shape), 0.0)
    assert np.allclose(G @ f[index.mask], apply_K_tau(f, index, disk100)[index.mask], atol=1e-12)


def test_galerkin_matrix_symmetric(galerkin):
    _, G = galerkin
    assert np.max(np.abs(G - G.T)) <= 1e-3 * np.max(np.diag(G))


def test_galerkin_matrix_positive_semidefinite(galerkin):
    _, G = galerkin
    ev = np.linalg.eigvalsh(0.5 * (G + G.T))
    assert ev[0] >= -1e-3 * ev[-1]


def test_dense_assembly_limit(empty100):
    with pytest.raises(ValueError):
        assemble_K_tau(STauIndex.for_data(HalfSpace(0.5), empty100), empty100)


# -- CG ------------------------------------------------------------------------


def test_cg_rejects_bad_input(empty100):
    with pytest.raises(ValueError):
        solve_control(STauIndex.for_data(HalfSpace(0.0), empty100), empty100)
    with pytest.raises(ValueError):
        solve_control(STauIndex.for_data(HalfSpace(0.1), empty100), empty100, alpha=-1.0)


def test_large_alpha_gives_scaled_rhs(empty100):
    index = STauIndex.for_data(HalfSpace(0.2), empty100)
    b = assemble_rhs_b(index)
    f = np.where(index.mask, np.random.default_rng(1).normal(size=b.shape), 0.0)
    norm_K = np.sqrt(slot_inner(apply_K_tau(f, index, empty100), apply_K_tau(f, index, empty100), H)
                     / slot_inner(f, f, H))
    alpha = 1e4 * max(norm_K, 1.0)
    sol = solve_control(index, empty100, alpha=alpha)
    assert np.allclose(sol.coefficients, b / alpha, rtol=2e-3, atol=0)
    assert sol.volume_estimate == pytest.approx(slot_inner(b, b, H) / alpha, rel=2e-3)
    assert sol.volume_estimate < 1e-4


def test_cg_history_and_cap(empty100):
    sol = solve_control(STauIndex.for_data(HalfSpace(0.3), empty100), empty100, n_cg=7)
    assert sol.cg_iterations <= 7
    assert len(sol.residual_history) == sol.cg_iterations + 1
    assert sol.volume_history[-1] == sol.volume_estimate
    assert np.isfinite(sol.volume_estimate) and not sol.indefinite


def test_volume_monotone_in_depth(empty100):
    radii = [0.1, 0.2, 0.3, 0.4, 0.5]
    v = [solve_control(STauIndex.for_data(HalfSpace(r), empty100), empty100).volume_estimate for r in radii]
    assert all(a <= b + 0.01 for a, b in zip(v, v[1:]))


@pytest.fixture(scope="module")
def amplitude_sets():
    cfg = MeasurementConfig(n_space=40)
    return {a: simulate_basis(SIGMA_DISK, cfg, amplitude=a) for a in (1.0, 1e-3, 7.0)}


def _amplitude_spread(profile, sets, reorthogonalize=True):
    index = STauIndex.for_data(profile, sets[1.0])

    def volume(a):
        return solve_control(index, sets[a], reorthogonalize=reorthogonalize).volume_estimate

    ref = volume(1.0)
    return max(abs(volume(a) / ref - 1) for a in (1e-3, 7.0))


AMPLITUDE_PROFILES = [DiskProbe(0.5, 0.2), DiskProbe(0.5, 0.3), DiskProbe(0.0, 0.4), HalfSpace(0.3), HalfSpace(0.5)]


@pytest.mark.parametrize("profile", AMPLITUDE_PROFILES, ids=repr)
def test_volume_invariant_under_basis_amplitude(profile, amplitude_sets):
    # reorthogonalized CG keeps the rounding of the amplitude normalization from growing
    assert _amplitude_spread(profile, amplitude_sets) < 1e-8


@pytest.mark.xfail(reason="ten CG steps on a shallow strip resolve eigenvalues below rounding level; "
                          "the iterate itself is ill-conditioned (about 1e-5 relative)", strict=False)
def test_volume_invariant_under_basis_amplitude_shallow_strip(amplitude_sets):
    assert _amplitude_spread(HalfSpace(0.1), amplitude_sets) < 1e-8


@pytest.mark.parametrize("profile", AMPLITUDE_PROFILES, ids=repr)
def test_plain_cg_amplitude_spread_stays_far_below_threshold(profile, amplitude_sets):
    """Plain CG amplifies the rounding of the normalization; the spread stays
    orders of magnitude below the detection thresholds (>= 5e-4 area)."""
    assert _amplitude_spread(profile, amplitude_sets, reorthogonalize=False) < 1e-3


def test_reorthogonalization_agrees_on_noiseless_data(empty100):
    index = STauIndex.for_data(DiskProbe(0.5, 0.3), empty100)
    a = solve_control(index, empty100, reorthogonalize=False)
    b = solve_control(index, empty100, reorthogonalize=True)
    assert a.volume_estimate == pytest.approx(b.volume_estimate, rel=1e-3)


def test_default_reorthogonalizes_only_noiseless_data(empty100):
    index = STauIndex.for_data(DiskProbe(0.5, 0.3), empty100)
    assert solve_control(index, empty100).volume_estimate == solve_control(
        index, empty100, reorthogonalize=True).volume_estimate
    noisy = add_awgn(empty100, 14, 1)
    assert solve_control(index, noisy).volume_estimate == solve_control(
        index, noisy, reorthogonalize=False).volume_estimate


def test_solution_csv(empty100):
    sol = solve_control(STauIndex.for_data(HalfSpace(0.1), empty100), empty100, n_cg=3)
    rows = list(csv.reader(io.StringIO(sol.to_csv())))
    assert rows[0][:4] == ["alpha", "n_cg", "slot_count", "volume_estimate"]
    assert len(rows[0]) == len(rows[1]) == 4 + len(sol.residual_history)
    assert float(rows[1][3]) == sol.volume_estimate
    assert int(rows[1][2]) == 800


# -- Tikhonov lemma ----------------------------------------------------------------


def test_tikhonov_diagonal_example():
    alphas = [1.0, 0.1, 0.01]
    rep = tikhonov_limit_check(np.diag([1.0, 0.0]), np.array([1.0, 1.0]), alphas)
    assert rep.rank == 1
    assert np.allclose(rep.errors, [a / (1 + a) for a in alphas], rtol=1e-12)
    assert rep.nonincreasing()


def test_tikhonov_against_normal_equations():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(5, 3)) @ rng.normal(size=(3, 5))
    y = rng.normal(size=5)
    rep = tikhonov_limit_check(A, y, [1e-2, 1e-12])
    assert rep.rank == 3
    Q, _ = np.linalg.qr(A @ rng.normal(size=(5, 3)))
    Py = Q @ (Q.T @ y)
    x = np.linalg.solve(A.T @ A + 1e-2 * np.eye(5), A.T @ y)
    assert rep.errors[0] == pytest.approx(np.linalg.norm(A @ x - Py), rel=1e-8)
    assert rep.errors[1] < 1e-6


@given(m=st.integers(2, 10), n=st.integers(2, 10), seed=st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_tikhonov_limit_property(m, n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, min(m, n)))
    A = rng.normal(size=(m, k)) @ rng.normal(size=(k, n))
    rep = tikhonov_limit_check(A, rng.normal(size=m), 10.0 ** np.arange(2, -13, -1))
    assert rep.rank == k
    assert rep.errors[-1] < 1e-6
    assert rep.nonincreasing(1e-12)
