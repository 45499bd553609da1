import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dart.geometry import build_direction_grid, subdivide
from dart.materials import init_np, init_p
from dart.precompute import precompute
from dart.scenes import box_mesh, two_room_mesh
from dart.spectral import SolverConfig
from dart.transport import (
    Detection,
    PositionError,
    ReceiverConfig,
    Renderer,
    SourceConfig,
    detect,
    direct_arrival,
    direct_path,
    render,
    tap_signal,
    trace_pair,
    trace_receiver,
    trace_source,
)

CFG = SolverConfig(T=128, gamma=1e-3, n_order=20)


def test_injection_completeness(cube_pre):
    inj = trace_source(cube_pre, SourceConfig((0.3, 0.4, 0.55), n_ray=10000), seed=3)
    # omnidirectional source: every anchor weight is one
    assert (inj.basis @ np.ones(128)).sum() == pytest.approx(1.0, rel=0.02)
    assert np.all(cube_pre.grid.front()[inj.index % cube_pre.grid.n_dir])


def test_detection_completeness(cube_pre):
    det = trace_receiver(cube_pre, ReceiverConfig((0.6, 0.45, 0.3), n_ray=10000), seed=3)
    assert det.weight.sum() == pytest.approx(4 * np.pi, rel=0.02)


def test_absorbing_room_gives_direct_only(small_cube_pre):
    pre = small_cube_pre
    m = init_np(pre.patches.n_patches, pre.grid)
    m.params["alpha_logit"][:] = -1e3
    src, rcv = SourceConfig((1.0, 1.2, 1.3), n_ray=2000), ReceiverConfig((2.0, 1.7, 1.1), n_ray=2000)
    res = render(pre, m, src, rcv, CFG, seed=1)
    assert np.all(res.reflected == 0)
    np.testing.assert_allclose(res.energy, direct_arrival(pre, src, rcv, CFG.T), rtol=1e-14)


def test_doubling_areas_halves_incident_radiance():
    grid = build_direction_grid(4, 4)
    s = np.sqrt(2.0)
    pres = [precompute(subdivide(box_mesh((L, L, L)), L), grid, K=4, M=64, M_geometry=4096, seed=0)
            for L in (1.0, s)]
    totals = []
    for L, pre in zip((1.0, s), pres):
        tr = trace_pair(pre, SourceConfig((0.3 * L, 0.4 * L, 0.6 * L), n_ray=3000),
                        ReceiverConfig((0.7 * L, 0.5 * L, 0.5 * L), n_ray=100), seed=4)
        rend = Renderer(pre, np.ones((16, 16), bool), [tr], CFG, reduced=False)
        _, sig = rend.incident_signals(tr, np.ones(128), 256)
        totals.append(sig.sum())
    assert totals[1] == pytest.approx(totals[0] / 2, rel=1e-6)


def test_detect_shifts_and_weights():
    det = Detection(np.array([0]), np.array([0.25]), np.array([3.0]))
    L = np.zeros((1, 16))
    L[0, 5] = 2.0
    out = detect(L, det, np.array([0]), 16)
    expect = np.zeros(16)
    expect[8] = 0.5
    np.testing.assert_allclose(out, expect)
    assert np.all(detect(np.zeros((1, 16)), det, np.array([0]), 16) == 0)


def test_direct_one_meter(small_cube_pre):
    src, rcv = SourceConfig((1.0, 1.0, 1.0)), ReceiverConfig((2.0, 1.0, 1.0))
    path = direct_path(small_cube_pre, src, rcv)
    assert path.energy == pytest.approx(1 / (4 * np.pi), rel=1e-14)
    assert path.delay == pytest.approx(2.915451895, rel=1e-9)
    sig = direct_arrival(small_cube_pre, src, rcv, 16)
    assert sig.sum() == pytest.approx(1 / (4 * np.pi))
    # the two taps straddle the delay and their centroid sits on it
    n = np.arange(16)
    assert (n * sig).sum() / sig.sum() == pytest.approx(path.delay, abs=1e-12)
    assert np.flatnonzero(sig).tolist() == [2, 3]


def test_inverse_square_exact(small_cube_pre):
    a = direct_path(small_cube_pre, SourceConfig((0.5, 1.0, 1.0)), ReceiverConfig((1.25, 1.0, 1.0)))
    b = direct_path(small_cube_pre, SourceConfig((0.5, 1.0, 1.0)), ReceiverConfig((2.0, 1.0, 1.0)))
    assert b.energy * 4 == a.energy


def test_occluded_direct_is_zero():
    grid = build_direction_grid(2, 2)
    rooms = subdivide(two_room_mesh(door=(1.5, 2.5, 0.0)), 2.5)
    pre = precompute(rooms, grid, K=1, M=4, M_geometry=64, seed=0)
    sig = direct_arrival(pre, SourceConfig((1.0, 2.0, 1.0)), ReceiverConfig((4.0, 2.0, 1.0)), 64)
    assert np.all(sig == 0)


def test_position_checks(small_cube_pre):
    with pytest.raises(PositionError):
        direct_path(small_cube_pre, SourceConfig((1.0, 1.0, 1.0)), ReceiverConfig((1.0, 1.0, 1.0)))
    with pytest.raises(PositionError):
        trace_source(small_cube_pre, SourceConfig((5.0, 1.0, 1.0)), seed=0)
    with pytest.raises(PositionError):
        trace_receiver(small_cube_pre, ReceiverConfig((1.0, 1.0, 3.0)), seed=0)


def test_tap_signal_drops_late_taps():
    assert tap_signal(15.5, 16).tolist()[-1] == 0.5
    assert tap_signal(20.0, 16).sum() == 0


def test_render_matches_oracle_two_patches(pair_pre):
    from dart.oracle import echogram_oracle
    m = init_p(2, pair_pre.grid, "all", alpha=0.9)
    src = SourceConfig((0.2, 0.25, 0.4), n_ray=2000)
    rcv = ReceiverConfig((0.3, 0.2, 0.6), n_ray=2000)
    cfg = SolverConfig(T=64, gamma=1e-3, n_order=20)
    a = render(pair_pre, m, src, rcv, cfg, seed=2).energy
    b = echogram_oracle(pair_pre, m, src, rcv, cfg, seed=2).energy
    assert np.linalg.norm(a - b) <= 1e-3 * np.linalg.norm(b)


def test_trace_deterministic(small_cube_pre):
    src, rcv = SourceConfig((1.0, 1.2, 1.3), n_ray=500), ReceiverConfig((2.0, 1.7, 1.1), n_ray=500)
    a = trace_pair(small_cube_pre, src, rcv, seed=8, key=2)
    b = trace_pair(small_cube_pre, src, rcv, seed=8, key=2)
    assert np.array_equal(a.injection.basis, b.injection.basis)
    assert np.array_equal(a.detection.weight, b.detection.weight)
    assert np.array_equal(a.injection.index, np.sort(a.injection.index))
    c = trace_pair(small_cube_pre, src, rcv, seed=8, key=3)
    assert not np.array_equal(a.detection.weight, c.detection.weight)


@settings(max_examples=8)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["np", "p"]))
def test_echogram_nonnegative(small_cube_pre, seed, variant):
    rng = np.random.default_rng(seed)
    pre = small_cube_pre
    m = init_np(pre.patches.n_patches, pre.grid) if variant == "np" else init_p(pre.patches.n_patches, pre.grid)
    for k in m.params:
        m.params[k] = m.params[k] + rng.normal(0, 1.5, m.params[k].shape)
    m.params["kappa"] = np.abs(m.params["kappa"])
    pos = rng.uniform(0.3, 2.7, (2, 3))
    res = render(pre, m, SourceConfig(tuple(pos[0]), n_ray=300), ReceiverConfig(tuple(pos[1]), n_ray=300),
                 CFG, seed=seed % 1000)
    assert np.all(res.energy >= 0) and np.all(np.isfinite(res.energy))


def test_receiver_directivity_scales_direct(small_cube_pre):
    kappa = np.full(128, 0.5)
    src = SourceConfig((1.0, 1.0, 1.0))
    plain = direct_path(small_cube_pre, src, ReceiverConfig((2.0, 1.0, 1.0)))
    shaped = direct_path(small_cube_pre, src, ReceiverConfig((2.0, 1.0, 1.0), kappa=tuple(kappa)))
    assert shaped.energy == pytest.approx(0.5 * plain.energy, rel=1e-12)
