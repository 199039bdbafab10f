import io

import numpy as np
import pytest

from risdt.channel import (ChannelSet, PhaseShiftMatrix, compose_effective,
                           draw_cn, effective_channel, path_gain,
                           read_channel_records, rician_channel,
                           sample_channel_set, scene_geometry, ula_steering,
                           write_channel_record)
from risdt.config import SceneSpec, db_to_linear, desk_profile, make_scenes


def test_path_gain_examples():
    assert path_gain(0.01, 1.0, 2.0) == pytest.approx(0.01)
    assert path_gain(0.01, 100.0, 2.0) == pytest.approx(1e-6)
    assert db_to_linear(-20.0) == pytest.approx(0.01)


def test_path_gain_domain_error():
    with pytest.raises(ValueError):
        path_gain(0.01, 0.0, 2.0)
    with pytest.raises(ValueError):
        path_gain(0.01, -1.0, 2.0)


def test_ula_steering_examples():
    assert np.allclose(ula_steering(0.0, 4), np.ones(4))
    assert np.allclose(ula_steering(1.234, 1), [1.0])
    got = ula_steering(np.pi / 2, 2)
    assert np.allclose(got, [1.0, -1.0], atol=1e-12)
    assert np.allclose(np.abs(ula_steering(0.7, 16)), 1.0)


def test_draw_cn_moments_and_determinism():
    rng = np.random.default_rng(0)
    h = draw_cn(100_000, None, rng)
    assert abs(np.mean(h)) < 0.02                  # 3/sqrt(2e5) CLT bound
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.02)
    a = draw_cn(4, 3, np.random.default_rng(7))
    b = draw_cn(4, 3, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_rician_limits():
    los = ula_steering(0.3, 8)
    big = rician_channel(los, 1e12, 2.0, np.random.default_rng(1))
    assert np.allclose(big, np.sqrt(2.0) * los, rtol=1e-5)
    # factor 0 reproduces the raw NLoS draw exactly
    got = rician_channel(los, 0.0, 4.0, np.random.default_rng(3))
    expected = 2.0 * draw_cn(8, None, np.random.default_rng(3))
    assert np.array_equal(got, expected)


def test_rician_second_moment():
    los = ula_steering(0.2, 4)
    rng = np.random.default_rng(5)
    acc = 0.0
    n = 25_000
    for _ in range(n):
        h = rician_channel(los, 1.0, 1.0, rng)
        acc += np.sum(np.abs(h) ** 2)
    assert acc / (n * 4) == pytest.approx(1.0, abs=0.02)


def test_effective_channel_examples():
    theta = PhaseShiftMatrix(np.array([np.pi]))
    out = effective_channel(np.array([1.0 + 0j]), np.array([[1.0 + 0j]]),
                            theta, np.array([1.0 + 0j]))
    assert abs(out[0]) < 1e-12

    rng = np.random.default_rng(2)
    direct = draw_cn(4, None, rng)
    ris = draw_cn(4, 3, rng)
    user = draw_cn(3, None, rng)
    th = PhaseShiftMatrix(rng.uniform(0, 2 * np.pi, 3))
    assert np.array_equal(effective_channel(direct, ris, th, np.zeros(3)),
                          direct)
    # linear in the direct term
    f0 = effective_channel(np.zeros(4, dtype=complex), ris, th, user)
    f1 = effective_channel(direct, ris, th, user)
    f2 = effective_channel(2.0 * direct, ris, th, user)
    assert np.allclose(f2 - f0, 2.0 * (f1 - f0))


def test_effective_channel_dimension_mismatch():
    theta = PhaseShiftMatrix(np.zeros(3))
    with pytest.raises(ValueError):
        effective_channel(np.zeros(4, dtype=complex),
                          np.zeros((4, 2), dtype=complex), theta,
                          np.zeros(3, dtype=complex))


def test_phase_shift_unit_modulus_and_range():
    rng = np.random.default_rng(0)
    theta = PhaseShiftMatrix(rng.uniform(0, 2 * np.pi, 64))
    assert np.allclose(np.abs(theta.diagonal()) ** 2, 1.0, atol=1e-14)
    with pytest.raises(ValueError):
        PhaseShiftMatrix(np.array([2 * np.pi]))
    with pytest.raises(ValueError):
        PhaseShiftMatrix(np.array([-0.1]))


def _tiny_scene(cfg):
    return SceneSpec(scene_id=0, horizon=5,
                     user_positions=tuple((75.0, 100.0, 18.5)
                                          for _ in range(cfg.num_users)),
                     weights=tuple((0.5, 0.5) for _ in range(cfg.num_users)),
                     uplink_payload_bits=tuple(2e5
                                               for _ in range(cfg.num_users)),
                     seed=0)


def test_scene_geometry_distance():
    cfg = desk_profile()
    scene = _tiny_scene(cfg)
    geo = scene_geometry(scene, cfg)
    # q_k = [75, 100, 18.5], q_r = [75, 100, 20] -> 1.5 m
    assert geo.dist_user_ris[0] == pytest.approx(1.5)


def test_phase_flip_negates_cascade():
    # single-element, zero-direct setup: theta pi negates the effective channel
    base = ChannelSet(
        direct_ul=np.zeros((1, 1), dtype=complex),
        direct_dl=np.zeros((1, 1), dtype=complex),
        user_ris_ul=np.ones((1, 1), dtype=complex),
        ris_user_dl=np.ones((1, 1), dtype=complex),
        ris_server_ul=np.ones((1, 1), dtype=complex),
        server_ris_dl=np.ones((1, 1), dtype=complex),
        effective_ul=np.zeros((1, 1), dtype=complex),
        effective_dl=np.zeros((1, 1), dtype=complex))
    a = compose_effective(base, PhaseShiftMatrix(np.zeros(1)))
    b = compose_effective(base, PhaseShiftMatrix(np.array([np.pi])))
    assert np.allclose(a.effective_ul, -b.effective_ul)


def test_direct_channel_second_moment():
    cfg = desk_profile()
    scene = make_scenes(cfg, 1, 3)[0]
    geo = scene_geometry(scene, cfg)
    rng = np.random.default_rng(11)
    theta = PhaseShiftMatrix(np.zeros(cfg.num_ris_elements))
    acc = 0.0
    n = 10_000
    for _ in range(n):
        cs = sample_channel_set(scene, cfg, theta, rng, geometry=geo)
        acc += np.sum(np.abs(cs.direct_ul[0]) ** 2)
    expected = cfg.num_antennas * geo.gain_direct[0]
    assert acc / n == pytest.approx(expected, rel=0.03)


def test_sample_channel_set_determinism_and_composition():
    cfg = desk_profile()
    scene = make_scenes(cfg, 1, 3)[0]
    theta = PhaseShiftMatrix(np.linspace(0, 6.0, cfg.num_ris_elements))
    a = sample_channel_set(scene, cfg, theta, np.random.default_rng(5))
    b = sample_channel_set(scene, cfg, theta, np.random.default_rng(5))
    for name in ("direct_ul", "user_ris_ul", "ris_server_ul", "effective_ul",
                 "effective_dl"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    # recomposition from the stored parts is bitwise identical
    c = compose_effective(a, theta)
    assert np.array_equal(c.effective_ul, a.effective_ul)
    assert np.array_equal(c.effective_dl, a.effective_dl)


def test_channel_dump_round_trip():
    cfg = desk_profile()
    scene = make_scenes(cfg, 1, 3)[0]
    theta = PhaseShiftMatrix(np.zeros(cfg.num_ris_elements))
    rng = np.random.default_rng(9)
    records = [sample_channel_set(scene, cfg, theta, rng) for _ in range(3)]
    buf = io.BytesIO()
    for slot, cs in enumerate(records, start=1):
        write_channel_record(buf, cs, slot=slot, seed=9)
    buf.seek(0)
    loaded = list(read_channel_records(buf))
    assert len(loaded) == 3
    for slot, (header, cs) in enumerate(loaded, start=1):
        assert header["slot"] == slot and header["seed"] == 9
        original = records[slot - 1]
        for name in ("direct_ul", "effective_dl"):
            assert np.allclose(getattr(cs, name), getattr(original, name),
                               atol=1e-6)   # complex64 storage precision
