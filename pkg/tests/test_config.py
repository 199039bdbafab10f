import json
import math

import numpy as np
import pytest

from risdt.config import (ConfigError, SceneSpec, SystemConfig, config_hash,
                          db_to_linear, dbm_to_watts, desk_profile,
                          load_config, make_scenes, save_config,
                          scene_to_dict, system_to_dict, table1_profile,
                          validate_scene)


def test_db_to_linear_examples():
    assert db_to_linear(0.0) == 1.0
    assert db_to_linear(-20.0) == pytest.approx(0.01, rel=1e-12)
    # 43 dBm -> 10**1.3 W
    assert dbm_to_watts(43.0) == pytest.approx(19.952623149688797, rel=1e-12)


def test_db_to_linear_is_multiplicative_and_increasing():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = rng.uniform(-40, 40, 2)
        assert db_to_linear(a + b) == pytest.approx(
            db_to_linear(a) * db_to_linear(b), rel=1e-12)
        if a < b:
            assert db_to_linear(a) < db_to_linear(b)


def _scene(cfg, **overrides):
    base = dict(
        scene_id=0, horizon=10,
        user_positions=tuple((50.0 + i, 60.0, 1.5)
                             for i in range(cfg.num_users)),
        weights=tuple((0.5, 0.5) for _ in range(cfg.num_users)),
        uplink_payload_bits=tuple(2e5 for _ in range(cfg.num_users)),
        seed=1,
    )
    base.update(overrides)
    return SceneSpec(**base)


def test_validate_scene_ok():
    cfg = desk_profile()
    assert validate_scene(_scene(cfg), cfg) == []


def test_validate_scene_weight_sum():
    cfg = desk_profile()
    bad = _scene(cfg, weights=tuple((0.7, 0.7) for _ in range(cfg.num_users)))
    assert any("weights must sum to 1" in v for v in validate_scene(bad, cfg))


def test_validate_scene_zf_solvability():
    from dataclasses import replace
    cfg = replace(desk_profile(), num_users=10, num_antennas=8)
    violations = validate_scene(_scene(cfg), cfg)
    assert any("K <= M required for ZF" in v for v in violations)


@pytest.mark.parametrize("overrides,needle", [
    (dict(horizon=0), "horizon"),
    (dict(uplink_payload_bits=(0.0, 2e5, 2e5, 2e5)), "payload"),
    (dict(weights=((1.2, -0.2), (0.5, 0.5), (0.5, 0.5), (0.5, 0.5))), "weights"),
])
def test_validate_scene_one_violation_each(overrides, needle):
    cfg = desk_profile()
    violations = validate_scene(_scene(cfg, **overrides), cfg)
    assert any(needle in v for v in violations)


def test_load_config_empty_scene_list(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"system": {}, "scenes": []}))
    cfg, scenes = load_config(path)
    assert scenes == []
    assert cfg == table1_profile()


def test_load_config_defaults_bandwidth(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"system": {"num_users": 4, "num_antennas": 8,
                                           "num_ris_elements": 8}}))
    cfg, _ = load_config(path)
    assert cfg.bandwidth == 2.0e6


def test_load_config_resolution_ordering_error(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(
        {"system": {"resolution_min": 2.0, "resolution_max": 1.0}}))
    with pytest.raises(ConfigError, match="resolution_min.*resolution_max"):
        load_config(path)


def test_load_config_unknown_and_conflicting_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"system": {"does_not_exist": 1}}))
    with pytest.raises(ConfigError, match="does_not_exist"):
        load_config(path)
    path.write_text(json.dumps(
        {"system": {"noise_ul_dbm": -60, "noise_ul_w": 1e-9}}))
    with pytest.raises(ConfigError, match="noise_ul"):
        load_config(path)


def test_load_config_parse_error(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="parse"):
        load_config(path)


def test_dbm_keys_convert(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"system": {"max_transmit_power_dbm": 43,
                                           "pathloss_ref_db": -20,
                                           "per_sample_mb": 1.0}}))
    cfg, _ = load_config(path)
    assert cfg.max_transmit_power == pytest.approx(dbm_to_watts(43))
    assert cfg.pathloss_ref == pytest.approx(0.01)
    assert cfg.per_sample_bits == 8.0e6


def test_save_load_round_trip(tmp_path):
    cfg = desk_profile()
    scenes = make_scenes(cfg, 3, 42)
    path = tmp_path / "rt.json"
    save_config(cfg, scenes, path)
    cfg2, scenes2 = load_config(path)
    assert cfg2 == cfg
    assert scenes2 == scenes


def test_config_hash_sensitivity():
    cfg = desk_profile()
    scenes = make_scenes(cfg, 2, 3)
    h1 = config_hash(cfg, scenes)
    h2 = config_hash(cfg, scenes)
    assert h1 == h2
    from dataclasses import replace
    h3 = config_hash(replace(cfg, bandwidth=1e6), scenes)
    assert h3 != h1


def test_make_scenes_deterministic_and_valid():
    cfg = desk_profile()
    a = make_scenes(cfg, 4, 9)
    b = make_scenes(cfg, 4, 9)
    assert a == b
    for scene in a:
        assert validate_scene(scene, cfg) == []
    assert len({s.seed for s in a}) == 4


def test_perception_max():
    cfg = desk_profile()
    assert cfg.perception_max == pytest.approx(math.log(2.0))
