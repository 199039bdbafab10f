"""System constants, scene descriptions, unit conversions and config file I/O.

Internally everything is stored in base units: watts, hertz, bits, seconds,
meters and linear (not dB) gains.  Config files may use human-friendly keys
with explicit unit suffixes (``_dbm``, ``_db``, ``_mb``) or the lossless
base-unit spellings (``_w``, ``_bits``, plain linear); ``save_config`` emits
the lossless spellings so that load(save(cfg)) round-trips exactly.  The full
schema is documented in the README.
"""

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

# Decimal megabyte convention used throughout: 1 MB = 8e6 bits.
BITS_PER_MEGABYTE = 8.0e6


class ConfigError(ValueError):
    """Raised when a config file fails to parse or violates the schema."""


def db_to_linear(value_db: float) -> float:
    """dB -> linear power ratio, 10**(x/10)."""
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float:
    return 10.0 * math.log10(value)


def dbm_to_watts(value_dbm: float) -> float:
    """dBm -> watts, 10**((x-30)/10)."""
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def watts_to_dbm(value_w: float) -> float:
    return 30.0 + 10.0 * math.log10(value_w)


@dataclass(frozen=True)
class SystemConfig:
    """All system-level constants. Defaults are the reference profile values.

    Immutable after construction; safe to share across threads.
    """

    num_users: int = 10                 # K
    num_antennas: int = 64              # M (server ULA)
    num_ris_elements: int = 16          # N
    bandwidth: float = 2.0e6            # Hz
    uplink_power: float = 0.5           # W per user
    max_transmit_power: float = dbm_to_watts(43.0)   # W, total downlink
    server_compute: float = 1.0e10      # cycles/s
    cycles_per_bit: float = 50.0
    per_sample_bits: float = 8.0e6      # rendering input size per resolution unit
    feedback_bits_per_resolution: float = 8.0e6
    resolution_min: float = 1.0
    resolution_max: float = 2.0
    latency_max: float = 0.5            # s, round-trip tolerance
    noise_ul: float = dbm_to_watts(-60.0)   # W
    noise_dl: float = dbm_to_watts(-50.0)   # W
    pathloss_ref: float = db_to_linear(-20.0)   # linear gain at 1 m
    pathloss_exp_direct: float = 3.0
    pathloss_exp_user_ris: float = 2.0
    pathloss_exp_ris_server: float = 2.0
    rician_user_ris: float = db_to_linear(8.0)       # linear
    rician_ris_server_ul: float = db_to_linear(6.0)
    rician_ris_server_dl: float = db_to_linear(7.0)
    penalty_coeff: float = 1.0          # latency penalty weight in the reward
    server_position: tuple = (0.0, 0.0, 40.0)   # m
    ris_position: tuple = (75.0, 100.0, 20.0)   # m
    weighted_water_filling: bool = False

    @property
    def perception_max(self) -> float:
        """Supremum of the perception score over the allowed resolution range."""
        return math.log(self.resolution_max / self.resolution_min)

    @property
    def channel_feature_scale(self) -> float:
        """Fixed rescaling applied to channel entries in state features.

        Chosen so that a direct channel at the server-RIS distance has O(1)
        entries; part of the documented feature encoding.
        """
        d_ref = float(np.linalg.norm(np.asarray(self.server_position) -
                                     np.asarray(self.ris_position)))
        return 1.0 / math.sqrt(self.pathloss_ref * d_ref ** (-self.pathloss_exp_direct))

    def server_xyz(self) -> np.ndarray:
        return np.asarray(self.server_position, dtype=float)

    def ris_xyz(self) -> np.ndarray:
        return np.asarray(self.ris_position, dtype=float)


@dataclass(frozen=True)
class SceneSpec:
    """One digital-twin scene: geometry, per-user weights/payloads, horizon, seed."""

    scene_id: int
    horizon: int                    # slots per episode
    user_positions: tuple           # K tuples of (x, y, z) meters
    weights: tuple                  # K tuples of (subjective, objective), sum 1
    uplink_payload_bits: tuple      # K
    seed: int

    @property
    def num_users(self) -> int:
        return len(self.user_positions)

    def positions_xyz(self) -> np.ndarray:
        return np.asarray(self.user_positions, dtype=float)

    def weights_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def payload_array(self) -> np.ndarray:
        return np.asarray(self.uplink_payload_bits, dtype=float)


def validate_system(cfg: SystemConfig) -> list:
    """Return the list of violated SystemConfig invariants (empty = ok)."""
    bad = []
    for name in ("bandwidth", "uplink_power", "max_transmit_power",
                 "server_compute", "cycles_per_bit", "per_sample_bits",
                 "feedback_bits_per_resolution", "noise_ul", "noise_dl"):
        if getattr(cfg, name) <= 0:
            bad.append(f"{name} must be strictly positive")
    if cfg.num_users < 1 or cfg.num_antennas < 1 or cfg.num_ris_elements < 1:
        bad.append("num_users, num_antennas, num_ris_elements must be positive")
    if cfg.num_users > cfg.num_antennas:
        bad.append("K <= M required for ZF")
    if not cfg.resolution_min < cfg.resolution_max:
        bad.append("resolution_min must be < resolution_max")
    if cfg.resolution_min <= 0:
        bad.append("resolution_min must be strictly positive")
    if not 0 < cfg.pathloss_ref <= 1:
        bad.append("pathloss_ref must lie in (0, 1]")
    if cfg.latency_max <= 0:
        bad.append("latency_max must be strictly positive")
    for name in ("rician_user_ris", "rician_ris_server_ul", "rician_ris_server_dl"):
        if getattr(cfg, name) < 0:
            bad.append(f"{name} must be non-negative")
    return bad


def validate_scene(scene: SceneSpec, cfg: SystemConfig) -> list:
    """Return every violated SceneSpec/SystemConfig invariant by name (empty = ok)."""
    bad = list(validate_system(cfg))
    if scene.horizon < 1:
        bad.append("horizon must be >= 1")
    if scene.num_users != cfg.num_users:
        bad.append("scene user count must match num_users")
    w = scene.weights_array().reshape(-1, 2)
    if not np.allclose(w.sum(axis=1), 1.0, atol=1e-9):
        bad.append("weights must sum to 1")
    if np.any(w < 0) or np.any(w > 1):
        bad.append("weights must lie in [0, 1]")
    if np.any(scene.payload_array() <= 0):
        bad.append("uplink payload must be strictly positive")
    pos = scene.positions_xyz()
    if pos.shape != (scene.num_users, 3):
        bad.append("user positions must be K x 3")
    return bad


# ---------------------------------------------------------------------------
# Config file schema.
#
# Each system field may be given under exactly one of its accepted keys; the
# first spelling listed is the lossless one emitted by save_config.
# Converters map file value -> internal value.

_IDENT = (lambda v: v, lambda v: v)
_DBM = (dbm_to_watts, watts_to_dbm)
_DB = (db_to_linear, linear_to_db)
_MB = (lambda v: v * BITS_PER_MEGABYTE, lambda v: v / BITS_PER_MEGABYTE)

# field -> list of (key, to_internal) ; first entry also provides from_internal
_SYSTEM_KEYS = {
    "num_users": [("num_users", _IDENT)],
    "num_antennas": [("num_antennas", _IDENT)],
    "num_ris_elements": [("num_ris_elements", _IDENT)],
    "bandwidth": [("bandwidth_hz", _IDENT)],
    "uplink_power": [("uplink_power_w", _IDENT), ("uplink_power_dbm", _DBM)],
    "max_transmit_power": [("max_transmit_power_w", _IDENT),
                           ("max_transmit_power_dbm", _DBM)],
    "server_compute": [("server_compute_hz", _IDENT)],
    "cycles_per_bit": [("cycles_per_bit", _IDENT)],
    "per_sample_bits": [("per_sample_bits", _IDENT), ("per_sample_mb", _MB)],
    "feedback_bits_per_resolution": [("feedback_per_resolution_bits", _IDENT),
                                     ("feedback_per_resolution_mb", _MB)],
    "resolution_min": [("resolution_min", _IDENT)],
    "resolution_max": [("resolution_max", _IDENT)],
    "latency_max": [("latency_max_s", _IDENT)],
    "noise_ul": [("noise_ul_w", _IDENT), ("noise_ul_dbm", _DBM)],
    "noise_dl": [("noise_dl_w", _IDENT), ("noise_dl_dbm", _DBM)],
    "pathloss_ref": [("pathloss_ref", _IDENT), ("pathloss_ref_db", _DB)],
    "pathloss_exp_direct": [("pathloss_exp_direct", _IDENT)],
    "pathloss_exp_user_ris": [("pathloss_exp_user_ris", _IDENT)],
    "pathloss_exp_ris_server": [("pathloss_exp_ris_server", _IDENT)],
    "rician_user_ris": [("rician_user_ris", _IDENT), ("rician_user_ris_db", _DB)],
    "rician_ris_server_ul": [("rician_ris_server_ul", _IDENT),
                             ("rician_ris_server_ul_db", _DB)],
    "rician_ris_server_dl": [("rician_ris_server_dl", _IDENT),
                             ("rician_ris_server_dl_db", _DB)],
    "penalty_coeff": [("penalty_coeff", _IDENT)],
    "server_position": [("server_position_m", _IDENT)],
    "ris_position": [("ris_position_m", _IDENT)],
    "weighted_water_filling": [("weighted_water_filling", _IDENT)],
}

_INT_FIELDS = {"num_users", "num_antennas", "num_ris_elements"}
_TUPLE_FIELDS = {"server_position", "ris_position"}


def _parse_system(section: dict) -> SystemConfig:
    known = {key for entries in _SYSTEM_KEYS.values() for key, _ in entries}
    for key in section:
        if key not in known:
            raise ConfigError(f"unknown system key: {key}")
    kwargs = {}
    for field, entries in _SYSTEM_KEYS.items():
        present = [(key, conv) for key, conv in entries if key in section]
        if len(present) > 1:
            names = ", ".join(key for key, _ in present)
            raise ConfigError(f"conflicting keys for {field}: {names}")
        if not present:
            continue
        key, (to_internal, _) = present[0]
        value = section[key]
        try:
            if field in _TUPLE_FIELDS:
                value = tuple(float(x) for x in value)
                if len(value) != 3:
                    raise ValueError("need 3 coordinates")
            elif field in _INT_FIELDS:
                value = int(value)
            elif field == "weighted_water_filling":
                value = bool(value)
            else:
                value = float(to_internal(float(value)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for key {key}: {exc}") from exc
        kwargs[field] = value
    cfg = SystemConfig(**kwargs)
    bad = validate_system(cfg)
    if bad:
        raise ConfigError("; ".join(bad))
    return cfg


def _parse_scene(entry: dict, cfg: SystemConfig, index: int) -> SceneSpec:
    try:
        payload_keys = [k for k in ("uplink_payload_bits", "uplink_payload_mb")
                        if k in entry]
        if len(payload_keys) != 1:
            raise ConfigError(
                f"scene {index}: exactly one of uplink_payload_bits / "
                f"uplink_payload_mb required")
        raw_payload = entry[payload_keys[0]]
        factor = 1.0 if payload_keys[0] == "uplink_payload_bits" else BITS_PER_MEGABYTE
        scene = SceneSpec(
            scene_id=int(entry["scene_id"]),
            horizon=int(entry["horizon"]),
            user_positions=tuple(tuple(float(x) for x in p)
                                 for p in entry["user_positions_m"]),
            weights=tuple(tuple(float(x) for x in w) for w in entry["weights"]),
            uplink_payload_bits=tuple(float(x) * factor for x in raw_payload),
            seed=int(entry["seed"]),
        )
    except KeyError as exc:
        raise ConfigError(f"scene {index}: missing key {exc.args[0]}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scene {index}: {exc}") from exc
    bad = validate_scene(scene, cfg)
    if bad:
        raise ConfigError(f"scene {index}: " + "; ".join(bad))
    return scene


def load_config(path) -> tuple:
    """Load and validate a config file.

    Returns (SystemConfig, list of SceneSpec). Omitted system keys default to
    the reference profile values.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    cfg = _parse_system(doc.get("system", {}))
    scenes = [_parse_scene(entry, cfg, i)
              for i, entry in enumerate(doc.get("scenes", []))]
    return cfg, scenes


def system_to_dict(cfg: SystemConfig) -> dict:
    out = {}
    for field, entries in _SYSTEM_KEYS.items():
        key, (_, from_internal) = entries[0]
        value = getattr(cfg, field)
        if field in _TUPLE_FIELDS:
            out[key] = list(value)
        elif field in _INT_FIELDS or field == "weighted_water_filling":
            out[key] = value
        else:
            out[key] = from_internal(value)
    return out


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "scene_id": scene.scene_id,
        "horizon": scene.horizon,
        "user_positions_m": [list(p) for p in scene.user_positions],
        "weights": [list(w) for w in scene.weights],
        "uplink_payload_bits": list(scene.uplink_payload_bits),
        "seed": scene.seed,
    }


def save_config(cfg: SystemConfig, scenes, path, training: dict = None) -> None:
    """Write a config file in the lossless spellings (round-trips exactly)."""
    doc = {"system": system_to_dict(cfg),
           "scenes": [scene_to_dict(s) for s in scenes]}
    if training:
        doc["training"] = dict(training)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_training_section(path) -> dict:
    """Return the optional top-level `training` object of a config file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    training = doc.get("training", {})
    if not isinstance(training, dict):
        raise ConfigError("training section must be an object")
    return training


def config_hash(cfg: SystemConfig, scenes, training: dict = None) -> str:
    """Short stable hash identifying a full experiment configuration."""
    doc = {"system": system_to_dict(cfg),
           "scenes": [scene_to_dict(s) for s in scenes],
           "training": dict(training or {})}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Profiles and scene sampling.

def table1_profile() -> SystemConfig:
    """Reference-scale profile (K=10, M=64, N=16)."""
    return SystemConfig()


# Desk-scale payload range in bits (0.02 .. 0.08 MB per interaction sample).
DESK_PAYLOAD_RANGE = (0.02 * BITS_PER_MEGABYTE, 0.08 * BITS_PER_MEGABYTE)
DESK_HORIZON = 20


def desk_profile() -> SystemConfig:
    """Desk-scale profile: small arrays and payloads, same formulas.

    K=4, M=8, N=8; sample and feedback sizes shrunk so the latency budget and
    downlink power floors are attainable at M=8 (see README for the sizing
    rationale).
    """
    return replace(
        table1_profile(),
        num_users=4,
        num_antennas=8,
        num_ris_elements=8,
        per_sample_bits=0.5 * BITS_PER_MEGABYTE,
        feedback_bits_per_resolution=0.05 * BITS_PER_MEGABYTE,
    )


def make_scenes(cfg: SystemConfig, count: int, master_seed: int, *,
                first_id: int = 0, horizon: int = DESK_HORIZON,
                payload_range=DESK_PAYLOAD_RANGE) -> list:
    """Sample `count` scenes deterministically from a master seed.

    Users are placed on the ground (z = 1.5 m) in the quadrant biased toward
    the RIS corner so the cascaded path matters; subjective weights are drawn
    from U[0.2, 0.8].
    """
    scenes = []
    for i in range(count):
        sid = first_id + i
        rng = np.random.default_rng(np.random.SeedSequence(master_seed,
                                                           spawn_key=(90, sid)))
        xy = rng.uniform((35.0, 50.0), (100.0, 100.0), size=(cfg.num_users, 2))
        positions = tuple((float(x), float(y), 1.5) for x, y in xy)
        we = rng.uniform(0.2, 0.8, size=cfg.num_users)
        weights = tuple((float(w), float(1.0 - w)) for w in we)
        payloads = tuple(float(p) for p in
                         rng.uniform(payload_range[0], payload_range[1],
                                     size=cfg.num_users))
        scenes.append(SceneSpec(
            scene_id=sid, horizon=horizon, user_positions=positions,
            weights=weights, uplink_payload_bits=payloads,
            seed=int(rng.integers(0, 2**63 - 1)),
        ))
    return scenes


def rng_for(master_seed: int, *key) -> np.random.Generator:
    """Derive an independent generator from a master seed and an integer key path."""
    return np.random.default_rng(np.random.SeedSequence(master_seed,
                                                        spawn_key=tuple(key)))
