"""Per-slot channel generation for the RIS-assisted uplink and downlink.

Direct user-server links are Rayleigh (pure NLoS); user-RIS and RIS-server
links are Rician with geometry-derived line-of-sight steering.  Large-scale
quantities (distances, steering vectors) depend only on the scene; small-scale
fades are redrawn every slot.  Uplink and downlink fades are independent.
All functions are pure given an explicit numpy Generator.
"""

import json
from dataclasses import dataclass

import numpy as np

from .config import SceneSpec, SystemConfig


@dataclass(frozen=True)
class PhaseShiftMatrix:
    """Unit-amplitude reflection phases of the N RIS elements."""

    phases: np.ndarray   # radians, each in [0, 2*pi)

    def __post_init__(self):
        ph = np.asarray(self.phases, dtype=float)
        if not np.all(np.isfinite(ph)):
            raise ValueError("phases must be finite")
        if np.any(ph < 0) or np.any(ph >= 2 * np.pi):
            raise ValueError("phases must lie in [0, 2*pi)")
        object.__setattr__(self, "phases", ph)

    def diagonal(self) -> np.ndarray:
        """The diagonal entries e^{j*theta_n}; all unit modulus."""
        return np.exp(1j * self.phases)


@dataclass(frozen=True)
class ChannelSet:
    """All channel matrices of one slot. Per-user arrays are stacked on axis 0."""

    direct_ul: np.ndarray      # (K, M)
    direct_dl: np.ndarray      # (K, M)
    user_ris_ul: np.ndarray    # (K, N)
    ris_user_dl: np.ndarray    # (K, N)
    ris_server_ul: np.ndarray  # (M, N)
    server_ris_dl: np.ndarray  # (M, N)
    effective_ul: np.ndarray   # (K, M)
    effective_dl: np.ndarray   # (K, M)


def path_gain(ref_gain: float, distance: float, exponent: float) -> float:
    """Large-scale power gain ref_gain * d**(-exponent)."""
    if distance <= 0:
        raise ValueError("distance must be strictly positive")
    if ref_gain <= 0:
        raise ValueError("reference gain must be strictly positive")
    return ref_gain * distance ** (-exponent)


def ula_steering(angle: float, length: int) -> np.ndarray:
    """Half-wavelength ULA response: element m gets e^{-j*pi*m*sin(angle)}."""
    if length < 1:
        raise ValueError("length must be >= 1")
    m = np.arange(length)
    return np.exp(-1j * np.pi * m * np.sin(angle))


def draw_cn(rows: int, cols, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. circularly-symmetric complex normal entries, unit variance.

    cols=None yields a vector of shape (rows,).
    """
    shape = (rows,) if cols is None else (rows, cols)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def rician_channel(los: np.ndarray, factor: float, gain: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Rician fade around a unit-modulus LoS component.

    Returns sqrt(gain) * (sqrt(K/(K+1)) * los + sqrt(1/(K+1)) * NLoS) with the
    NLoS part freshly drawn; second moment per entry equals `gain` for any
    Rician factor.
    """
    if factor < 0:
        raise ValueError("Rician factor must be non-negative")
    if gain <= 0:
        raise ValueError("gain must be strictly positive")
    los = np.asarray(los)
    if los.ndim == 1:
        nlos = draw_cn(los.shape[0], None, rng)
    elif los.ndim == 2:
        nlos = draw_cn(los.shape[0], los.shape[1], rng)
    else:
        raise ValueError("los must be a vector or a matrix")
    w_los = np.sqrt(factor / (factor + 1.0))
    w_nlos = np.sqrt(1.0 / (factor + 1.0))
    return np.sqrt(gain) * (w_los * los + w_nlos * nlos)


def effective_channel(direct: np.ndarray, ris_link: np.ndarray,
                      theta: PhaseShiftMatrix, user_link: np.ndarray) -> np.ndarray:
    """Compose direct + ris_link @ diag(e^{j*theta}) @ user_link."""
    direct = np.asarray(direct)
    ris_link = np.asarray(ris_link)
    user_link = np.asarray(user_link)
    if ris_link.shape != (direct.shape[0], user_link.shape[0]):
        raise ValueError("inconsistent channel dimensions")
    return direct + ris_link @ (theta.diagonal() * user_link)


def elevation_angle(at: np.ndarray, toward: np.ndarray) -> float:
    """Steering angle at an array located at `at` toward node `toward`.

    Documented convention: arcsine of the height difference over the link
    distance (arrays are modeled as vertical ULAs).
    """
    delta = np.asarray(toward, dtype=float) - np.asarray(at, dtype=float)
    return float(np.arcsin(delta[2] / np.linalg.norm(delta)))


@dataclass(frozen=True)
class SceneGeometry:
    """Scene-constant large-scale quantities: distances, gains, LoS parts."""

    dist_user_server: np.ndarray    # (K,)
    dist_user_ris: np.ndarray       # (K,)
    dist_ris_server: float
    gain_direct: np.ndarray         # (K,)
    gain_user_ris: np.ndarray       # (K,)
    gain_ris_server: float
    los_user_ris: np.ndarray        # (K, N) steering at the RIS toward each user
    los_ris_server: np.ndarray      # (M, N) outer product of server/RIS steering


def scene_geometry(scene: SceneSpec, cfg: SystemConfig) -> SceneGeometry:
    users = scene.positions_xyz()
    q_a = cfg.server_xyz()
    q_r = cfg.ris_xyz()
    d_ka = np.linalg.norm(users - q_a, axis=1)
    d_kr = np.linalg.norm(users - q_r, axis=1)
    d_ra = float(np.linalg.norm(q_r - q_a))
    gain_direct = np.array([path_gain(cfg.pathloss_ref, d, cfg.pathloss_exp_direct)
                            for d in d_ka])
    gain_user_ris = np.array([path_gain(cfg.pathloss_ref, d, cfg.pathloss_exp_user_ris)
                              for d in d_kr])
    gain_ris_server = path_gain(cfg.pathloss_ref, d_ra, cfg.pathloss_exp_ris_server)
    los_user_ris = np.stack([ula_steering(elevation_angle(q_r, u), cfg.num_ris_elements)
                             for u in users])
    at_server = ula_steering(elevation_angle(q_a, q_r), cfg.num_antennas)
    at_ris = ula_steering(elevation_angle(q_r, q_a), cfg.num_ris_elements)
    los_ris_server = np.outer(at_server, at_ris.conj())
    return SceneGeometry(
        dist_user_server=d_ka, dist_user_ris=d_kr, dist_ris_server=d_ra,
        gain_direct=gain_direct, gain_user_ris=gain_user_ris,
        gain_ris_server=gain_ris_server,
        los_user_ris=los_user_ris, los_ris_server=los_ris_server,
    )


def compose_effective(channels: ChannelSet, theta: PhaseShiftMatrix) -> ChannelSet:
    """Recompose the effective channels of an existing slot under a new theta."""
    k = channels.direct_ul.shape[0]
    eff_ul = np.stack([effective_channel(channels.direct_ul[i],
                                         channels.ris_server_ul,
                                         theta, channels.user_ris_ul[i])
                       for i in range(k)])
    eff_dl = np.stack([effective_channel(channels.direct_dl[i],
                                         channels.server_ris_dl,
                                         theta, channels.ris_user_dl[i])
                       for i in range(k)])
    return ChannelSet(
        direct_ul=channels.direct_ul, direct_dl=channels.direct_dl,
        user_ris_ul=channels.user_ris_ul, ris_user_dl=channels.ris_user_dl,
        ris_server_ul=channels.ris_server_ul, server_ris_dl=channels.server_ris_dl,
        effective_ul=eff_ul, effective_dl=eff_dl,
    )


def sample_channel_set(scene: SceneSpec, cfg: SystemConfig,
                       theta: PhaseShiftMatrix, rng: np.random.Generator,
                       geometry: SceneGeometry = None) -> ChannelSet:
    """Draw one slot's fades and compose the effective channels under theta."""
    geo = geometry if geometry is not None else scene_geometry(scene, cfg)
    k, m, n = cfg.num_users, cfg.num_antennas, cfg.num_ris_elements

    direct_ul = np.stack([np.sqrt(geo.gain_direct[i]) * draw_cn(m, None, rng)
                          for i in range(k)])
    direct_dl = np.stack([np.sqrt(geo.gain_direct[i]) * draw_cn(m, None, rng)
                          for i in range(k)])
    user_ris_ul = np.stack([rician_channel(geo.los_user_ris[i], cfg.rician_user_ris,
                                           geo.gain_user_ris[i], rng)
                            for i in range(k)])
    ris_user_dl = np.stack([rician_channel(geo.los_user_ris[i], cfg.rician_user_ris,
                                           geo.gain_user_ris[i], rng)
                            for i in range(k)])
    ris_server_ul = rician_channel(geo.los_ris_server, cfg.rician_ris_server_ul,
                                   geo.gain_ris_server, rng)
    server_ris_dl = rician_channel(geo.los_ris_server, cfg.rician_ris_server_dl,
                                   geo.gain_ris_server, rng)

    partial = ChannelSet(
        direct_ul=direct_ul, direct_dl=direct_dl,
        user_ris_ul=user_ris_ul, ris_user_dl=ris_user_dl,
        ris_server_ul=ris_server_ul, server_ris_dl=server_ris_dl,
        effective_ul=np.zeros((k, m), dtype=complex),
        effective_dl=np.zeros((k, m), dtype=complex),
    )
    return compose_effective(partial, theta)


# ---------------------------------------------------------------------------
# Channel dump: per-slot JSON header line + raw complex64 payload.

CHANNEL_DUMP_FIELDS = ("direct_ul", "direct_dl", "user_ris_ul", "ris_user_dl",
                       "ris_server_ul", "server_ris_dl", "effective_ul",
                       "effective_dl")


def write_channel_record(fh, channels: ChannelSet, slot: int, seed: int) -> None:
    """Append one slot record: a JSON header line, then the arrays as
    row-major little-endian complex64 in CHANNEL_DUMP_FIELDS order."""
    header = {
        "slot": slot,
        "seed": seed,
        "dims": {name: list(getattr(channels, name).shape)
                 for name in CHANNEL_DUMP_FIELDS},
    }
    fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
    for name in CHANNEL_DUMP_FIELDS:
        arr = np.ascontiguousarray(getattr(channels, name),
                                   dtype=np.dtype("<c8"))
        fh.write(arr.tobytes())


def read_channel_records(fh):
    """Yield (header dict, ChannelSet) pairs from a channel dump stream."""
    while True:
        line = fh.readline()
        if not line:
            return
        header = json.loads(line.decode("utf-8"))
        arrays = {}
        for name in CHANNEL_DUMP_FIELDS:
            shape = tuple(header["dims"][name])
            nbytes = int(np.prod(shape)) * 8
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise ValueError("truncated channel dump record")
            arrays[name] = np.frombuffer(buf, dtype=np.dtype("<c8")).reshape(shape)
        yield header, ChannelSet(**arrays)
