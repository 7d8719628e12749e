"""Geometric doubly-selective channel, ULA steering vectors and angular dictionaries.

Angles are carried internally as normalized spatial frequencies
``y = sin(angle) / 2 (mod 1)``, which is the argument of :func:`steering_vector`.
Physical angles only appear when a channel is drawn.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
KMH = 1000.0 / 3600.0

# raised-cosine pulse is truncated outside +/- this many symbol periods
PULSE_SPAN = 4.0


@dataclass(frozen=True)
class SystemConfig:
    """Array, grid and radio parameters shared by every stage of the estimator."""

    n_tx: int = 32
    n_rx: int = 32
    n_taps: int = 16
    g_tx: int = 64
    g_rx: int = 64
    aps_bits: int = 2
    carrier_hz: float = 60e9
    symbol_s: float = 50e-9
    vmax_mps: float = 0.0
    light_mps: float = SPEED_OF_LIGHT
    noise_var: float = 1.0
    rng_seed: int = 0
    quantizer: str = "as-written"

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_taps", "g_tx", "g_rx", "aps_bits"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.g_tx < self.n_tx or self.g_rx < self.n_rx:
            raise ValueError("dictionary sizes must be at least the array sizes")
        if not self.noise_var > 0:
            raise ValueError(f"noise_var must be > 0, got {self.noise_var}")
        if self.vmax_mps < 0:
            raise ValueError("vmax_mps must be non-negative")
        if self.quantizer not in ("as-written", "nearest"):
            raise ValueError(f"unknown quantizer {self.quantizer!r}")

    @property
    def omega_max(self) -> float:
        """Largest normalized Doppler shift in rad/sample."""
        return 2 * np.pi * self.carrier_hz * self.vmax_mps * self.symbol_s / self.light_mps

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class PathParams:
    gain: complex
    delay_s: float
    aoa_rad: float
    aod_rad: float
    doppler_rad_per_sample: float

    @property
    def rx_freq(self) -> float:
        return spatial_frequency(self.aoa_rad)

    @property
    def tx_freq(self) -> float:
        return spatial_frequency(self.aod_rad)


@dataclass
class Dictionary:
    size: int
    columns: np.ndarray

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    def freqs(self) -> np.ndarray:
        return np.arange(self.size) / self.size


@dataclass
class ChannelRealization:
    """Ground truth for one trial.

    ``tap_gain_vectors[d, p]`` is the time-zero gain of path ``p`` seen at tap ``d``;
    ``steering_rx`` / ``steering_tx`` hold one column per path.
    """

    cfg: SystemConfig
    paths: list[PathParams]
    tap_gain_vectors: np.ndarray
    steering_tx: np.ndarray
    steering_rx: np.ndarray
    dopplers: np.ndarray = field(init=False)

    def __post_init__(self):
        self.dopplers = np.array([p.doppler_rad_per_sample for p in self.paths], dtype=float)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def gains_at(self, n) -> np.ndarray:
        """Tap gains ``g_d(n)`` for every tap, shape ``(n_taps, P)``."""
        return self.tap_gain_vectors * np.exp(1j * self.dopplers * n)

    def tap_energies(self) -> np.ndarray:
        """Frobenius energy of every tap (time invariant since Doppler is a pure phase)."""
        return np.array([np.linalg.norm(tap_matrix(self, d, 0)) ** 2 for d in range(self.cfg.n_taps)])

    def to_dict(self) -> dict:
        return {
            "cfg": asdict(self.cfg),
            "paths": [
                {
                    "gain_re": float(np.real(p.gain)),
                    "gain_im": float(np.imag(p.gain)),
                    "delay_s": p.delay_s,
                    "aoa_rad": p.aoa_rad,
                    "aod_rad": p.aod_rad,
                    "doppler_rad_per_sample": p.doppler_rad_per_sample,
                }
                for p in self.paths
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "ChannelRealization":
        cfg = SystemConfig(**doc["cfg"])
        paths = [
            PathParams(
                gain=complex(p["gain_re"], p["gain_im"]),
                delay_s=float(p["delay_s"]),
                aoa_rad=float(p["aoa_rad"]),
                aod_rad=float(p["aod_rad"]),
                doppler_rad_per_sample=float(p["doppler_rad_per_sample"]),
            )
            for p in doc["paths"]
        ]
        return build_channel(cfg, paths)

    @classmethod
    def from_json(cls, text: str) -> "ChannelRealization":
        return cls.from_dict(json.loads(text))


def spatial_frequency(angle_rad):
    """Normalized spatial frequency ``sin(angle)/2`` wrapped into ``[0, 1)``."""
    return np.mod(np.sin(angle_rad) / 2.0, 1.0)


def angle_for_frequency(y):
    """An angle in ``[0, 2pi)`` whose spatial frequency is ``y`` (the branch in ``[-pi/2, pi/2]``)."""
    y = np.asarray(y, dtype=float)
    wrapped = np.mod(y + 0.5, 1.0) - 0.5
    return np.mod(np.arcsin(np.clip(2 * wrapped, -1.0, 1.0)), 2 * np.pi)


def steering_vector(n: int, y) -> np.ndarray:
    """ULA array response ``exp(j 2 pi k y) / sqrt(n)``, ``k = 0..n-1``.

    ``y`` may be an array, in which case one column is returned per entry.
    """
    if n < 1:
        raise ValueError("antenna count must be >= 1")
    y = np.asarray(y, dtype=float)
    k = np.arange(n).reshape((n,) + (1,) * y.ndim)
    return np.exp(2j * np.pi * k * y) / np.sqrt(n)


def build_dictionary(n: int, g: int) -> Dictionary:
    if g < n:
        raise ValueError(f"grid size {g} smaller than antenna count {n}")
    return Dictionary(size=g, columns=steering_vector(n, np.arange(g) / g))


def raised_cosine(t, rolloff: float = 1.0, span: float = PULSE_SPAN) -> np.ndarray:
    """Raised-cosine pulse with ``t`` in symbol periods, zero beyond ``+/- span``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 - (2.0 * rolloff * t) ** 2
        h = np.sinc(t) * np.cos(np.pi * rolloff * t) / denom
    if rolloff > 0:
        singular = np.isclose(np.abs(t), 1.0 / (2.0 * rolloff), rtol=0, atol=1e-12)
        h = np.where(singular, np.pi / 4 * np.sinc(1.0 / (2.0 * rolloff)), h)
    return np.where(np.abs(t) <= span, h, 0.0)


def build_channel(cfg: SystemConfig, paths: list[PathParams]) -> ChannelRealization:
    """Assemble the derived per-tap gains and steering matrices for a list of paths."""
    p = len(paths)
    if p < 1:
        raise ValueError("a channel needs at least one path")
    delays = np.array([q.delay_s for q in paths]) / cfg.symbol_s
    gains = np.array([q.gain for q in paths], dtype=complex)
    d = np.arange(cfg.n_taps)[:, None]
    pulse = raised_cosine(d - delays[None, :])
    tap_gains = np.sqrt(cfg.n_tx * cfg.n_rx / p) * gains[None, :] * pulse
    a_t = steering_vector(cfg.n_tx, np.array([q.tx_freq for q in paths]))
    a_r = steering_vector(cfg.n_rx, np.array([q.rx_freq for q in paths]))
    return ChannelRealization(cfg=cfg, paths=list(paths), tap_gain_vectors=tap_gains,
                              steering_tx=a_t, steering_rx=a_r)


def doppler_of(cfg: SystemConfig, aoa_rad) -> np.ndarray:
    return cfg.omega_max * np.sin(aoa_rad)


def sample_channel(cfg: SystemConfig, p: int, rng: np.random.Generator, *,
                   on_grid: bool = False, integer_delays: bool = False) -> ChannelRealization:
    """Draw a P-path channel.

    Gains are CN(0, 1), delays uniform on ``[0, (N_c - 1) T_s)``, AoA/AoD uniform on
    ``[0, 2 pi)``. ``on_grid`` snaps both angles onto dictionary frequencies and
    ``integer_delays`` puts every path on a single tap; both exist for oracle tests.
    """
    if not 1 <= p <= cfg.n_taps:
        raise ValueError(f"path count must lie in [1, {cfg.n_taps}], got {p}")
    gains = (rng.standard_normal(p) + 1j * rng.standard_normal(p)) / np.sqrt(2)
    if integer_delays:
        delays = rng.integers(0, max(cfg.n_taps - 1, 1), size=p).astype(float)
    else:
        delays = rng.uniform(0.0, cfg.n_taps - 1, size=p)
    aoa = rng.uniform(0.0, 2 * np.pi, size=p)
    aod = rng.uniform(0.0, 2 * np.pi, size=p)
    if on_grid:
        aoa = angle_for_frequency(rng.integers(0, cfg.g_rx, size=p) / cfg.g_rx)
        aod = angle_for_frequency(rng.integers(0, cfg.g_tx, size=p) / cfg.g_tx)
    omega = doppler_of(cfg, aoa)
    paths = [
        PathParams(gain=complex(gains[i]), delay_s=float(delays[i] * cfg.symbol_s),
                   aoa_rad=float(aoa[i]), aod_rad=float(aod[i]),
                   doppler_rad_per_sample=float(omega[i]))
        for i in range(p)
    ]
    return build_channel(cfg, paths)


def tap_matrix(ch: ChannelRealization, d: int, n=0) -> np.ndarray:
    """``H_d(n) = A_R diag(g_d(n)) A_T^H``, an ``n_rx x n_tx`` matrix."""
    if not 0 <= d < ch.cfg.n_taps:
        raise IndexError(f"tap {d} outside [0, {ch.cfg.n_taps})")
    g = ch.tap_gain_vectors[d] * np.exp(1j * ch.dopplers * n)
    return (ch.steering_rx * g) @ ch.steering_tx.conj().T


def all_taps(ch: ChannelRealization, n=0) -> np.ndarray:
    """Stack of every tap matrix at instant ``n``, shape ``(n_taps, n_rx, n_tx)``."""
    g = ch.gains_at(n)
    return np.einsum("rp,dp,tp->drt", ch.steering_rx, g, ch.steering_tx.conj())


def beamspace_projection(cfg: SystemConfig, tap: np.ndarray) -> np.ndarray:
    """Analysis coefficients ``D_r^H H D_t``; diagnostic only since the dictionaries are overcomplete."""
    d_r = build_dictionary(cfg.n_rx, cfg.g_rx).columns
    d_t = build_dictionary(cfg.n_tx, cfg.g_tx).columns
    return d_r.conj().T @ tap @ d_t


def beamspace_of(cfg: SystemConfig, tap: np.ndarray, *, tol: float = 1e-12,
                 max_atoms: int | None = None) -> np.ndarray:
    """Sparse synthesis coefficients ``Hbar`` with ``D_r Hbar D_t^H = tap``.

    A separable pursuit over dictionary atom pairs; for on-grid channels it returns
    exactly one nonzero per path.
    """
    tap = np.asarray(tap)
    if tap.shape != (cfg.n_rx, cfg.n_tx):
        raise ValueError(f"expected shape {(cfg.n_rx, cfg.n_tx)}, got {tap.shape}")
    d_r = build_dictionary(cfg.n_rx, cfg.g_rx).columns
    d_t = build_dictionary(cfg.n_tx, cfg.g_tx).columns
    out = np.zeros((cfg.g_rx, cfg.g_tx), dtype=complex)
    scale = np.linalg.norm(tap)
    if scale == 0:
        return out
    max_atoms = max_atoms or cfg.n_rx * cfg.n_tx
    target = tap.reshape(-1, order="F")
    residual = tap.copy()
    picked: list[tuple[int, int]] = []
    atoms = np.zeros((target.size, 0), dtype=complex)
    coef = np.zeros(0, dtype=complex)
    while len(picked) < max_atoms and np.linalg.norm(residual) > tol * scale:
        corr = np.abs(d_r.conj().T @ residual @ d_t)
        for r, t in picked:
            corr[r, t] = -1.0
        r, t = np.unravel_index(int(np.argmax(corr)), corr.shape)
        picked.append((int(r), int(t)))
        atom = np.kron(d_t[:, t].conj(), d_r[:, r])
        atoms = np.column_stack([atoms, atom])
        coef, *_ = np.linalg.lstsq(atoms, target, rcond=None)
        residual = (target - atoms @ coef).reshape(tap.shape, order="F")
    for (r, t), c in zip(picked, coef):
        out[r, t] = c
    return out
