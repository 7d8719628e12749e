"""Phase-shifter quantization, probing vectors, ZP training frames and received samples."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import ChannelRealization, SystemConfig

TWO_PI = 2 * np.pi
# mod(x - B(i), 2pi) within this of 2pi counts as zero, so grid points map to themselves
_WRAP_TOL = 1e-9


@dataclass(frozen=True)
class PhaseSet:
    bits: int

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("APS resolution must be at least one bit")

    @property
    def angles(self) -> np.ndarray:
        return TWO_PI * np.arange(2 ** self.bits) / 2 ** self.bits

    def __len__(self):
        return 2 ** self.bits


def quantize_phase(x, ps: PhaseSet, mode: str = "as-written"):
    """Map phases onto the APS alphabet.

    ``as-written`` picks the ``B(i)`` minimizing ``mod(x - B(i), 2pi)``, i.e. the
    largest alphabet angle not exceeding ``x`` (mod 2pi). ``nearest`` rounds to
    the closest angle on the circle.
    """
    x = np.asarray(x, dtype=float)
    b = ps.angles
    diff = np.mod(x[..., None] - b, TWO_PI)
    if mode == "as-written":
        diff = np.where(diff > TWO_PI - _WRAP_TOL, 0.0, diff)
    elif mode == "nearest":
        diff = np.minimum(diff, TWO_PI - diff)
    else:
        raise ValueError(f"unknown quantizer mode {mode!r}")
    out = b[np.argmin(diff, axis=-1)]
    return out if out.ndim else float(out)


@dataclass
class ProbeSchedule:
    """One Tx/Rx probing-vector pair per subframe."""

    stage: str
    tx: np.ndarray  # (L, n_tx)
    rx: np.ndarray  # (L, n_rx)
    beams: np.ndarray | None = None  # steering stage: index into the polled beam list

    def __post_init__(self):
        if self.stage not in ("random", "steering", "fixed"):
            raise ValueError(f"unknown probing stage {self.stage!r}")
        self.tx = np.atleast_2d(np.asarray(self.tx, dtype=complex))
        self.rx = np.atleast_2d(np.asarray(self.rx, dtype=complex))
        if self.tx.shape[0] != self.rx.shape[0]:
            raise ValueError("tx and rx schedules cover different subframe counts")

    @property
    def subframes(self) -> int:
        return self.tx.shape[0]

    def to_dict(self) -> dict:
        doc = {
            "stage": self.stage,
            "tx_re": self.tx.real.tolist(), "tx_im": self.tx.imag.tolist(),
            "rx_re": self.rx.real.tolist(), "rx_im": self.rx.imag.tolist(),
        }
        if self.beams is not None:
            doc["beams"] = [int(b) for b in self.beams]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ProbeSchedule":
        tx = np.asarray(doc["tx_re"]) + 1j * np.asarray(doc["tx_im"])
        rx = np.asarray(doc["rx_re"]) + 1j * np.asarray(doc["rx_im"])
        beams = np.asarray(doc["beams"]) if "beams" in doc else None
        return cls(stage=doc["stage"], tx=tx, rx=rx, beams=beams)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "ProbeSchedule":
        return cls.from_dict(json.loads(text))


@dataclass
class TrainingFrame:
    kind: str
    symbols: np.ndarray
    n_payload: int
    n_zp: int

    @property
    def length(self) -> int:
        return self.symbols.size

    def probe_index(self) -> np.ndarray:
        """Subframe whose probing vectors are active at each instant of the frame."""
        n = np.arange(self.length)
        if self.kind == "proposed":
            return n // self.n_zp
        return np.zeros(self.length, dtype=int)


@dataclass
class RxTrace:
    samples: np.ndarray
    noise_var: float
    schedule: ProbeSchedule | None = None
    frame: TrainingFrame | None = None
    t0: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.frame is not None and self.frame.length != self.samples.size:
            raise ValueError("trace length differs from its frame length")

    def to_dict(self) -> dict:
        doc = {
            "samples_re": self.samples.real.tolist(),
            "samples_im": self.samples.imag.tolist(),
            "noise_var": self.noise_var,
            "t0": int(self.t0),
        }
        if self.frame is not None:
            doc["frame"] = {"kind": self.frame.kind, "n_payload": self.frame.n_payload,
                            "n_zp": self.frame.n_zp}
        if self.schedule is not None:
            doc["schedule"] = self.schedule.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RxTrace":
        frame = None
        if "frame" in doc:
            f = doc["frame"]
            frame = build_frame(f["kind"], f["n_payload"], f["n_zp"])
        sched = ProbeSchedule.from_dict(doc["schedule"]) if "schedule" in doc else None
        samples = np.asarray(doc["samples_re"]) + 1j * np.asarray(doc["samples_im"])
        return cls(samples=samples, noise_var=float(doc["noise_var"]), schedule=sched,
                   frame=frame, t0=int(doc.get("t0", 0)))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "RxTrace":
        return cls.from_dict(json.loads(text))


def _unit_modulus(phases: np.ndarray) -> np.ndarray:
    return np.exp(1j * phases) / np.sqrt(phases.shape[-1])


def random_probe(cfg: SystemConfig, rng: np.random.Generator, count: int | None = None):
    """Random-probing vectors, each APS angle drawn uniformly from the alphabet.

    Returns one ``(tx, rx)`` pair, or stacked ``(count, n)`` arrays when ``count`` is given.
    """
    ps = PhaseSet(cfg.aps_bits)
    shape_t = (cfg.n_tx,) if count is None else (count, cfg.n_tx)
    shape_r = (cfg.n_rx,) if count is None else (count, cfg.n_rx)
    tx = _unit_modulus(ps.angles[rng.integers(0, len(ps), size=shape_t)])
    rx = _unit_modulus(ps.angles[rng.integers(0, len(ps), size=shape_r)])
    return tx, rx


def random_schedule(cfg: SystemConfig, subframes: int, rng: np.random.Generator) -> ProbeSchedule:
    tx, rx = random_probe(cfg, rng, count=subframes)
    return ProbeSchedule(stage="random", tx=tx, rx=rx)


def steering_probe(cfg: SystemConfig, tx_freq: float, rx_freq: float, *, quantize: bool = True):
    """Phase-quantized beams toward normalized spatial frequencies ``tx_freq`` / ``rx_freq``.

    Element ``p`` carries phase ``Q(p * 2 pi y)``; without quantization the vectors
    equal the steering vectors themselves.
    """
    ps = PhaseSet(cfg.aps_bits)

    def beam(n, y):
        phase = np.mod(np.arange(n) * TWO_PI * y, TWO_PI)
        if quantize:
            phase = quantize_phase(phase, ps, cfg.quantizer)
        return _unit_modulus(np.asarray(phase, dtype=float))

    return beam(cfg.n_tx, tx_freq), beam(cfg.n_rx, rx_freq)


def build_frame(kind: str, n: int, n_zp: int) -> TrainingFrame:
    """Training frame with unit training symbols.

    ``proposed``: ``n`` subframes, each a single symbol followed by ``n_zp - 1`` zeros.
    ``conventional``: ``n`` symbols followed by ``n_zp`` zeros.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"subframe/payload count must be a positive integer, got {n}")
    n = int(n)
    if kind == "proposed":
        symbols = np.zeros(n * n_zp, dtype=complex)
        symbols[::n_zp] = 1.0
    elif kind == "conventional":
        symbols = np.concatenate([np.ones(n, dtype=complex), np.zeros(n_zp, dtype=complex)])
    else:
        raise ValueError(f"unknown frame kind {kind!r}")
    return TrainingFrame(kind=kind, symbols=symbols, n_payload=n, n_zp=n_zp)


def proposed_frame_length(n_data: int, n_taps: int) -> int:
    """Subframes per frame when a conventional ``n_data + n_taps`` frame is re-patterned."""
    return (n_data + n_taps) // n_taps


def simulate_rx(ch: ChannelRealization, frame: TrainingFrame, sched: ProbeSchedule,
                cfg: SystemConfig, rng: np.random.Generator | None, t0: int = 0,
                noise: np.ndarray | None = None, noise_var: float | None = None) -> RxTrace:
    """Received scalar samples after both APS networks.

    ``y(n) = sum_d p_r(n)^H H_d(t0 + n) p_t(n - d) s(n - d) + xi(n)`` with the probes
    held per subframe (proposed frames) or over the whole frame (conventional).
    ``noise`` may carry pre-drawn unit-variance samples, scaled here by ``sqrt(noise_var)``;
    ``noise_var`` overrides ``cfg.noise_var`` (zero gives a noiseless trace).
    """
    var = cfg.noise_var if noise_var is None else float(noise_var)
    idx = frame.probe_index()
    if idx.max() >= sched.subframes:
        raise ValueError(f"schedule has {sched.subframes} subframes, frame needs {idx.max() + 1}")
    if sched.tx.shape[1] != cfg.n_tx or sched.rx.shape[1] != cfg.n_rx:
        raise ValueError("probe lengths do not match the array sizes")
    nf = frame.length
    # per-subframe bilinear factors p_r^H a_r(p) and a_t(p)^H p_t
    rx_resp = sched.rx.conj() @ ch.steering_rx
    tx_resp = sched.tx @ ch.steering_tx.conj()
    n_abs = t0 + np.arange(nf)
    rot = np.exp(1j * np.outer(n_abs, ch.dopplers))
    y = np.zeros(nf, dtype=complex)
    s = frame.symbols
    for d in range(cfg.n_taps):
        g = ch.tap_gain_vectors[d]
        if not np.any(g) or d >= nf:
            continue
        src = np.arange(d, nf)
        sym = s[src - d]
        live = sym != 0
        if not np.any(live):
            continue
        n = src[live]
        contrib = (rx_resp[idx[n]] * tx_resp[idx[n - d]] * rot[n]) @ g
        y[n] += contrib * sym[live]
    if var == 0:
        noise = np.zeros(nf)
    elif noise is None:
        if rng is None:
            raise ValueError("need an rng or pre-drawn noise")
        noise = (rng.standard_normal(nf) + 1j * rng.standard_normal(nf)) / np.sqrt(2)
    elif noise.shape != (nf,):
        raise ValueError("pre-drawn noise has the wrong length")
    y += np.sqrt(var) * noise
    return RxTrace(samples=y, noise_var=var, schedule=sched, frame=frame, t0=t0)
