"""Channel reconstruction, NMSE, the ridge LS baseline and the Monte Carlo harness."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field, asdict, fields
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .detect import DetectorConfig, power_ratio, select_taps, tap_statistics
from .model import KMH, ChannelRealization, SystemConfig, all_taps, sample_channel, steering_vector
from .probing import RxTrace, build_frame, random_probe, random_schedule, simulate_rx, ProbeSchedule
from .recover import BlockSparseView, abomp, group_size, iteration_bound, stack_tap_samples
from .track import BeamEstimate, build_polling_plan, steering_schedule, track_tap

log = logging.getLogger(__name__)


@dataclass
class EstimatedChannel:
    """Per-tap beam estimates, or dense static tap matrices for the LS baseline.

    Taps without beams reconstruct to zero.
    """

    cfg: SystemConfig
    beams: dict[int, list[BeamEstimate]] = field(default_factory=dict)
    dense: np.ndarray | None = None
    horizon_end: int = 0

    @property
    def taps(self) -> list[int]:
        return sorted(self.beams)


def reconstruct(est: EstimatedChannel, n, compensate: bool = True) -> np.ndarray:
    """Tap matrices at absolute instant ``n``, shape ``(n_taps, n_rx, n_tx)``.

    With ``compensate`` each beam gain is rotated by its estimated Doppler from the
    gain's reference instant; otherwise the most recent per-poll gain is held.
    """
    cfg = est.cfg
    if est.dense is not None:
        return est.dense.copy()
    out = np.zeros((cfg.n_taps, cfg.n_rx, cfg.n_tx), dtype=complex)
    for d, beams in est.beams.items():
        if not beams:
            continue
        fr = np.array([b.rx_freq for b in beams])
        ft = np.array([b.tx_freq for b in beams])
        if compensate:
            g = np.array([b.gain * np.exp(1j * b.doppler * (n - b.ref_time)) for b in beams])
        else:
            g = np.array([b.gain if b.latest_gain is None else b.latest_gain for b in beams])
        a_r, a_t = steering_vector(cfg.n_rx, fr), steering_vector(cfg.n_tx, ft)
        out[d] = (a_r * g) @ a_t.conj().T
    return out


def nmse(truth, estimate, *, squared: bool = False) -> float:
    """``sum_d ||H_d - Hhat_d||_F / sum_d ||H_d||_F`` over stacked tap matrices.

    ``squared`` switches to the ratio of summed squared norms.
    """
    truth, estimate = np.asarray(truth), np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    p = 2 if squared else 1
    err = np.linalg.norm(truth - estimate, axis=(-2, -1)) ** p
    ref = np.linalg.norm(truth, axis=(-2, -1)) ** p
    if np.sum(ref) == 0:
        raise ZeroDivisionError("NMSE undefined for an all-zero channel")
    return float(np.sum(err) / np.sum(ref))


def to_db(x, squared: bool = False):
    """dB of an NMSE value; the unsquared variant is an amplitude ratio, hence ``20 log10``."""
    return (10 if squared else 20) * np.log10(np.maximum(x, 1e-300))


def _ridge_kron(a1: np.ndarray, a2: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    """Ridge solution of ``(a1 kron a2) x = vec_r(y)`` returned as ``X`` with ``x = vec_r(X)``."""
    u1, s1, v1h = np.linalg.svd(a1, full_matrices=False)
    u2, s2, v2h = np.linalg.svd(a2, full_matrices=False)
    s = np.outer(s1, s2)
    tol = max(a1.shape + a2.shape) * np.finfo(float).eps * (s.max() if s.size else 0.0)
    keep = s > tol
    denom = np.where(keep, s ** 2 + ridge, 1.0)
    scale = np.where(keep, s / denom, 0.0)
    z = scale * (u1.conj().T @ y @ u2.conj())
    return v1h.conj().T @ z @ v2h.conj()


def ls_baseline(traces: list[RxTrace], cfg: SystemConfig, ridge: float) -> EstimatedChannel:
    """Joint Tikhonov-regularized LS of every tap matrix; sparsity is not used.

    Conventional frames with frame-constant probes use a Kronecker-factored solve;
    anything else falls back to a dense system.
    """
    if not traces:
        raise ValueError("need at least one trace")
    nr, nt, nc = cfg.n_rx, cfg.n_tx, cfg.n_taps
    conventional = all(tr.frame is not None and tr.frame.kind == "conventional"
                       and tr.schedule is not None and tr.schedule.subframes == 1 for tr in traces)
    same_symbols = conventional and all(np.array_equal(tr.frame.symbols, traces[0].frame.symbols)
                                        for tr in traces)
    if same_symbols:
        s = traces[0].frame.symbols
        nf = s.size
        toe = np.zeros((nf, nc), dtype=complex)
        for d in range(nc):
            toe[d:, d] = s[: nf - d]
        rows = np.array([np.kron(tr.schedule.tx[0], tr.schedule.rx[0].conj()) for tr in traces])
        ys = np.array([tr.samples for tr in traces])
        x = _ridge_kron(rows, toe, ys, ridge)
    else:
        a, y = _dense_system(traces, cfg)
        if a.shape[0] < a.shape[1]:
            x = a.conj().T @ np.linalg.solve(a @ a.conj().T + ridge * np.eye(a.shape[0]), y)
        else:
            x = np.linalg.solve(a.conj().T @ a + ridge * np.eye(a.shape[1]), a.conj().T @ y)
        x = x.reshape(nc, nr * nt).T
    dense = np.stack([x[:, d].reshape(nr, nt, order="F") for d in range(nc)])
    end = max(tr.t0 + tr.samples.size for tr in traces)
    return EstimatedChannel(cfg=cfg, dense=dense, horizon_end=end)


def _dense_system(traces: list[RxTrace], cfg: SystemConfig):
    nr, nt, nc = cfg.n_rx, cfg.n_tx, cfg.n_taps
    rows, ys = [], []
    for tr in traces:
        idx = tr.frame.probe_index()
        s = tr.frame.symbols
        for n in range(tr.samples.size):
            row = np.zeros(nc * nr * nt, dtype=complex)
            for d in range(min(nc, n + 1)):
                if s[n - d] == 0:
                    continue
                a = np.kron(tr.schedule.tx[idx[n - d]], tr.schedule.rx[idx[n]].conj())
                row[d * nr * nt:(d + 1) * nr * nt] += s[n - d] * a
            rows.append(row)
            ys.append(tr.samples[n])
    return np.array(rows), np.array(ys)


# ----------------------------------------------------------------------------------
# experiment harness

METHODS = ("detect", "dsa", "dsa-nocomp", "dsa-bomp", "ls")
_K_METHOD = re.compile(r"^dsa-k(\d+)$")


@dataclass
class ExperimentSpec:
    scenario: str = "custom"
    snr_db: tuple = (0.0,)
    speeds_kmh: tuple = (0.0,)
    paths: tuple = (3,)
    bits: tuple = (2,)
    methods: tuple = ("dsa",)
    horizons: tuple = (0,)
    frames: int = 40
    polls: int = 4
    ls_frames: int = 60
    trials: int = 10
    seed: int = 0
    n_tx: int = 32
    n_rx: int = 32
    g_tx: int = 64
    g_rx: int = 64
    n_taps: int = 16
    n_data: int = 64
    carrier_hz: float = 60e9
    symbol_s: float = 50e-9
    mu: float = 0.03
    cap: int = 8
    p_threshold: float = 1e-3
    eps: float = 0.01
    tau: float = 0.707
    ridge_scale: float = 1.0
    snr_convention: str = "averaged"
    quantizer: str = "as-written"
    nmse_squared: bool = False
    on_grid: bool = False
    integer_delays: bool = False
    noiseless: bool = False

    def __post_init__(self):
        for name in ("snr_db", "speeds_kmh", "paths", "bits", "methods", "horizons"):
            val = getattr(self, name)
            if isinstance(val, (str, int, float)):
                val = (val,)
            setattr(self, name, tuple(val))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_db:
            raise ValueError("SNR grid is empty")
        for m in self.methods:
            if m not in METHODS and not _K_METHOD.match(m):
                raise ValueError(f"unknown method {m!r}")
        if self.snr_convention not in ("averaged", "per-symbol"):
            raise ValueError(f"unknown SNR convention {self.snr_convention!r}")

    @property
    def subframes_per_frame(self) -> int:
        return (self.n_data + self.n_taps) // self.n_taps

    @property
    def frame_len(self) -> int:
        return self.subframes_per_frame * self.n_taps

    def noise_var(self, snr_db: float, pattern: str = "proposed") -> float:
        """Noise variance for a target SNR.

        The averaged convention charges the proposed pattern with its ``L`` unit
        symbols per ``N``-symbol payload; the conventional frame then has ``1/SNR``.
        """
        snr = 10 ** (snr_db / 10)
        if self.snr_convention == "averaged" and pattern == "proposed":
            return self.subframes_per_frame / (self.n_data * snr)
        return 1.0 / snr

    def system(self, snr_db: float, speed_kmh: float, bits: int, pattern: str = "proposed") -> SystemConfig:
        return SystemConfig(n_tx=self.n_tx, n_rx=self.n_rx, n_taps=self.n_taps, g_tx=self.g_tx,
                            g_rx=self.g_rx, aps_bits=bits, carrier_hz=self.carrier_hz,
                            symbol_s=self.symbol_s, vmax_mps=speed_kmh * KMH,
                            noise_var=self.noise_var(snr_db, pattern), rng_seed=self.seed,
                            quantizer=self.quantizer)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class DSARun:
    """Everything one pass of the two-stage estimator produced."""

    estimate: EstimatedChannel
    selected: np.ndarray
    supports: list
    frames_used: int
    random_trace: RxTrace
    steering_trace: RxTrace | None
    aliasing: bool = False


def _streams(seed: int, trial: int):
    ss = np.random.SeedSequence(int(seed) ^ int(trial))
    return dict(zip(("channel", "probe", "noise", "steer_noise", "ls_probe", "ls_noise"),
                    (np.random.default_rng(s) for s in ss.spawn(6))))


def _std_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)


def run_dsa(ch: ChannelRealization, cfg: SystemConfig, spec: ExperimentSpec, rngs: dict, *,
            kmax: int | None = None, bomp_only: bool = False, detect_only: bool = False) -> DSARun:
    """Random-probing stage (detect + A-BOMP) then steering-probing stage (polling + WNALP)."""
    nc = cfg.n_taps
    l_frame = spec.subframes_per_frame
    n_sub = spec.frames * l_frame
    sched = random_schedule(cfg, n_sub, rngs["probe"])
    frame = build_frame("proposed", n_sub, nc)
    quiet = 0.0 if spec.noiseless else None
    trace = simulate_rx(ch, frame, sched, cfg, None, t0=0, noise=_std_noise(rngs["noise"], frame.length),
                        noise_var=quiet)
    stats = tap_statistics([trace], cfg)
    selected = select_taps(stats, DetectorConfig(mu=spec.mu, cap=spec.cap))
    est = EstimatedChannel(cfg=cfg, horizon_end=spec.frames * spec.frame_len)
    if detect_only:
        return DSARun(est, selected, [], spec.frames, trace, None)

    k = kmax or iteration_bound(len(selected), nc, spec.p_threshold)
    s = n_sub if bomp_only else group_size(cfg.omega_max, nc, spec.tau, n_sub)
    meas = [stack_tap_samples([trace], int(d), cfg) for d in selected]
    view = BlockSparseView(meas[0].psi_rows, s)
    supports = []
    for m in meas:
        m._psi = view.atoms
        supports.append(abomp(m, k, s, spec.eps, view=view))
    supports = [sup for sup in supports if len(sup)]
    if not supports:
        raise RuntimeError("no angle support recovered")

    plan = build_polling_plan(supports, spec.polls)
    aliasing = cfg.omega_max * nc * plan.period > math.pi / 2
    if aliasing:
        log.warning("polling rate undersamples the Doppler: w_max N_c |I| = %.3f > pi/2",
                    cfg.omega_max * nc * plan.period)
    steer = steering_schedule(plan, cfg)
    t0 = n_sub * nc
    sframe = build_frame("proposed", plan.subframes, nc)
    strace = simulate_rx(ch, sframe, steer, cfg, None, t0=t0,
                         noise=_std_noise(rngs["steer_noise"], sframe.length), noise_var=quiet)
    for sup in supports:
        est.beams[sup.tap] = track_tap(strace, plan, sup, cfg)
    steer_frames = math.ceil(plan.subframes / l_frame)
    frames_used = spec.frames + steer_frames
    est.horizon_end = frames_used * spec.frame_len
    return DSARun(est, selected, supports, frames_used, trace, strace, aliasing)


def run_ls(ch: ChannelRealization, spec: ExperimentSpec, snr_db: float, speed: float, bits: int,
           rngs: dict) -> EstimatedChannel:
    cfg = spec.system(snr_db, speed, bits, pattern="conventional")
    frame = build_frame("conventional", spec.n_data, cfg.n_taps)
    traces = []
    for f in range(spec.ls_frames):
        tx, rx = random_probe(cfg, rngs["ls_probe"])
        sched = ProbeSchedule(stage="fixed", tx=tx, rx=rx)
        traces.append(simulate_rx(ch, frame, sched, cfg, None, t0=f * frame.length,
                                  noise=_std_noise(rngs["ls_noise"], frame.length),
                                  noise_var=0.0 if spec.noiseless else None))
    return ls_baseline(traces, cfg, ridge=spec.ridge_scale * traces[0].noise_var)


def run_trial(spec: ExperimentSpec, snr_db: float, speed: float, paths: int, bits: int, trial: int) -> dict:
    """One Monte Carlo trial at one grid point; failures become NMSE = 1 rows."""
    rngs = _streams(spec.seed, trial)
    cfg = spec.system(snr_db, speed, bits)
    ch = sample_channel(cfg, paths, rngs["channel"], on_grid=spec.on_grid,
                        integer_delays=spec.integer_delays)
    out = {"nmse": {}, "taps": math.nan, "power_ratio": math.nan, "frames_used": math.nan,
           "failed": []}
    energies = ch.tap_energies()
    dsa_cache: dict = {}

    def dsa(kind, kmax=None):
        key = (kind, kmax)
        if key not in dsa_cache:
            try:
                dsa_cache[key] = run_dsa(ch, cfg, spec, rngs_for(kind, kmax), kmax=kmax,
                                         bomp_only=kind == "bomp", detect_only=kind == "detect")
            except Exception as exc:  # recorded, never aborts the sweep
                dsa_cache[key] = exc
        return dsa_cache[key]

    def rngs_for(kind, kmax):
        # every variant sees the same probes and noise
        return _streams(spec.seed, trial)

    for method in spec.methods:
        km = _K_METHOD.match(method)
        if method == "ls":
            try:
                est = run_ls(ch, spec, snr_db, speed, bits, _streams(spec.seed, trial))
                for h in spec.horizons:
                    n = est.horizon_end + h * spec.frame_len
                    out["nmse"][(method, h)] = nmse(all_taps(ch, n), reconstruct(est, n), squared=spec.nmse_squared)
            except Exception as exc:
                out["failed"].append(f"{method}: {exc}")
                for h in spec.horizons:
                    out["nmse"][(method, h)] = 1.0
            continue
        kind = "detect" if method == "detect" else "bomp" if method == "dsa-bomp" else "abomp"
        kmax = int(km.group(1)) if km else None
        run = dsa(kind, kmax)
        if isinstance(run, Exception):
            out["failed"].append(f"{method}: {run}")
            for h in spec.horizons:
                out["nmse"][(method, h)] = 1.0
            continue
        if method in ("detect", "dsa") or math.isnan(out["taps"]):
            out["taps"] = float(len(run.selected))
            out["power_ratio"] = power_ratio(energies, run.selected)
        if method == "detect":
            continue
        out["frames_used"] = float(run.frames_used)
        compensate = method != "dsa-nocomp"
        for h in spec.horizons:
            n = run.estimate.horizon_end + h * spec.frame_len
            out["nmse"][(method, h)] = nmse(all_taps(ch, n), reconstruct(run.estimate, n, compensate),
                                            squared=spec.nmse_squared)
    return out


def _grid(spec: ExperimentSpec):
    for snr in spec.snr_db:
        for speed in spec.speeds_kmh:
            for p in spec.paths:
                for b in spec.bits:
                    yield float(snr), float(speed), int(p), int(b)


def _run_point(args):
    spec, point = args
    return point, [run_trial(spec, *point, t) for t in range(spec.trials)]


RESULT_HEADER = ["scenario", "snr_db", "speed", "p", "trial_count", "mean_nmse_db", "ci_lo", "ci_hi",
                 "method", "bits", "horizon_frames", "mean_taps", "power_ratio", "frames_used", "failures"]


def _mean_ci(x: np.ndarray):
    m = float(np.mean(x))
    half = 1.96 * float(np.std(x, ddof=1)) / math.sqrt(x.size) if x.size > 1 else 0.0
    return m, m - half, m + half


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> list[dict]:
    """Sweep every grid point and aggregate trials into result rows.

    Each trial owns its RNG streams (seed XOR trial index), so results do not
    depend on ``jobs`` or on execution order.
    """
    points = list(_grid(spec))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = dict(pool.map(_run_point, [(spec, p) for p in points]))
    else:
        done = dict(_run_point((spec, p)) for p in points)
    rows = []
    for point in points:
        snr, speed, p, b = point
        trials = done[point]
        taps = np.array([t["taps"] for t in trials])
        ratio = np.array([t["power_ratio"] for t in trials])
        frames = np.array([t["frames_used"] for t in trials])
        failures = sum(1 for t in trials if t["failed"])
        for method in spec.methods:
            for h in spec.horizons if method != "detect" else (0,):
                base = {"scenario": spec.scenario, "snr_db": snr, "speed": speed, "p": p,
                        "trial_count": len(trials), "method": method, "bits": b, "horizon_frames": h,
                        "mean_taps": _nanmean(taps), "power_ratio": _nanmean(ratio),
                        "frames_used": _nanmean(frames) if method not in ("detect", "ls") else
                        (float(spec.ls_frames) if method == "ls" else math.nan),
                        "failures": failures}
                if method == "detect":
                    base.update(mean_nmse_db=math.nan, ci_lo=math.nan, ci_hi=math.nan)
                else:
                    e = np.array([t["nmse"][(method, h)] for t in trials])
                    m, lo, hi = _mean_ci(e)
                    sq = spec.nmse_squared
                    base.update(mean_nmse_db=float(to_db(m, sq)), ci_lo=float(to_db(max(lo, 1e-300), sq)),
                                ci_hi=float(to_db(hi, sq)))
                rows.append({k: base[k] for k in RESULT_HEADER})
    return rows


def _nanmean(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(np.mean(x)) if x.size else math.nan


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_HEADER, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def rows_to_json(rows: list[dict]) -> str:
    clean = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()} for r in rows]
    return json.dumps(clean, indent=2, sort_keys=False)
