"""Steering-probing stage: beam polling, per-poll LS gains and WNALP gain/Doppler estimation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .model import SystemConfig, steering_vector
from .probing import ProbeSchedule, RxTrace, steering_probe
from .recover import SupportEstimate, lstsq_flagged


@dataclass
class PollingPlan:
    """Union of all tap supports, steered once per polling period.

    ``beams`` hold fine-grid index pairs ``(rx, tx)``; subframe ``s`` of the stage
    steers ``beams[s mod |I|]``.
    """

    beams: list[tuple[int, int]]
    polls: int
    g_rx: int
    g_tx: int

    def __post_init__(self):
        if self.polls < 1:
            raise ValueError("need at least one poll")
        if not self.beams:
            raise ValueError("polling plan has no beams")

    @property
    def period(self) -> int:
        return len(self.beams)

    @property
    def subframes(self) -> int:
        return self.period * self.polls

    def freqs(self) -> list[tuple[float, float]]:
        return [(kr / self.g_rx ** 2, kt / self.g_tx ** 2) for kr, kt in self.beams]

    def beam_at(self, subframe: int) -> int:
        return subframe % self.period


def build_polling_plan(supports: list[SupportEstimate], polls: int) -> PollingPlan:
    beams: list[tuple[int, int]] = []
    seen = set()
    for sup in supports:
        for pair in sup.refined_idx:
            key = (int(pair[0]), int(pair[1]))
            if key not in seen:
                seen.add(key)
                beams.append(key)
    if not beams:
        raise ValueError("every support is empty; nothing to poll")
    return PollingPlan(beams=beams, polls=polls, g_rx=supports[0].g_rx, g_tx=supports[0].g_tx)


def steering_schedule(plan: PollingPlan, cfg: SystemConfig, *, quantize: bool = True) -> ProbeSchedule:
    per_beam = [steering_probe(cfg, ft, fr, quantize=quantize) for fr, ft in plan.freqs()]
    tx = np.array([per_beam[plan.beam_at(s)][0] for s in range(plan.subframes)])
    rx = np.array([per_beam[plan.beam_at(s)][1] for s in range(plan.subframes)])
    beams = np.array([plan.beam_at(s) for s in range(plan.subframes)])
    return ProbeSchedule(stage="steering", tx=tx, rx=rx, beams=beams)


def support_steering(sup: SupportEstimate, cfg: SystemConfig):
    """Estimated steering matrices ``(A_r, A_t)`` of one tap, one column per beam."""
    fr = np.array([f[0] for f in sup.refined_freqs])
    ft = np.array([f[1] for f in sup.refined_freqs])
    return steering_vector(cfg.n_rx, fr), steering_vector(cfg.n_tx, ft)


def ls_gains(trace: RxTrace, plan: PollingPlan, tap: int, poll: int, sup: SupportEstimate,
             cfg: SystemConfig):
    """LS gains of the tap's own beams from the samples of one poll.

    Returns ``(gains, timestamp, flagged)``; the timestamp is the absolute middle
    instant of the poll for this tap.
    """
    period = plan.period
    if period < len(sup):
        raise ValueError("polling period shorter than the tap support")
    if trace.schedule is None:
        raise ValueError("trace carries no probe schedule")
    subs = poll * period + np.arange(period)
    if subs[-1] >= trace.samples.size // cfg.n_taps:
        raise ValueError(f"poll {poll} lies beyond the trace")
    y = trace.samples[subs * cfg.n_taps + tap]
    a_r, a_t = support_steering(sup, cfg)
    rx_gain = trace.schedule.rx[subs].conj() @ a_r  # p_r^H a_r
    tx_gain = trace.schedule.tx[subs] @ a_t.conj()  # a_t^H p_t
    m = rx_gain * tx_gain
    g, flagged = lstsq_flagged(m, y)
    first, last = subs[0] * cfg.n_taps, subs[-1] * cfg.n_taps
    return g, trace.t0 + (first + last) / 2 + tap, flagged


@dataclass
class GainSeries:
    tap: int
    beam: int
    values: np.ndarray
    times: np.ndarray
    spacing: float
    flagged: bool = False


def gain_series(trace: RxTrace, plan: PollingPlan, sup: SupportEstimate, cfg: SystemConfig) -> list[GainSeries]:
    """Pseudo time series of every beam of one tap across all polls."""
    rows, times, flags = [], [], False
    for i in range(plan.polls):
        g, t, bad = ls_gains(trace, plan, sup.tap, i, sup, cfg)
        rows.append(g)
        times.append(t)
        flags |= bad
    vals = np.array(rows).reshape(plan.polls, len(sup))
    spacing = cfg.n_taps * plan.period
    return [GainSeries(tap=sup.tap, beam=j, values=vals[:, j], times=np.array(times),
                       spacing=spacing, flagged=flags) for j in range(len(sup))]


@dataclass
class BeamEstimate:
    """Gain and Doppler of one beam; ``gain`` is referenced to absolute instant ``ref_time``.

    ``latest_gain`` is the raw LS gain of the final poll, taken at ``latest_time``.
    """

    tap: int
    beam: int
    gain: complex
    doppler: float
    ref_time: float
    rx_freq: float = math.nan
    tx_freq: float = math.nan
    flagged: bool = False
    latest_gain: complex | None = None
    latest_time: float = math.nan


def wnalp_weights(m0: int) -> np.ndarray:
    """Phase-difference smoothing weights for ``2 M0`` samples; they sum to one."""
    m = np.arange(1, m0 + 1)
    n = 2 * m0
    return 3.0 * ((n - m) * (n - m + 1) - m0 ** 2) / (m0 * (4.0 * m0 ** 2 - 1.0))


def autocorrelation(x: np.ndarray, m0: int) -> np.ndarray:
    """``R(m) = 1/(R - m) sum_{i=m+1}^{2 M0} x_i conj(x_{i-m})`` for ``m = 0..M0``."""
    r = x.size
    used = x[: 2 * m0]
    return np.array([np.sum(used[m:] * used[: used.size - m].conj()) / (r - m) for m in range(m0 + 1)])


def wnalp(series: GainSeries) -> BeamEstimate:
    """Weighted phase-averaging frequency estimate followed by Doppler-derotated gain averaging."""
    x = np.asarray(series.values, dtype=complex)
    r = x.size
    delta = series.spacing
    if r < 2:
        ref = series.times[0] if len(series.times) else math.nan
        return BeamEstimate(tap=series.tap, beam=series.beam, gain=complex(np.mean(x)) if r else 0j,
                            doppler=0.0, ref_time=float(ref), flagged=True)
    m0 = r // 2
    acf = autocorrelation(x, m0)
    w = wnalp_weights(m0)
    phase_steps = np.angle(acf[1:] * acf[:-1].conj())
    omega = float(np.sum(w * phase_steps)) / delta
    i = np.arange(1, r + 1)
    gain = complex(np.mean(x * np.exp(-1j * omega * delta * (i - 0.5))))
    # the derotation above refers the gain to half a spacing before the first sample
    ref = float(series.times[0] - delta / 2)
    return BeamEstimate(tap=series.tap, beam=series.beam, gain=gain, doppler=omega, ref_time=ref,
                        flagged=series.flagged)


def track_tap(trace: RxTrace, plan: PollingPlan, sup: SupportEstimate, cfg: SystemConfig) -> list[BeamEstimate]:
    out = []
    for series, (fr, ft) in zip(gain_series(trace, plan, sup, cfg), sup.refined_freqs):
        est = wnalp(series)
        est.rx_freq, est.tx_freq = fr, ft
        est.latest_gain, est.latest_time = complex(series.values[-1]), float(series.times[-1])
        out.append(est)
    return out


def beams_to_csv(estimates: list[BeamEstimate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tap", "beam", "gain_re", "gain_im", "doppler", "ref_time", "rx_freq", "tx_freq"])
    for e in estimates:
        w.writerow([e.tap, e.beam, repr(e.gain.real), repr(e.gain.imag), repr(e.doppler),
                    repr(e.ref_time), repr(e.rx_freq), repr(e.tx_freq)])
    return buf.getvalue()
