import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsdsim.model import KMH, PathParams, SystemConfig, angle_for_frequency, build_channel, sample_channel
from dsdsim.probing import build_frame, simulate_rx
from dsdsim.recover import SupportEstimate
from dsdsim.track import (
    GainSeries, PollingPlan, beams_to_csv, build_polling_plan, gain_series, ls_gains, steering_schedule,
    track_tap, wnalp, wnalp_weights,
)


def support(tap, pairs, g=64):
    return SupportEstimate(tap=tap, coarse_pairs=[(r // g, t // g) for r, t in pairs], refined_idx=list(pairs),
                           g_rx=g, g_tx=g)


def tone(r, omega_delta, amp, delta=10.0, noise=None):
    i = np.arange(1, r + 1)
    x = amp * np.exp(1j * omega_delta * (i - 0.5))
    if noise is not None:
        x = x + noise
    return GainSeries(tap=0, beam=0, values=x, times=delta * np.arange(r) + delta / 2, spacing=delta)


def test_plan_union_and_subframes():
    a = support(1, [(64, 128), (320, 640)])
    b = support(2, [(320, 640), (1000, 7)])
    plan = build_polling_plan([a, b], polls=4)
    assert plan.period == 2 + 2 - 1
    assert plan.beams == [(64, 128), (320, 640), (1000, 7)]
    assert plan.subframes == 12
    four = build_polling_plan([support(0, [(0, 0), (64, 0), (128, 0), (192, 0)])], polls=4)
    assert four.subframes == 16
    single = build_polling_plan([support(0, [(5, 6)])], polls=3)
    assert [single.beam_at(s) for s in range(3)] == [0, 0, 0]
    with pytest.raises(ValueError):
        build_polling_plan([support(0, [])], 4)
    with pytest.raises(ValueError):
        PollingPlan(beams=[(0, 0)], polls=0, g_rx=64, g_tx=64)


def test_each_beam_once_per_period():
    plan = build_polling_plan([support(0, [(1, 2), (3, 4), (5, 6)])], polls=5)
    sched = steering_schedule(plan, SystemConfig())
    for k in range(plan.polls):
        assert sorted(sched.beams[k * 3:(k + 1) * 3].tolist()) == [0, 1, 2]
    assert np.allclose(np.abs(sched.tx), 1 / np.sqrt(32))


def _static_setup(rng, speed_kmh=0.0, noise_var=0.0):
    cfg = SystemConfig(vmax_mps=speed_kmh * KMH)
    fr, ft = (17, 44), (5, 60)
    paths = [PathParams(complex(rng.standard_normal(), rng.standard_normal()), 3 * cfg.symbol_s,
                        float(angle_for_frequency(fr[i] / 64)), float(angle_for_frequency(ft[i] / 64)),
                        cfg.omega_max * np.sin(float(angle_for_frequency(fr[i] / 64))))
             for i in range(2)]
    ch = build_channel(cfg, paths)
    sup = support(3, [(fr[0] * 64, ft[0] * 64), (fr[1] * 64, ft[1] * 64)])
    plan = build_polling_plan([sup], polls=4)
    sched = steering_schedule(plan, cfg)
    tr = simulate_rx(ch, build_frame("proposed", plan.subframes, cfg.n_taps), sched, cfg, rng, t0=960,
                     noise_var=noise_var)
    return cfg, ch, sup, plan, tr


def test_ls_gains_noiseless_oracle(rng):
    cfg, ch, sup, plan, tr = _static_setup(rng)
    g, t, flagged = ls_gains(tr, plan, 3, 1, sup, cfg)
    assert not flagged
    assert np.allclose(g, ch.tap_gain_vectors[3], atol=1e-8)
    assert t == 960 + (2 * cfg.n_taps + 3 * cfg.n_taps) / 2 + 3
    with pytest.raises(ValueError):
        ls_gains(tr, plan, 3, 4, sup, cfg)


def test_poll_times_arithmetic(rng):
    cfg, _, sup, plan, tr = _static_setup(rng, speed_kmh=50.0)
    series = gain_series(tr, plan, sup, cfg)
    for s in series:
        assert np.all(np.diff(s.times) == cfg.n_taps * plan.period)
        assert s.spacing == cfg.n_taps * plan.period


def test_track_recovers_gain_and_doppler_noiseless(rng):
    cfg, ch, sup, plan, tr = _static_setup(rng, speed_kmh=60.0)
    est = track_tap(tr, plan, sup, cfg)
    for e, p in zip(est, range(2)):
        assert e.doppler == pytest.approx(ch.dopplers[p], rel=1e-3)
        truth = ch.tap_gain_vectors[3, p] * np.exp(1j * ch.dopplers[p] * e.ref_time)
        # gains drift inside one poll, which the per-poll LS treats as constant
        assert abs(e.gain - truth) < 1e-2 * abs(truth)
        assert abs(e.doppler) <= np.pi / (cfg.n_taps * plan.period)
    assert beams_to_csv(est).splitlines()[0].startswith("tap,beam,gain_re")


def test_wnalp_weights_sum(frozen):
    for m0 in range(1, 11):
        assert np.sum(wnalp_weights(m0)) == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(wnalp_weights(4), frozen["wnalp_weights_m4"])
    assert np.all(wnalp_weights(7) > 0)


def test_wnalp_noiseless_tone():
    est = wnalp(tone(16, 0.1, 0.7 - 0.3j))
    assert abs(est.doppler * 10.0 - 0.1) < 1e-10
    assert abs(est.gain - (0.7 - 0.3j)) < 1e-10
    assert est.ref_time == 0.0


def test_wnalp_zero_frequency():
    x = np.array([1 + 1j, 1 - 1j, 2 + 0j, 0.5j])
    s = GainSeries(0, 0, np.full(4, 2 - 1j), np.arange(4) * 5.0, 5.0)
    est = wnalp(s)
    assert est.doppler == 0.0 and est.gain == 2 - 1j
    flat = wnalp(GainSeries(0, 0, x, np.arange(4.0), 1.0))
    assert np.isfinite(flat.doppler)


def test_wnalp_short_series_flagged():
    est = wnalp(GainSeries(0, 0, np.array([1.5 + 0j]), np.array([3.0]), 7.0))
    assert est.flagged and est.doppler == 0 and est.gain == 1.5


@settings(max_examples=40, deadline=None)
@given(phi=st.floats(-np.pi, np.pi), scale=st.floats(0.01, 100), seed=st.integers(0, 1000),
       w=st.floats(-0.5, 0.5))
def test_wnalp_equivariance(phi, scale, seed, w):
    rng = np.random.default_rng(seed)
    noise = 0.2 * (rng.standard_normal(12) + 1j * rng.standard_normal(12))
    base = tone(12, w, 1.0, noise=noise)
    est = wnalp(base)
    rot = wnalp(GainSeries(0, 0, base.values * np.exp(1j * phi), base.times, base.spacing))
    big = wnalp(GainSeries(0, 0, base.values * scale, base.times, base.spacing))
    assert rot.doppler == pytest.approx(est.doppler, abs=1e-9)
    assert rot.gain == pytest.approx(est.gain * np.exp(1j * phi), abs=1e-9)
    assert big.doppler == pytest.approx(est.doppler, abs=1e-9)
    assert big.gain == pytest.approx(est.gain * scale, rel=1e-9)


def _median_error(snr_db, trials, seed=0):
    rng = np.random.default_rng(seed)
    sigma = np.sqrt(10 ** (-snr_db / 10) / 2)
    errs = []
    for _ in range(trials):
        w = rng.uniform(-0.3, 0.3)
        noise = sigma * (rng.standard_normal(16) + 1j * rng.standard_normal(16))
        est = wnalp(tone(16, w, np.exp(1j * rng.uniform(0, 2 * np.pi)), noise=noise))
        errs.append(abs(est.doppler * 10.0 - w))
    return np.median(errs)


def test_wnalp_error_shrinks_with_snr():
    assert _median_error(10, 200) < _median_error(0, 200)


def test_beamforming_gain_shrinks_ls_error():
    # same per-sample noise, larger arrays -> larger array gain -> smaller gain error
    spread = []
    for n in (8, 16, 32):
        cfg = SystemConfig(n_tx=n, n_rx=n, g_tx=2 * n, g_rx=2 * n, noise_var=1.0)
        rng = np.random.default_rng(n)
        errs = []
        for _ in range(60):
            ch = sample_channel(cfg, 1, rng, on_grid=True, integer_delays=True)
            d = int(np.argmax(ch.tap_energies()))
            p = ch.paths[0]
            g = 2 * n
            k = (round(p.rx_freq * g) % g * g, round(p.tx_freq * g) % g * g)
            sup = support(d, [k], g=g)
            plan = build_polling_plan([sup], polls=4)
            tr = simulate_rx(ch, build_frame("proposed", plan.subframes, cfg.n_taps),
                             steering_schedule(plan, cfg), cfg, rng)
            est, _, _ = ls_gains(tr, plan, d, 0, sup, cfg)
            errs.append(abs(est[0] - ch.tap_gain_vectors[d, 0]) ** 2 / n ** 2)
        spread.append(np.mean(errs))
    assert spread[0] > spread[1] > spread[2]
