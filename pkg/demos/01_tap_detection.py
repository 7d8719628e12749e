"""Which delay taps carry the channel?

One 32x32 link with three paths, probed with random phase-shifter settings for
forty frames at 0 dB. The receiver never sees the beams, only per-tap energy.
"""
# %%
import numpy as np

from dsdsim.detect import DetectorConfig, power_ratio, select_taps, tap_statistics
from dsdsim.evaluate import ExperimentSpec, _streams
from dsdsim.model import sample_channel
from dsdsim.probing import build_frame, random_schedule, simulate_rx

spec = ExperimentSpec(frames=40)
cfg = spec.system(snr_db=0.0, speed_kmh=120.0, bits=2)
rngs = _streams(seed=7, trial=0)
channel = sample_channel(cfg, 3, rngs["channel"])

# %% Random probing: 40 frames of 5 subframes, zero-padded training
subframes = spec.frames * spec.subframes_per_frame
trace = simulate_rx(channel, build_frame("proposed", subframes, cfg.n_taps),
                    random_schedule(cfg, subframes, rngs["probe"]), cfg, rngs["noise"])
stats = tap_statistics([trace], cfg)

# %% Compare the test statistic with the true tap energies
energy = channel.tap_energies()
for d in range(cfg.n_taps):
    print(f"tap {d:2d}  TS {stats.ts[d]:8.4f}   true energy share {energy[d] / energy.sum():6.3f}")

# %% Select taps and see how much of the channel they hold
chosen = select_taps(stats, DetectorConfig(mu=0.03, cap=8))
print("selected taps:", chosen.tolist())
print(f"captured power: {power_ratio(energy, chosen):.3f}")
