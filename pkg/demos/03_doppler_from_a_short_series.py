"""How well can sixteen noisy samples pin down a Doppler shift?

Gains measured once per polling period form a short complex series. The
weighted phase-averaging estimator reads the frequency off its autocorrelation.
"""
# %%
import numpy as np

from dsdsim.track import GainSeries, wnalp, wnalp_weights

print("weights for 16 samples:", np.round(wnalp_weights(8), 4), "sum", wnalp_weights(8).sum())

# %% Error against SNR, compared with the Cramer-Rao bound for a tone
rng = np.random.default_rng(0)
r = 16
i = np.arange(1, r + 1)
for snr_db in (0, 5, 10, 15, 20):
    sigma = np.sqrt(10 ** (-snr_db / 10) / 2)
    errs = []
    for _ in range(1000):
        w = rng.uniform(-1, 1)
        x = np.exp(1j * (w * (i - 0.5) + rng.uniform(0, 2 * np.pi)))
        x += sigma * (rng.standard_normal(r) + 1j * rng.standard_normal(r))
        errs.append(wnalp(GainSeries(0, 0, x, i - 0.5, 1.0)).doppler - w)
    crb = np.sqrt(6 / (10 ** (snr_db / 10) * r * (r ** 2 - 1)))
    print(f"{snr_db:3d} dB   rms error {np.sqrt(np.mean(np.square(errs))):.4f} rad   bound {crb:.4f} rad")
