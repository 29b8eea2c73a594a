"""
Image quality metrics
=====================

PSNR over all channels, SSIM on luma with an 11x11 Gaussian window, and
five-scale MS-SSIM, plus the per-EV report used by ``chainhdr evaluate``.

Run: ``python demos/06_metrics.py``
"""

# %%
import numpy as np

from chainhdr import data as D
from chainhdr import metrics as M

img = D.synthetic_stack(0, 192, 192).images[0]
rng = np.random.default_rng(0)

for sigma in (0, 2, 5, 10, 20):
    noisy = np.clip(img + rng.normal(0, sigma, img.shape), 0, 255).astype(np.uint8)
    print(f"noise sigma {sigma:2d}: PSNR {M.psnr(img, noisy):6.2f}  SSIM {M.ssim(img, noisy):.4f}  "
          f"MS-SSIM {M.ms_ssim(img, noisy):.4f}")

# %% [markdown]
# Aggregating per-image rows: mean and population standard deviation.

# %%
report = M.MetricReport()
for seed in range(4):
    st = D.synthetic_stack(seed, 192, 192)
    for ev in (-1, 1):
        shifted = D.exposure_transform(st.images[0], ev)
        noisy = np.clip(shifted + rng.normal(0, 3, shifted.shape), 0, 255).astype(np.uint8)
        report.add(scene=st.scene_id, ev=ev, psnr=M.psnr(st.images[ev], noisy),
                   ssim=M.ssim(st.images[ev], noisy), ms_ssim=M.ms_ssim(st.images[ev], noisy))
for ev in (-1, 1):
    print(f"EV {ev:+d}", {m: tuple(round(v, 4) for v in report.aggregate(m, ev=ev)) for m in report.metrics})
