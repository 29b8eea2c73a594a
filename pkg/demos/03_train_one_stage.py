"""
Overfitting one stage
=====================

Fits the EV0 -> EV+1 subnetwork at width 8 on twenty synthetic stacks and
prints the epoch means of the L1 term. The full run is 2000 steps (about
five minutes on one core); pass a smaller number to try it quickly.

Run: ``python demos/03_train_one_stage.py [iterations]``
"""

# %%
import sys

import numpy as np

from chainhdr import data as D
from chainhdr import experiments as X
from chainhdr import network as N

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 2000


def show(rec):
    print(f"epoch {rec['epoch']:3d}  step {rec['iterations']:5d}  l_pixel {rec['train_pixel']:.4f}", flush=True)


res = X.toy_overfit(width=8, iterations=iterations, batch_size=8, on_epoch=show)
print(f"final l_pixel over the training set {res.final_pixel:.4f} ({res.seconds:.0f}s)")

# %% [markdown]
# What the stage does to a held-out image: the brighter exposure should be
# close to the analytic doubling.

# %%
from chainhdr.inference import infer_image

st = D.synthetic_stack(X.TEST_SEED_OFFSET)
pred = infer_image(res.params, st.images[0], stride=8)
print("held-out L1 term:", round(X.image_pixel_loss(pred, st.images[1]), 4))
print("identity baseline:", round(X.image_pixel_loss(st.images[0], st.images[1]), 4))
err = np.abs(pred.astype(int) - st.images[1].astype(int))
print("8-bit abs error percentiles (50/90/99):", np.percentile(err, [50, 90, 99]))
