"""
Synthetic exposure stacks
=========================

The training data format is one directory per scene holding seven 8-bit
exposures ``ev-3.png .. ev+3.png``. Real bracketed datasets are not
shipped, so tests and demos use procedural scenes (gradients, blobs,
checkerboards) pushed through the analytic exposure change
clamp(I0 * 2**ev).

Run: ``python demos/02_synthetic_stacks.py [out_dir]``
"""

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from chainhdr import data as D
from chainhdr import inference as I

stack = D.synthetic_stack(seed=3)
print(stack.scene_id, stack.shape, "EVs:", stack.evs)

# %% [markdown]
# The middle exposure is the member whose grayscale histogram has the
# highest entropy. For these scenes it is usually EV0.

# %%
members = [stack.images[ev] for ev in stack.evs]
for ev, img in zip(stack.evs, members):
    print(f"EV {ev:+d}: mean {img.mean():6.1f}  entropy {D.histogram_entropy(img):.3f}")
print("most evenly exposed member: EV", stack.evs[D.select_middle_exposure(members)])

# %% [markdown]
# Distance from the middle exposure. PSNR against EV0 falls as the
# exposure gap grows in either direction.

# %%
for ev, value in I.exposure_distance_profile(stack):
    print(f"EV {ev:+d}: {value:6.2f} dB")

# %% [markdown]
# Writing a small dataset and splitting it 7:3:10.

# %%
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "synthetic"
for seed in range(20):
    D.save_stack(D.synthetic_stack(seed), out / D.synthetic_stack(seed).scene_id)
train, val, test = D.split_dataset(sorted(p.name for p in out.iterdir()), seed=0)
print(f"{out}: train {len(train)}, val {len(val)}, test {len(test)}")
print("training patches per stack at stride 10:", len(D.extract_patches(stack.images[0])))
