"""
Why a chain, and why MPReLU on the dark side
============================================

Two small studies on synthetic data, each with three seeds:

* a chain of three one-step networks against one network of the same size
  trained to jump EV0 -> EV+3 directly, with the same number of optimizer
  steps in total;
* the darkening stage EV0 -> EV-1 trained with MPReLU and with PReLU.

The residual of one subnetwork is bounded by tanh, so a single stage cannot
move a normalized value by more than 1. The three-stop jump needs more than
that for every dark pixel, which the chain gets by splitting the work.

Run: ``python demos/04_chain_and_activation_studies.py`` (several minutes)
"""

# %%
from chainhdr import experiments as X

for seed in (0, 1, 2):
    r = X.chain_vs_single(seed)
    stages = " ".join(f"{e:.4f}" for e in r.chain_stage_errors)
    print(f"seed {seed}: chain EV+3 {r.chain_error:.4f} (per stage {stages})  single {r.single_error:.4f}",
          flush=True)

# %%
for seed in (0, 1, 2):
    r = X.activation_ablation(seed)
    print(f"seed {seed}: EV-1 error  mprelu {r.errors['mprelu']:.4f}  prelu {r.errors['prelu']:.4f}", flush=True)
