"""
The command line, end to end
============================

Drives ``chainhdr`` through its subcommands on a small synthetic dataset:
generate, split, train briefly, run the full pipeline on one image and
evaluate an inferred stack against ground truth. The same steps work from
a shell, e.g. ``chainhdr train --data DIR --epochs 2``.

Run: ``python demos/07_command_line.py [work_dir]``
"""

# %%
import json
import sys
import tempfile
from pathlib import Path

from chainhdr.cli import main

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
data, ckpt = work / "data", work / "model.ckpt"


def run(*args):
    print("$ chainhdr", " ".join(map(str, args)))
    code = main([str(a) for a in args])
    print("exit", code)
    assert code == 0


# %%
run("synthetic", "--out", data, "--count", 20)
run("prepare", "--data", data)
splits = json.loads((data / "splits.json").read_text())

# %% [markdown]
# Two short epochs at width 8; the last one is chained (stage inputs come
# from the previous stage's output rather than ground truth).

# %%
run("train", "--data", data, "--checkpoint", ckpt, "--epochs", 2, "--width", 8,
    "--batch-size", 8, "--patch-stride", 16)

# %%
scene = data / splits["test"][0]
run("pipeline", "--input", scene / "ev0.png", "--checkpoint", ckpt, "--out", work / "result", "--stride", 8)
print(json.dumps(json.loads((work / "result" / "manifest.json").read_text()), indent=1))

# %%
run("evaluate", "--gt", scene, "--inferred", work / "result" / "stack", "--out", work / "report.json")
