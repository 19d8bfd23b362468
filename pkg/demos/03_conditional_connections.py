"""
What the conditional connections look like
==========================================

Loads the model trained by ``02_train_and_evaluate.py`` and compares the
connection matrices it predicts for a gait clip and a reaching clip.

Run with ``python3 demos/03_conditional_connections.py``.
"""

# %%
from pathlib import Path

import numpy as np

from conddgcn.data import SynthConfig, synth_generate
from conddgcn.experiments import format_grid, inspect_connections
from conddgcn.network import load_checkpoint
from conddgcn.plotting import write_heatmap_pgm

out = Path(__file__).parent / "out"
ckpt = out / "demo.ckpt"
if not ckpt.exists():
    raise SystemExit(f"{ckpt} not found: run demos/02_train_and_evaluate.py first")
model = load_checkpoint(ckpt)
names = model.skeleton.joint_names

# %%
# Fresh clips from a seed the model never saw.
gait, reach = synth_generate(SynthConfig(count=2, frames=64, seed=77, actions=("gait", "reach")))
ins = {s.action: inspect_connections(model, s) for s in (gait, reach)}
print("conditional blocks:", ins["gait"].blocks, "windows per clip:", len(ins["gait"].starts))

# %%
# Average over windows of the last merging block, then list the strongest
# off-tree links for each action.
def strongest(A, k=5):
    order = np.argsort(-np.abs(A), axis=None)
    rows = []
    for flat in order:
        i, j = np.unravel_index(flat, A.shape)
        if i != j and model.skeleton.parent[j] != i and model.skeleton.parent[i] != j:
            rows.append(f"  {names[i]:>10s} -> {names[j]:<10s} {A[i, j]:+.4f}")
        if len(rows) == k:
            break
    return "\n".join(rows)


mean_A = {a: r.matrices[-1].mean(axis=0) for a, r in ins.items()}
for action, A in mean_A.items():
    print(f"{action}: strongest links between non-adjacent joints")
    print(strongest(A))

# %%
diff = mean_A["gait"] - mean_A["reach"]
print(f"max |gait - reach| = {np.max(np.abs(diff)):.4f}, "
      f"relative to max |entry| = {np.max(np.abs(diff)) / np.max(np.abs(mean_A['gait'])):.2f}")

# %%
# Full grids as text, and as heatmaps (mid-grey is zero).
for action, A in mean_A.items():
    (out / f"connections_{action}.txt").write_text(format_grid(A, names))
    write_heatmap_pgm(out / f"connections_{action}.pgm", A)
write_heatmap_pgm(out / "connections_difference.pgm", diff)
print("grids and heatmaps written to", out)
