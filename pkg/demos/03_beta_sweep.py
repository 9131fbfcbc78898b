# %% [markdown]
# # Sensitivity to the initial penalty
#
# The two-level method starts from beta1 and amplifies it when the slack
# stalls.  Small and moderate values land on the same schedule.  A very large
# start weights consensus over cost from the first pass, so the iterates settle
# on a worse schedule and take longer to get there.  This is the same sweep the
# ``wdnadmm sweep`` command runs, writing one row per beta1 to sweep.csv.

# %%
import csv
import tempfile
from pathlib import Path

from wdnadmm.runner import RunConfig, sweep

out = Path(tempfile.mkdtemp(prefix="wdnadmm-sweep-"))
config = RunConfig(algorithm="two-level", delta=5.0, output_dir=str(out))
rows = sweep(config, [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0])

# %%
for row in rows:
    print({k: row[k] for k in ("beta1", "status", "iterations", "objective", "max_violation")})

# %%
with open(out / "sweep.csv", newline="") as fh:
    print(len(list(csv.DictReader(fh))), "rows in", out / "sweep.csv")
