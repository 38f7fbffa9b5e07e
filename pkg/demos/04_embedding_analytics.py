"""
Reading the embeddings
======================

Given trained embeddings (from ``olr pipeline --out DIR``), this script looks
at three things: correlations between label-row norms, the principal
component of each label's rows, and how well a single linear layer recovers
the labels. Pass the output directory as the first argument; without one it
trains the quick ``tiny`` preset into a temporary directory.
"""

# %%
import sys
import tempfile

import numpy as np

from olr import analytics as A
from olr.cli import main
from olr.config import load_config
from olr.pipeline import Workspace

if len(sys.argv) > 1:
    out, preset = sys.argv[1], "desk"
else:
    out, preset = tempfile.mkdtemp(), "tiny"
    main(["pipeline", "--preset", preset, "--out", out, "-q"])
ws = Workspace(out, load_config(preset=preset))
full, train, test = ws.dataset()
e_train, e_test = ws.embeddings()
names = full.label_names

# %%
# Norm correlations
# -----------------
# The synthetic generator ties large to circle (+), red to bright (+) and
# two_objects to large (-). The same signs should show up between row norms.
r = A.pearson_matrix(A.norm_table(e_test))
for a, b in (("large", "circle"), ("red", "bright"), ("two_objects", "large")):
    print(f"r({a}, {b}) = {r[names.index(a), names.index(b)]:+.2f}")

# %%
# One dominant direction per label
# --------------------------------
for l, name in enumerate(names):
    res = A.pca(e_test[:, l, :])
    pb = A.point_biserial(res.projections, test.labels[:, l])
    print(f"{name:17s} explained {np.round(res.explained_ratios[:3], 3)}  "
          f"corr(projection, label) {pb:+.2f}")

# %%
# Linear probe
# ------------
probe = A.linear_probe(e_train, train.labels, e_test, test.labels, epochs=100, seed=0,
                       learning_rate=1e-3)
print("probe accuracy per label:", probe.per_label.round(2))
