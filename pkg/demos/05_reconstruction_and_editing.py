"""
Decoding and editing embeddings
===============================

A decoder maps embeddings back to pixels. Because each label owns one row,
editing an attribute is a row replacement: a vector sampled from that label's
fitted Gaussian adds it, a zero row removes it. The frozen classifier then
judges whether the decoded image moved the intended way.

Pass a finished ``olr pipeline`` output directory to use desk-scale models;
otherwise the ``tiny`` preset is trained first (its pictures are blurry).
"""

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from olr.classifier import predict_probs
from olr.cli import main
from olr.config import load_config
from olr.dataset import write_ppm
from olr.decoder import decode, mean_image, montage, ssim_rgb_batch
from olr.editing import edit_and_decode, evaluate_edits, fit_all
from olr.pipeline import Workspace
from olr.siamese import embed

if len(sys.argv) > 1:
    out, preset = sys.argv[1], "desk"
else:
    out, preset = tempfile.mkdtemp(), "tiny"
    main(["pipeline", "--preset", preset, "--out", out, "-q"])
ws = Workspace(out, load_config(preset=preset))
full, train, test = ws.dataset()
clf, siamese, decoder = ws.classifier(), ws.siamese(), ws.decoder()

# %%
# Reconstruction against the mean-image baseline
# -----------------------------------------------
rec = decode(decoder, embed(siamese, test.images))
baseline = np.broadcast_to(mean_image(train), test.images.shape)
print("SSIM reconstruction:", ssim_rgb_batch(rec, test.images).mean().round(3))
print("SSIM mean image    :", ssim_rgb_batch(baseline, test.images).mean().round(3))

# %%
# One edit, written as an original | reconstruction | edited triptych
# -------------------------------------------------------------------
gaussians = fit_all(ws.embeddings()[0], train.labels)
i = int(np.flatnonzero(test.labels[:, full.label_names.index("red")] == 0)[0])
plain, edited = edit_and_decode(siamese, decoder, test.images[i], ["+red:1.5"], gaussians,
                                seed=0, label_names=full.label_names)
p0, p1 = predict_probs(clf, np.stack([plain, edited]))[:, full.label_names.index("red")]
print(f"p(red) before {p0:.2f}, after {p1:.2f}")
path = Path(out) / "demo-triptych.ppm"
write_ppm(path, montage([test.images[i], plain, edited]))
print("wrote", path)

# %%
# Classifier-judged efficacy over many images
# -------------------------------------------
for op in "+-":
    r = evaluate_edits(clf, siamese, decoder, test, gaussians, op, num_images=50)
    print(f"{op} moved {r.fraction_moved:.2f} of {r.count}; "
          f"edited shift {r.edited_shift:.3f}, other labels {r.other_shift:.3f}")
