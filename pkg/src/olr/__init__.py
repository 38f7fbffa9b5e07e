"""Label-indexed image embeddings learned from occlusion-softened classifier outputs.

Everything runs on a small numpy autodiff engine (:mod:`olr.tensor`).
"""

__version__ = "0.1.0"
