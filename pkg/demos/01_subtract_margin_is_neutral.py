# Subtracting a margin after the softmax changes the loss but not its gradient.
#
# We build one small batch of unit embeddings from a linear map, then compare
# the no-margin loss against the subtract-margin loss for a few margins.

import numpy as np

from cfflab import autodiff as ad
from cfflab.loss import subtract_neutrality_check

rng = np.random.default_rng(0)
X = rng.standard_normal((10, 6))
W = ad.Tensor(rng.standard_normal((6, 4)), requires_grad=True)
labels = np.array([0, 1, 2, 0, 1, 0, 1, 2, 0, 1])


def embed():
    return ad.l2_normalize_rows(ad.matmul(ad.Tensor(X), W))


# The loss moves up by exactly m while the gradient stays put.

for m in (0.0, 0.1, 0.4, 1.0):
    rep = subtract_neutrality_check(embed, [W], labels, temperature=0.15, margin=m)
    print(f"m = {m:.1f}   loss shift = {rep.forward_shift:.15f}   max |grad diff| = {rep.max_grad_diff:.1e}")
