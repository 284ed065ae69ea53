# What the clamp margin does to a positive pair that is already close.
#
# Rows 0 and 1 share a class. Once cos + m exceeds 1 the clamped similarity is
# pinned at 1, so its own entry in dL/dS is zero. The pair keeps learning
# through the other entries of the similarity matrix.

import math

import numpy as np

from cfflab.autodiff import Tape, Tensor
from cfflab.diagnostics import clamp_activation_rate
from cfflab.loss import LossConfig, SimilarityContext, layer_loss, positive_mask


def batch(cos_uv):
    t = math.acos(cos_uv)
    Z = np.array([[1.0, 0.0, 0.0], [math.cos(t), math.sin(t), 0.0],
                  [0.0, 0.6, 0.8], [0.3, 0.0, math.sqrt(0.91)]])
    return Z, np.array([0, 0, 1, 1])


cfg = LossConfig(temperature=0.15, margin=0.2, margin_type="clamp")
for cos_uv in (0.5, 0.75, 0.79, 0.81, 0.95):
    Z, y = batch(cos_uv)
    S = Tensor(Z @ Z.T, requires_grad=True)
    with Tape() as tape:
        loss = layer_loss(SimilarityContext(S, positive_mask(y), y), cfg)
    g = tape.grad(loss, [S])[0]
    car = clamp_activation_rate(S.values, positive_mask(y), cfg.margin)
    print(f"cos = {cos_uv:.2f}   dL/ds01 = {g[0, 1]: .5f}   |row 0 grad| = {np.linalg.norm(g[0]):.4f}   CAR = {car:.2f}")

# Past cos = 0.8 the pair's own entry goes to zero; the row as a whole does not.
