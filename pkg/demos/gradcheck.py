"""
Checking the backward pass by finite differences
================================================

The analytic gradients of every weight bank and of the input are compared
with central differences of the sum of squared outputs. A deliberately
broken backward pass shows what a failure looks like.
"""

import numpy as np

from cpwc import Variant, cpwc_backward, finite_difference_check, init_params, plan_groups
from cpwc.model import build_toy_model
from cpwc.train import check_model_gradients

rng = np.random.default_rng(0)
p = init_params(plan_groups(4, 3), Variant.FULL, 1, seed=0)
x = rng.normal(size=(2, 4, 5, 5))
rep = finite_difference_check(p, x, epsilon=1e-5, tolerance=1e-6)
for bank, err in rep.errors.items():
    print(f"{bank:<7} max rel err {err:.1e}  ({rep.checked[bank]} entries)")
print("passed:", rep.passed)


def transposed_stage2(x, p, g, cache=None):
    gx, gp = cpwc_backward(x, p, g, cache)
    return gx, gp.with_banks(stage2=np.ascontiguousarray(gp.stage2.transpose(0, 2, 1)))


bad = finite_difference_check(p, x, backward=transposed_stage2)
print("with a transposed stage-2 gradient, failing banks:", bad.failing())

# the same check through a whole network: conv, batch norm, ReLU, CPWC, fc
model = build_toy_model("full", 4, 3, 3, in_channels=2, stem_kernel=3, seed=1,
                        precision="double")
for name, layer, k in model.named_params():
    if "BatchNorm" in name:  # shift off the defaults so every gamma matters
        layer.params[k][...] = rng.normal(1.0 if k == "gamma" else 0.0, 0.3,
                                          layer.params[k].shape)
rep = check_model_gradients(model, rng.normal(size=(6, 2, 6, 6)), rng.integers(0, 3, 6),
                            max_entries=8)
print(f"\nwhole model: worst {rep.worst} at {rep.errors[rep.worst]:.1e}, "
      f"{sum(rep.skipped.values())} entries skipped at ReLU kinks, passed: {rep.passed}")
