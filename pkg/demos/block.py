"""
One CPWC block against the brute-force oracle
=============================================

The block output is the sum of three convolution paths. Each path can be
rebuilt as a filter bank and pushed through the slow reference convolution;
the sums agree to rounding.
"""

import numpy as np

from cpwc import Variant, cpwc_forward, init_params, plan_groups
from cpwc.layer import oracle_paths

rng = np.random.default_rng(0)
x = rng.normal(size=(2, 6, 9, 9))

for variant in Variant:
    for stride in (1, 2):
        p = init_params(plan_groups(6, 4), variant, stride, seed=1)
        fast = cpwc_forward(x, p)
        paths = oracle_paths(x, p)
        slow = sum(paths.values())
        err = np.abs(fast - slow).max() / np.abs(slow).max()
        print(f"{variant.value:<17} stride {stride}: out {fast.shape}, "
              f"paths {sorted(paths)}, rel err {err:.1e}")

# the block has no bias and no nonlinearity, so it is homogeneous
p = init_params(plan_groups(6, 4), Variant.FULL, 1, seed=1)
print("f(3x) == 3 f(x):", np.allclose(cpwc_forward(3 * x, p), 3 * cpwc_forward(x, p)))

# a single bright pixel shows the receptive field: the 1x1 path sees one
# pixel, stage 1 a 3x3 window, stage 2 on top of it a 5x5 window
impulse = np.zeros((1, 6, 9, 9))
impulse[0, :, 4, 4] = 1.0
for variant in (Variant.PWC_ONLY, Variant.NO_STAGE2, Variant.FULL):
    p = init_params(plan_groups(6, 4), variant, 1, seed=1)
    touched = np.abs(cpwc_forward(impulse, p)).sum(axis=(0, 1)) > 0
    print(f"{variant.value:<10} receptive field {touched.sum(0).max()}x{touched.sum(1).max()}")
