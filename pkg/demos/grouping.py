"""
How stage 1 groups its input channels
=====================================

Stage 1 of a CPWC block has one 3x3 filter per output channel, and each
filter reads a group of input channels. How the groups are formed depends
on whether the block keeps, shrinks or widens the channel count.
"""

from cpwc import plan_groups

# shrinking: 256 -> 64, every filter sums a block of four neighbours
plan = plan_groups(256, 64)
print(plan.describe())
print("first groups:", plan.groups[:3])

# uneven split: the leading groups absorb the remainder
plan = plan_groups(10, 3)
print(plan.describe(), plan.sizes, plan.groups)

# same width: plain depthwise
print(plan_groups(8, 8).describe())

# widening: 3 -> 10, single-channel groups, channel 0 is read four times
plan = plan_groups(3, 10)
print(plan.describe())
print("groups:", plan.groups)
print("reads per input channel:", plan.share_counts())

# stage-1 weights, one scalar per (group member, tap)
for c, z in [(256, 64), (64, 256), (64, 64)]:
    print(f"{c:>3} -> {z:<3} stage-1 weights: {9 * plan_groups(c, z).total:,}")
