"""
What CPWC costs inside a ResNet
===============================

Every 1x1 convolution of a network spec is swapped for a CPWC block and the
parameter and multiply-accumulate totals are recounted.
"""

from cpwc import Variant, builtin_spec, count_cpwc, count_network, surgery

print("one 256 -> 64 node:")
for v in Variant:
    print(f"  {v.value:<17} {count_cpwc(256, 64, v):>7,} params")
print(f"  dense 3x3        {9 * 256 * 64:>7,} params")

for name in ("resnet164", "resnet50"):
    spec = builtin_spec(name)
    print()
    print(count_network(spec).to_text(), end="")
    for v in (Variant.NO_STAGE2, Variant.FULL):
        rep = count_network(surgery(spec, v), baseline=spec)
        print(rep.to_text().splitlines()[-1])

# where the extra cost goes in ResNet-50: the largest per-node increases
spec = builtin_spec("resnet50")
rep = count_network(surgery(spec, Variant.FULL), baseline=spec)
print("\nlargest MAC increases:")
for node, dp, dm in sorted(rep.deltas(), key=lambda t: -t[2])[:5]:
    print(f"  {node.label:<16} {node.in_channels:>4} -> {node.out_channels:<4} "
          f"+{dp:>6,} params  +{dm / 1e6:6.2f}M MACs")
