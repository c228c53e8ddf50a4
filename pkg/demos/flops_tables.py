# Counting the cost of two classic ImageNet networks
#
# One multiply-accumulate counts as one FLOP. Bias adds, ReLU, pooling and
# the shortcut adds are tallied separately as minor ops.

from qrprune import count_flops, zoo
from qrprune.analysis import format_flops
from qrprune.model_graph import count_params

# Weights don't matter for counting, so build with zeros to skip the RNG.

vgg = zoo.vgg16(init="zeros")
rep = count_flops(vgg)
print(vgg.name, format_flops(rep.total), f"({rep.total:,})")

# Where does the cost go? Most of it sits in the 3x3 convs at 56 and 112 pixels.

for row in rep.layers:
    if row.flops:
        share = row.flops / rep.total
        print(f"  {row.layer_id:10} {row.flops:>14,}  {share:6.1%}")

# ResNet-50, with the stride on each down-sampling unit's first 1x1 conv.

resnet = zoo.resnet50(init="zeros")
rep = count_flops(resnet)
print(resnet.name, format_flops(rep.total), f"({rep.total:,})")

per_stage = {}
for row in rep.layers:
    stage = row.layer_id[:4] if row.layer_id.startswith("res") else row.layer_id
    per_stage[stage] = per_stage.get(stage, 0) + row.flops
for stage, flops in per_stage.items():
    if flops:
        print(f"  {stage:10} {flops:>14,}")

print("minor ops:", f"{rep.minor_total:,}", " params:", f"{count_params(resnet):,}")
