# Pruning a small residual network from the back
#
# Three bottleneck units: u1 has a projection shortcut, u2 and u3 are
# identity. Pruning walks the units last to first. When a unit's first conv
# keeps more channels than the unit after it still needs, the identity
# shortcut gets a channel sample so the add lines up.

from qrprune import (
    PlanEntry,
    PrunePlan,
    SampleConfig,
    count_flops,
    forward,
    prune_resnet_backward,
    validate_graph,
    zoo,
)

net = zoo.bottleneck_cnn()
calib = zoo.random_inputs(net, 6, seed=2)

plan = PrunePlan(
    [
        PlanEntry("u1", keep_fraction=1.0),
        PlanEntry("u2", keep_fraction=0.75),
        PlanEntry("u3", keep_fraction=0.5),
        PlanEntry("head", keep_fraction=0.5),
    ],
    direction="backward_resnet",
)
pruned, log = prune_resnet_backward(net, plan, calib, SampleConfig(seed=0, n_samples=300))

for o in log:
    extra = ""
    if o.required is not None:
        extra = f"  selected {o.selected.size}, shortcut needs {o.required.size}"
    print(f"{o.layer_id:12} C={o.n_channels:3} kept={o.kept.size:3} residual={o.residual:.3g}{extra}")

# Which shortcuts picked up a channel sample?

for unit in pruned.units():
    sample = None if unit.shortcut_sample is None else unit.shortcut_sample.tolist()
    print(unit.name, "shortcut sample:", sample)

print("violations:", validate_graph(pruned))
print("FLOPs", count_flops(net).total, "->", count_flops(pruned).total)
print("logits", forward(pruned, zoo.random_inputs(net, 1, seed=5)[0]).round(3))
