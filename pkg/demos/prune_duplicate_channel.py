# Removing a channel that carries no new information
#
# The fixture's conv2 sees an input where channel 2 is exactly twice
# channel 0, and both channels use the same kernel slice. Dropping one of
# them and doubling the other's slice should leave the network unchanged.

import numpy as np

from qrprune import SampleConfig, collect_contributions, forward, prune_layer, zoo

net = zoo.duplicate_channel_cnn()
calib = zoo.random_inputs(net, 4, seed=1)

# The contribution matrix: one row per input channel, one column per
# sampled output element. Rows 0 and 2 are proportional.

cm = collect_contributions(net, "conv2", calib, SampleConfig(seed=0, n_samples=400))
print("A is", cm.A.shape, " column-sum error", cm.column_sum_error())
live = cm.A[0] != 0  # ReLU zeros both rows at the same sites
print("row2 / row0 ratio:", np.unique(np.round(cm.A[2, live] / cm.A[0, live], 6)))

# Prune one channel.

out = prune_layer(net, "conv2", m=1, calib=calib, config=SampleConfig(seed=0, n_samples=400))
print("kept", out.kept.tolist())
print("scales", np.round(out.scales, 6).tolist())
print("residual", out.residual)

# Channel 0 went; channel 2 now carries 1 + 1/2 = 1.5 times its old slice.

x = zoo.random_inputs(net, 1, seed=99)[0]
before, after = forward(net, x), forward(out.new_graph, x)
print("logits before", np.round(before, 4))
print("logits after ", np.round(after, 4))
print("FLOPs", out.flops_before, "->", out.flops_after)
