# How much of one layer can go?
#
# The planted fixture feeds conv2 eight channels of which four are scaled
# copies of the other four. Up to half the channels can be removed for free;
# past that, the reconstruction error jumps.

from qrprune import SampleConfig, evaluate_topk, forward, sensitivity_sweep, zoo

net = zoo.planted_redundancy_cnn()
calib = zoo.random_inputs(net, 8, seed=2)

# Label a held-out set with the unpruned network's own top-1, so the
# baseline sits at 1.0 and any drop is the pruning's doing.

xs = zoo.random_inputs(net, 40, seed=3)
evalset = [(x, int(forward(net, x).argmax())) for x in xs]
print("baseline top-1", evaluate_topk(net, evalset, 1))

fractions = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875]
rep = sensitivity_sweep(net, "conv2", fractions, repeats=5, calib=calib, evalset=evalset,
                        config=SampleConfig(seed=10, n_samples=800))

print(f"{'pruned':>7} {'m':>2} {'residual':>10} {'top1':>6} {'FLOPs':>8}")
for row in rep.mean_rows():
    print(f"{row.fraction:7.3f} {row.m:2d} {row.residual:10.3g} {row.top1:6.3f} {row.flops:8,}")

# The raw per-repeat table, ready for a spreadsheet:
print(rep.to_csv())
