"""Channel pruning of CNNs by pivoted-QR selection of input channels."""
from .analysis import evaluate_topk, report, sensitivity_sweep
from .inference import TapRequest, contribution_vector, forward, forward_to_layer
from .linalg import (
    find_representative_rows,
    least_squares_row,
    pseudo_inverse,
    qr_column_pivot,
    svd,
)
from .model_graph import (
    BottleneckUnit,
    ChannelAffine,
    ChannelSample,
    Conv2D,
    Dense,
    Flatten,
    Graph,
    Pool,
    ReLU,
    count_flops,
    load_model,
    rewrite_conv_pair,
    save_model,
    validate_graph,
)
from .pruning import (
    PlanEntry,
    PruneOutcome,
    PrunePlan,
    fold_scales,
    prune_layer,
    prune_pipeline,
    prune_resnet_backward,
)
from .sampling import (
    ContributionMatrix,
    SampleConfig,
    collect_contributions,
    collect_joint_contributions,
)
from .tensor_core import ConvParams, add, channel_gather, conv2d, pool2d, relu

__version__ = "0.1.0"
