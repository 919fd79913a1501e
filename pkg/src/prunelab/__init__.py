"""prunelab: structured pruning laboratory for small convolutional networks.

A compact numpy/numba training and inference engine plus a pruning toolkit:
feature-map and kernel-level masks, best-of-N random mask selection, the
absolute-weight-sum baseline, prune/retrain pipelines, and exact MAC and
weight accounting.
"""

from .archparse import (
    FC,
    Conv,
    MaxPool,
    NetworkSpec,
    Softmax,
    parse_architecture,
    render_architecture,
)
from .bench import CostModel, bench_conv, bench_network, cost_model
from .data import (
    Dataset,
    ZcaTransform,
    augment_crop_flip,
    gcn,
    load_cifar10,
    load_idx,
    split_validation,
    synthetic_digits,
    ten_crop_predict,
    write_idx,
    zca_apply,
    zca_fit,
)
from .errors import (
    ArchitectureError,
    CheckpointError,
    ConfigError,
    DataError,
    MaskError,
    NumericError,
    PruneLabError,
    ShapeError,
)
from .layers import (
    MACS,
    BatchNormParams,
    ConvLayer,
    MacCounter,
    batchnorm_backward,
    batchnorm_forward,
    conv_backward,
    conv_forward,
    dense_backward,
    dense_forward,
    get_arithmetic_mode,
    maxpool_backward,
    maxpool_forward,
    relu,
    set_arithmetic_mode,
    softmax_xent,
)
from .network import (
    Network,
    build,
    count_macs,
    count_weights,
    evaluate_mcr,
    evaluate_record,
    forward,
    initialize,
    load,
    predict,
    save,
)
from .pruning import (
    CombinedConfig,
    PruneReport,
    PruningMask,
    apply_feature_map_mask,
    apply_kernel_mask,
    combined_prune,
    default_layer_range,
    enumerate_candidates,
    evaluate_mask,
    overlay_network,
    pruning_report,
    sample_mask,
    select_best_of_n,
    weight_sum_select,
)
from .trainer import (
    ExperimentLog,
    OptimizerState,
    TrainConfig,
    retrain,
    rmsprop_step,
    train,
    trainable_parameters,
)

__version__ = "0.1.0"
