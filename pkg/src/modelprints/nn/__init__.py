from .layers import (
    LayerSpec,
    conv2d,
    relu,
    sigmoid,
    maxpool,
    global_avg_pool,
    linear,
    batchless_norm,
    upsample,
    softmax_xent_spec,
)
from .network import (
    Network,
    build_network,
    softmax_xent,
    mse_loss,
    l1_loss,
    bce_loss,
    save_checkpoint,
    load_checkpoint,
)
from .optim import OptimizerConfig, TrainSchedule, Adamax, SGD, make_optimizer, train_classifier

__all__ = [
    "LayerSpec",
    "conv2d",
    "relu",
    "sigmoid",
    "maxpool",
    "global_avg_pool",
    "linear",
    "batchless_norm",
    "upsample",
    "softmax_xent_spec",
    "Network",
    "build_network",
    "softmax_xent",
    "mse_loss",
    "l1_loss",
    "bce_loss",
    "save_checkpoint",
    "load_checkpoint",
    "OptimizerConfig",
    "TrainSchedule",
    "Adamax",
    "SGD",
    "make_optimizer",
    "train_classifier",
]
