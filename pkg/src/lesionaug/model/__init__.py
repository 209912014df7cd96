from .layers import (
    MICRO_DEFAULT,
    MODEL_PRESETS,
    TABLE_III_ROWS,
    VGG19_TABLE_III,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Input,
    LayerSpec,
    MaxPool2D,
    ModelConfig,
    ShapeMismatch,
    load_model_config,
    param_count,
    total_params,
    validate_config,
)
from .network import (
    Model,
    backward,
    cross_entropy,
    forward,
    grad_check,
    init_model,
    load_model,
    predict,
    save_model,
    sgd_step,
    zero_model,
)
from .training import EmptySplit, TrainConfig, TrainHistory, evaluate, train
