"""1D Self-Organized Operational Neural Networks for patient-specific ECG beat classification."""

from .core_math import fold_adjoint, matvec, power_stack, unfold
from .generative_layer import (
    GenerativeLayerParams,
    LayerGrads,
    layer_backward,
    layer_forward,
    naive_forward_oracle,
)
from .network import (
    Model,
    NetworkConfig,
    TrainSchedule,
    best_of_runs,
    build_network,
    load_model,
    mac_count,
    param_count,
    save_model,
    sgd_step,
    train_patient,
)

__version__ = "0.1.0"
