from .layers import GRU, LSTM, RNN, BatchNorm1d, Conv1d, Dropout, Flatten, Layer, Linear, MaxPool1d, ReLU, gru_forward
from .model import (
    LayerSpec,
    Model,
    ModelSpec,
    ParamCount,
    SpecError,
    baseline_spec,
    build_model,
    count_params,
    flm_spec,
    ftcm_spec,
    hybrid_spec,
    propagate,
)
