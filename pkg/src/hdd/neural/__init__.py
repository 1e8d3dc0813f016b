from .layers import (
    LstmParams,
    NonFiniteError,
    ShapeError,
    conv1d_relu_pool,
    conv1d_relu_pool_backward,
    conv1d_relu_pool_forward,
    conv_output_len,
    dense_apply,
    dense_backward,
    loss,
    lstm_backward,
    lstm_cell_backward,
    lstm_cell_forward,
    lstm_cell_step,
    lstm_forward,
    sigmoid,
)
from .store import (
    AdamConfig,
    ParamStore,
    gradient_check,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
)
