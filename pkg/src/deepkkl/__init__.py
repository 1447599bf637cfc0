"""Output prediction for autonomous nonlinear systems via KKL observers.

The package spans the whole pipeline: benchmark ODE simulation, dataset
generation and scaling, a latent contraction model with a learned output map
(plus RNN/GRU baselines trained under the same protocol), forecasting, and
numerical verification of the contraction, embedding-map, and error-bound
theory behind the predictor.
"""

from .data import Dataset, Scaler, add_noise, apply_scaler, generate, invert_scaler, read_dataset, write_dataset
from .dynsys import SystemSpec, Trajectory, make_system, observe, rk4_step, sample_initial, simulate, vector_field
from .errors import (
    DeepKklError,
    DegenerateScaleError,
    FileFormatError,
    InvalidArgumentError,
    InvalidStateError,
    NumericError,
    NumericOverflowError,
    SchemaMismatchError,
)
from .evaluate import (
    BoundReport,
    bound_certification,
    evaluate_table,
    generalization_heatmap,
    init_error_bound,
    make_lti_case,
    mse,
    noise_sweep,
    total_error_bound,
)
from .kkl import (
    DiscretePair,
    KklModel,
    build_a,
    closed_loop_filter,
    contraction_constants,
    discretize,
    lipschitz_constants,
    matrix_exp,
    new_kkl_model,
    open_loop_rollout,
    predict,
    t_map,
    t_map_pde_residual,
)
from .modelio import load_checkpoint, load_model, save_checkpoint, save_model
from .nets import (
    AdamState,
    GruParams,
    MlpParams,
    RnnParams,
    adam_init,
    adam_step,
    gru_step,
    mlp_backward,
    mlp_forward,
    rnn_step,
    spectral_norm,
)
from .train import BaselineModel, TrainConfig, TrainHistory, train, train_baseline, train_kkl, trajectory_loss

__version__ = "0.1.0"
