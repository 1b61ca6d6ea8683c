"""cen: evolutionary self-distillation for age estimation at desk scale.

A chain of small two-headed networks is trained generation by generation.
Each generation learns from ground truth plus its ancestor's frozen outputs:
tempered label distributions on the classification side and slack intervals
(the ancestor's absolute error) on the regression side. Prediction fuses the
distribution expectation with the denormalized regression output.
"""

from .data import (
    AgeRange,
    DataConfig,
    Dataset,
    Sample,
    datasets_from_config,
    load_csv,
    normalize_age,
    save_csv,
    split,
    split_at,
    synth_generate,
)
from .errors import CenError, ConfigError, DataError, DivergenceError
from .evolution import (
    GenerationState,
    KnowledgeCache,
    RunConfig,
    cache_knowledge,
    evolve,
    full_objective,
    load_cache,
    run,
    save_cache,
    train_ancestor,
    train_offspring,
)
from .inference import (
    Prediction,
    dump_distributions,
    evaluate,
    predict,
    predict_batch,
    predict_ldl,
    predict_reg,
)
from .losses import (
    LossBundle,
    cross_entropy,
    kl_transfer,
    l1_loss,
    ldl_loss,
    one_hot,
    slack_l1,
    slack_term,
    total_ancestor,
    total_ancestor_batch,
    total_evolution,
    total_evolution_batch,
)
from .metrics import EvalReport, build_report, ca, epsilon_error, format_report, mae
from .model import (
    ForwardTrace,
    GradientSet,
    ModelParams,
    OptimizerState,
    ParamBlock,
    backward,
    checkpoint_dict,
    flatten_grads,
    flatten_params,
    forward,
    init_params,
    load_checkpoint,
    n_params,
    save_checkpoint,
    sgd_step,
    unflatten_params,
)
from .numerics import affine, finite_diff_grad, softmax_rows, softmax_tempered

__version__ = "0.1.0"
