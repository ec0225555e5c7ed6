"""Mutual completion of incomplete kernel matrices by closed-form EM."""
from .baselines import combine_model, impute_set, mean_impute, zero_impute
from .completion import (
    CompletionTrace,
    KernelSet,
    MkmcConfig,
    StopReason,
    complete,
    e_step,
    initialize,
    m_step,
    run,
)
from .dataset import (
    MaskSchedule,
    SyntheticSpec,
    load_kernel_set,
    make_mask_schedule,
    make_split,
    synth_kernel_set,
)
from .divergence import ObjectiveValue, gaussian_kl, objective
from .errors import *  # noqa: F401,F403
from .evalsuite import (
    EvalReport,
    LabeledSplit,
    SvmModel,
    corr_matrix_distance,
    evaluate,
    roc_score,
    svm_decision,
    svm_train,
)
from .symmat import (
    BlockView,
    Partition,
    SymmetricKernel,
    assemble,
    cholesky_logdet,
    partition_view,
    schur_complement,
    solve_spd,
)

__version__ = "0.1.0"
