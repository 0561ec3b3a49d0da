"""Poisson latent tensor factorization with EM and variational Bayes."""

__version__ = "0.1.0"

from .errors import PltfError, ShapeError, SingularModelError, ValidationError
from .evaluation import (
    HoldoutSplit,
    SweepReport,
    auc,
    generate_cp,
    link_prediction_run,
    make_holdout,
    sweep_order,
)
from .inference import (
    FactorState,
    FitConfig,
    FitResult,
    LatentStats,
    compute_bound,
    em_step,
    fit,
    init_factors,
    kl_divergence,
    latent_stats,
    vb_step,
)
from .model import (
    FactorSpec,
    GammaPrior,
    Observation,
    PltfModel,
    build_cp,
    build_model,
    build_tucker,
    validate,
)
from .tensor import CooTable, IndexDef, NamedTensor, delta, full_product, hadamard, safe_div
