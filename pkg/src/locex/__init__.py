"""locex: local surrogate explanations from one perturbation-fitting core.

Every supported attribution method is a configuration of the same engine:
pick a neighborhood around the query point, a weighting kernel and a loss,
then fit a linear surrogate to the model over that neighborhood.  The
`registry` function returns the stock configurations; `explain` runs one.
"""

__version__ = "0.1.0"

from .core import (
    DegenerateVectorError,
    DimensionMismatchError,
    RandomStream,
    RankDeficiencyError,
    cosine_distance,
    l1_distance,
)
from .engine import (
    METHODS,
    Explanation,
    FitConfig,
    GradientMatching,
    LfaInstance,
    Regularized,
    SquaredError,
    explain,
    needs_gradients,
    registry,
)
from .neighborhoods import (
    BernoulliMask,
    ExponentialKernel,
    GaussianAdditive,
    NeighborhoodSpec,
    OneHotMask,
    PerturbationSet,
    ShapleyKernel,
    UniformKernel,
    UniformScalarMultiplicative,
    sample_perturbations,
)
from .models import (
    Architecture,
    LinearModel,
    LogisticModel,
    MlpModel,
    PredictiveModel,
    QuadraticModel,
    SinusoidModel,
    TrainConfig,
    fd_gradient,
    load_model,
    save_model,
    train_sgd,
)
from .dataio import (
    Dataset,
    knn_impute,
    load_csv,
    normalize,
    split,
    synth_generate,
)
from .analysis import (
    check_recovery,
    crossover_sign_test,
    equivalence_matrix,
    estimate_class_distance,
    nfl_construct,
    perturbation_test,
    reparam_recovery_check,
)

__all__ = [
    "__version__",
    "DegenerateVectorError",
    "DimensionMismatchError",
    "RandomStream",
    "RankDeficiencyError",
    "cosine_distance",
    "l1_distance",
    "METHODS",
    "Explanation",
    "FitConfig",
    "GradientMatching",
    "LfaInstance",
    "Regularized",
    "SquaredError",
    "explain",
    "needs_gradients",
    "registry",
    "BernoulliMask",
    "ExponentialKernel",
    "GaussianAdditive",
    "NeighborhoodSpec",
    "OneHotMask",
    "PerturbationSet",
    "ShapleyKernel",
    "UniformKernel",
    "UniformScalarMultiplicative",
    "sample_perturbations",
    "Architecture",
    "LinearModel",
    "LogisticModel",
    "MlpModel",
    "PredictiveModel",
    "QuadraticModel",
    "SinusoidModel",
    "TrainConfig",
    "fd_gradient",
    "load_model",
    "save_model",
    "train_sgd",
    "Dataset",
    "knn_impute",
    "load_csv",
    "normalize",
    "split",
    "synth_generate",
    "check_recovery",
    "crossover_sign_test",
    "equivalence_matrix",
    "estimate_class_distance",
    "nfl_construct",
    "perturbation_test",
    "reparam_recovery_check",
]
