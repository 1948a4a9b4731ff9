"""Multi-output Gaussian processes with convolution-process covariances."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ConvGPError,
    DataError,
    DegenerateCurvatureError,
    InvalidArgumentError,
    NumericFailureError,
    OptimizerStalledError,
)
from .gram import (  # noqa: E402
    CovarianceParts,
    InducingSet,
    MultiOutputDataset,
    NoiseParams,
    Variant,
    assemble,
    build_test_parts,
)
from .kernels import GaussianKernelParams, Ode1KernelParams, erf  # noqa: E402
from .models import (  # noqa: E402
    ModelState,
    Prediction,
    log_marginal,
    posterior_u,
    predict,
)

__all__ = [
    "ConfigError", "ConvGPError", "DataError", "DegenerateCurvatureError",
    "InvalidArgumentError", "NumericFailureError", "OptimizerStalledError",
    "CovarianceParts", "InducingSet", "MultiOutputDataset", "NoiseParams", "Variant",
    "assemble", "build_test_parts", "GaussianKernelParams", "Ode1KernelParams", "erf",
    "ModelState", "Prediction", "log_marginal", "posterior_u", "predict",
]
