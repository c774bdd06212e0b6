"""Federated one-class learning with Support Vector Data Description."""
from ._backend import BACKEND
from .svdd import (
    KernelParams,
    SolverSettings,
    SvddHyperparams,
    SvddModel,
    Verdict,
    gaussian_kernel,
    predict,
    r_squared,
    score,
    train_ocsvm_baseline,
    train_svdd,
)

__version__ = "0.1.0"
