from .checkpoint import load_tensors, save_tensors
from .losses import BCE_EPS, bce, kl_diag_gaussian, reparameterize, sigma_from_logvar
from .nn import MLP, Linear, Parameter, ParameterStore, glorot
from .optim import SGD, Adam
from .tensor import *  # noqa: F401,F403
from .tensor import __all__ as _tensor_all

__all__ = list(_tensor_all) + [
    "load_tensors",
    "save_tensors",
    "BCE_EPS",
    "bce",
    "kl_diag_gaussian",
    "reparameterize",
    "sigma_from_logvar",
    "MLP",
    "Linear",
    "Parameter",
    "ParameterStore",
    "glorot",
    "SGD",
    "Adam",
]
