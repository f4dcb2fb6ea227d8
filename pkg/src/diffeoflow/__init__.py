"""Diffeomorphic flow classifier.

Training points are carried through a time-discretized flow whose velocity
field lives in a reproducing-kernel space (plus an optional affine part).
The control is fitted jointly with a linear softmax readout by minimizing a
kinetic-energy-penalized logistic loss with adjoint gradients and
kernel-metric preconditioned conjugate gradient.
"""

from .kernels import (KernelSpec, gaussian, matern, graph_diagonal,
                      grid_neighborhoods, eval_scalar, eval_matrix,
                      apply_field, gram_inner, gram_matrix)
from .flow import ControlPath, Trajectory, FlowDivergenceError, forward, \
    transport
from .objective import (ThetaParams, Hyper, LabeledSet, EnergyParts,
                        softmax_prob, terminal_loss, energy)
from .adjoint import CostatePath, ControlGradient, backward, grad_control, \
    energy_gradients
from .optim import (Problem, FitOptions, FitResult, TraceRecord,
                    TRACE_FIELDS, fit, minimize_pr_cg)
from .datasets import DatasetSpec, generate, make_split, load_idx, \
    read_csv, write_csv
from .pipeline import (AugmentConfig, TrainConfig, ModelArtifact, augment,
                       select_scale, auto_scale, train, transform, predict,
                       export_flow_view, save_model, load_model)
from .baselines import EvalResult, logistic_fit, logistic_predict, \
    knn_predict, evaluate

__version__ = "0.1.0"

__all__ = [
    "KernelSpec", "gaussian", "matern", "graph_diagonal",
    "grid_neighborhoods", "eval_scalar", "eval_matrix", "apply_field",
    "gram_inner", "gram_matrix",
    "ControlPath", "Trajectory", "FlowDivergenceError", "forward",
    "transport",
    "ThetaParams", "Hyper", "LabeledSet", "EnergyParts", "softmax_prob",
    "terminal_loss", "energy",
    "CostatePath", "ControlGradient", "backward", "grad_control",
    "energy_gradients",
    "Problem", "FitOptions", "FitResult", "TraceRecord", "TRACE_FIELDS",
    "fit", "minimize_pr_cg",
    "DatasetSpec", "generate", "make_split", "load_idx", "read_csv",
    "write_csv",
    "AugmentConfig", "TrainConfig", "ModelArtifact", "augment",
    "select_scale", "auto_scale", "train", "transform", "predict",
    "export_flow_view", "save_model", "load_model",
    "EvalResult", "logistic_fit", "logistic_predict", "knn_predict",
    "evaluate",
    "__version__",
]
