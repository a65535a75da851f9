"""Convexity- and Lipschitz-preserving reconstruction of convex functionals from samples."""

from .geometry import SampleSet, Subspace, DataInconsistencyError, DimensionError
from .dual import DualNet, build, evaluate, evaluate_batch, schedule, uniform_error
from .extension import mcshane_upper, primal_envelope
from .relu import ReluNetwork, compile_max, compile_min, assemble_max_min, complexity_report
from .cnf import CnfLayer, CnfModel, validate, lipschitz_bound, embed_dualnet
from .training import TrainConfig, TrainReport, train, jensen_gap, ablation, random_convex_target

__version__ = "0.1.0"
