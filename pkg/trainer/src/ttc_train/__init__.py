"""Trainer for truth-table networks; exports the runtime's model format."""

from .archs import ARCHS, ArchSpec, get_arch
from .export import MismatchError, dump_truth_tables, export, export_check, to_model_spec
from .model import LTTBlock, TruthTableNet, bin_act
from .train import DivergenceError, TrainConfig, build_net, run_folds, train_net

__version__ = "0.1.0"
