"""Distortion-aware congestion control for media flows sharing a TCP bottleneck."""
from .config import SimConfig, config_from_dict, load_config
from .controllers import Decision, lagrangian_decide, mt_decide, pa_decide, rd_decide
from .fairness import check_theorem4_conditions, jain_index, lemma2_condition, quality_delta
from .media import ClassGraph, ClassSpec, ConfigError
from .network import NetChain, bottleneck_loss, estimate_chain
from .sim import build_schedule, friendliness, run
from .solver import SolverConfig, SystemState, solve, solve_dag, solve_independent, solve_oracle

__version__ = "0.1.0"
