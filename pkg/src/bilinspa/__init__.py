"""Balanced singular perturbation reduction for stochastic bilinear systems."""

__version__ = "0.1.0"

from .balancing import BalancedRealization, HsvGrouping, balance, group_hsvs, partition
from .bounds import FAIL, INCONCLUSIVE, PASS, BoundReport, error_bound, verify_bound
from .controls import ControlSignal, control_l2_norm, parse_control_spec
from .exceptions import *  # noqa: F401,F403
from .gramians import (GramianPair, compute_gramians, observability_gramian,
                       reachability_gramian_new, riccati_solvable,
                       solve_generalized_lyapunov)
from .io import load_rom, load_system, save_rom, save_system
from .reduction import ReducedModel, spa_chain, spa_reduce
from .simulate import JumpSpec, LevyProcessSpec, SimConfig, simulate_full, simulate_rom
from .system import (BilinearStochasticSystem, generate_test_system,
                     is_mean_square_stable, validate)
