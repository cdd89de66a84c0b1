"""Hidden convex-concave games: flows, Lyapunov diagnostics and discrete GAN solutions."""
from . import dynamics, gan_solutions, lyapunov, operators, payoffs
from ._jit import JIT_ENABLED
from .dynamics import HiddenGame, Trajectory, gda_flow, hgd_mod_flow, sgda_discrete, transformed_flow
from .operators import OperatorBank, ScalarOperator, build_ascent_path, identity, sigmoid
from .payoffs import regularize

__version__ = "0.1.0"

__all__ = [
    "dynamics", "gan_solutions", "lyapunov", "operators", "payoffs", "JIT_ENABLED",
    "HiddenGame", "Trajectory", "gda_flow", "hgd_mod_flow", "sgda_discrete", "transformed_flow",
    "OperatorBank", "ScalarOperator", "build_ascent_path", "identity", "sigmoid", "regularize",
]
