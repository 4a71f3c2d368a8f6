"""Footstep planning and stepping control for bipedal walking on the H-LIP."""
from importlib import resources

from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .hlip import HlipParams, LqrWeights, dlqr, dlqr_gain, s2s_matrices, step_map
from .paths import make_path
from .planner import FootstepPlanner, MpcConfig, StepConstraints
from .qp import QpProblem, Status, solve_obstacle_scp, solve_qp
from .sim import PushEvent, SurrogateModelConfig, run_scenario
from .zonotope import Zonotope, estimate_w, mrpi_outer

__version__ = "0.1.0"


def scenario_path(name: str):
    """Filesystem path of a bundled scenario, e.g. ``scenario_path("circle")``."""
    return resources.files(__name__) / "scenarios" / f"{name}.json"
