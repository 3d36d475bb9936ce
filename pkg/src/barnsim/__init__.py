"""Seeded 2D benchmark for constrained-course navigation with motion tubes and a recovery state machine."""

from .fsm import Mode, Navigator
from .geometry import Footprint, Pose2D, RobotState, Twist
from .harness import SuiteConfig, run_suite, run_trial
from .scoring import Outcome, score_trial
from .tubes import TubeLibrary, TubeParams, select_command

__version__ = "0.1.0"

__all__ = [
    "Footprint",
    "Mode",
    "Navigator",
    "Outcome",
    "Pose2D",
    "RobotState",
    "SuiteConfig",
    "TubeLibrary",
    "TubeParams",
    "Twist",
    "run_suite",
    "run_trial",
    "score_trial",
    "select_command",
]
