"""Hint-guided multi-critic PPO motion planner on a 2D driving micro-sim."""

from .driveworld import (
    Action,
    AgentKind,
    AgentState,
    Density,
    DriveWorld,
    EpisodeOver,
    RewardVector,
    RoadSpec,
    Scenario,
    StepOutcome,
    Terminal,
    WorldSnapshot,
)
from .semantics import AugmentedState, SnapshotDigest

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AgentKind",
    "AgentState",
    "AugmentedState",
    "Density",
    "DriveWorld",
    "EpisodeOver",
    "RewardVector",
    "RoadSpec",
    "Scenario",
    "SnapshotDigest",
    "StepOutcome",
    "Terminal",
    "WorldSnapshot",
    "__version__",
]
