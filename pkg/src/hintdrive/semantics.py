"""Semantic state encoders.

Turn a WorldSnapshot into fixed-dimension features: a 4-dim one-hot scenario
category, a 9-dim object vector (critical-agent count + 8 directional
sectors), and the 29-dim augmented observation consumed by the policy. Empty
sectors are compensated with a 1.0 sentinel so the output shape is invariant
to traffic density. All functions here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .driveworld import (
    LANE_WIDTH,
    V_MAX,
    AgentKind,
    WorldSnapshot,
    compute_ttc,
    lane_of,
)

SECTOR_COUNT = 8
CRITICAL_RADIUS = 50.0
SCENARIO_CATEGORIES = ("cruise", "lead_vehicle", "merge_conflict", "hazard")
SCENARIO_DIM = 4
OBJECT_DIM = 9
RAW_DIM = 16
SEMANTIC_DIM = SCENARIO_DIM + OBJECT_DIM
STATE_DIM = RAW_DIM + SEMANTIC_DIM

HAZARD_TTC = 2.0
MERGE_AHEAD = 60.0
LEAD_AHEAD = 40.0


@dataclass(frozen=True)
class AugmentedState:
    """Policy observation: raw kinematic features plus semantic features."""

    raw: np.ndarray
    semantic: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.raw, self.semantic])


@dataclass(frozen=True)
class SnapshotDigest:
    """Compact hint-side summary of one snapshot.

    `vector` (scenario one-hot ++ object vector, 13 floats) is what goes on
    the wire; pedestrian_present and ttc ride along for query templating.
    """

    scenario_vec: np.ndarray
    object_vec: np.ndarray
    pedestrian_present: bool
    ttc: float

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.scenario_vec, self.object_vec])

    @property
    def category(self) -> str:
        return SCENARIO_CATEGORIES[int(np.argmax(self.scenario_vec))]


def sector_profile(snap: WorldSnapshot) -> tuple[int, list[float]]:
    """Critical-agent count and per-sector nearest normalized distance.

    Eight 45-degree sectors centered on the ego heading, sector 0 = dead
    ahead, proceeding counterclockwise. Distances are center-to-center,
    normalized by the 50 m criticality radius and capped at 1.0; sectors
    without an agent keep the 1.0 sentinel.
    """
    ego = snap.ego
    values = [1.0] * SECTOR_COUNT
    count = 0
    half = math.pi / SECTOR_COUNT
    for a in snap.agents:
        dx, dy = a.x - ego.x, a.y - ego.y
        dist = math.hypot(dx, dy)
        if dist <= CRITICAL_RADIUS:
            count += 1
        rel = math.atan2(dy, dx) - ego.heading
        rel = math.atan2(math.sin(rel), math.cos(rel))
        idx = int(math.floor((rel + half) / (2.0 * half))) % SECTOR_COUNT
        nd = min(dist / CRITICAL_RADIUS, 1.0)
        if nd < values[idx]:
            values[idx] = nd
    return count, values


def scenario_category(snap: WorldSnapshot) -> str:
    """Priority rules: hazard > merge_conflict > lead_vehicle > cruise."""
    ego = snap.ego
    if any(a.kind is AgentKind.PEDESTRIAN for a in snap.agents):
        return "hazard"
    if compute_ttc(ego, snap.agents) < HAZARD_TTC:
        return "hazard"
    mp = snap.road.merge_point
    if mp is not None and 0.0 <= mp - ego.x <= MERGE_AHEAD:
        return "merge_conflict"
    ego_lane_y = LANE_WIDTH * round(ego.y / LANE_WIDTH)
    for a in snap.agents:
        if abs(a.y - ego_lane_y) < LANE_WIDTH / 2.0 and 0.0 < a.x - ego.x <= LEAD_AHEAD:
            return "lead_vehicle"
    return "cruise"


def encode_scenario(snap: WorldSnapshot) -> np.ndarray:
    vec = np.zeros(SCENARIO_DIM)
    vec[SCENARIO_CATEGORIES.index(scenario_category(snap))] = 1.0
    return vec


def encode_objects(snap: WorldSnapshot) -> np.ndarray:
    count, values = sector_profile(snap)
    vec = np.empty(OBJECT_DIM)
    vec[0] = min(count / 8.0, 1.0)
    vec[1:] = values
    return vec


def raw_features(snap: WorldSnapshot) -> np.ndarray:
    """16 raw features: ego scalars, lane one-hot, goal distance, 8 rays."""
    ego = snap.ego
    road = snap.road
    lane = lane_of(ego.y, road.lane_count, road.lane_width)
    lateral = (ego.y - lane * road.lane_width) / (road.lane_width / 2.0)
    onehot = [0.0] * 4
    onehot[lane] = 1.0
    goal = min(max((snap.goal_x - ego.x) / snap.goal_x, 0.0), 1.0)
    _, rays = sector_profile(snap)
    return np.array([ego.speed / V_MAX, ego.heading / math.pi, lateral, *onehot, goal, *rays])


def augment(snap: WorldSnapshot, scenario_vec: np.ndarray, object_vec: np.ndarray) -> AugmentedState:
    return AugmentedState(raw_features(snap), np.concatenate([scenario_vec, object_vec]))


def snapshot_digest(snap: WorldSnapshot) -> SnapshotDigest:
    return SnapshotDigest(
        scenario_vec=encode_scenario(snap),
        object_vec=encode_objects(snap),
        pedestrian_present=any(a.kind is AgentKind.PEDESTRIAN for a in snap.agents),
        ttc=compute_ttc(snap.ego, snap.agents),
    )


def encode_all(snap: WorldSnapshot) -> tuple[AugmentedState, SnapshotDigest]:
    """One-pass convenience for the training loop (single geometry scan)."""
    ego = snap.ego
    road = snap.road
    count, sectors = sector_profile(snap)
    ttc = compute_ttc(ego, snap.agents)
    ped = any(a.kind is AgentKind.PEDESTRIAN for a in snap.agents)

    if ped or ttc < HAZARD_TTC:
        category = "hazard"
    else:
        category = None
        mp = road.merge_point
        if mp is not None and 0.0 <= mp - ego.x <= MERGE_AHEAD:
            category = "merge_conflict"
        if category is None:
            ego_lane_y = LANE_WIDTH * round(ego.y / LANE_WIDTH)
            for a in snap.agents:
                if abs(a.y - ego_lane_y) < LANE_WIDTH / 2.0 and 0.0 < a.x - ego.x <= LEAD_AHEAD:
                    category = "lead_vehicle"
                    break
        if category is None:
            category = "cruise"

    scenario_vec = np.zeros(SCENARIO_DIM)
    scenario_vec[SCENARIO_CATEGORIES.index(category)] = 1.0
    object_vec = np.empty(OBJECT_DIM)
    object_vec[0] = min(count / 8.0, 1.0)
    object_vec[1:] = sectors

    lane = lane_of(ego.y, road.lane_count, road.lane_width)
    lateral = (ego.y - lane * road.lane_width) / (road.lane_width / 2.0)
    onehot = [0.0] * 4
    onehot[lane] = 1.0
    goal = min(max((snap.goal_x - ego.x) / snap.goal_x, 0.0), 1.0)
    raw = np.array([ego.speed / V_MAX, ego.heading / math.pi, lateral, *onehot, goal, *sectors])

    state = AugmentedState(raw, np.concatenate([scenario_vec, object_vec]))
    digest = SnapshotDigest(scenario_vec, object_vec, ped, ttc)
    return state, digest
