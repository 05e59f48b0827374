"""Deterministic 2D multi-lane driving micro-simulator.

Four scenarios (overtaking, merging, trilemma, occluded_pedestrian) at three
traffic densities. The ego vehicle follows a kinematic bicycle model under
explicit Euler integration; traffic is non-reactive lane-following except for
hard braking at short gaps. Rewards are split into safety / efficiency /
comfort components. One instance is single-threaded; run one env per rollout
worker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

DT = 0.05
A_MAX = 4.0
V_MAX = 20.0
WHEELBASE = 2.7
MAX_STEER = 0.5
LANE_WIDTH = 3.5
CAR_LENGTH = 4.5
CAR_WIDTH = 2.0
PED_SIZE = 0.6
TICK_LIMIT = 1200
DEFAULT_GOAL_X = 250.0
ROAD_LENGTH = 300.0
V_TARGET = 12.0
JERK_REF = 10.0
TTC_SAFE = 3.0
TTC_SENTINEL = 1e9
HARD_BRAKE_GAP = 5.0
PED_TRIGGER_RANGE = 25.0
PED_WALK_SPEED = 1.4

DENSITY_COUNTS = {"low": 2, "medium": 5, "high": 9}


class Scenario(str, Enum):
    OVERTAKING = "overtaking"
    MERGING = "merging"
    TRILEMMA = "trilemma"
    OCCLUDED_PEDESTRIAN = "occluded_pedestrian"


class Density(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class AgentKind(str, Enum):
    EGO = "ego"
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"


class Terminal(str, Enum):
    NONE = "none"
    COLLISION = "collision"
    OFF_ROAD = "off_road"
    GOAL_REACHED = "goal_reached"
    TIMEOUT = "timeout"


class EpisodeOver(RuntimeError):
    """Raised when step() is called on an already-terminated episode."""


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    speed: float
    accel: float
    kind: AgentKind
    lane_index: int


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned roadside block (view blocker, not collidable)."""

    x: float
    y: float
    length: float
    width: float


@dataclass(frozen=True)
class RoadSpec:
    lane_count: int
    lane_width: float
    length: float
    merge_point: float | None = None
    occluder: Obstacle | None = None


@dataclass(frozen=True)
class Action:
    throttle_brake: float
    steer: float

    def clamped(self) -> "Action":
        return Action(
            min(max(float(self.throttle_brake), -1.0), 1.0),
            min(max(float(self.steer), -1.0), 1.0),
        )


@dataclass(frozen=True)
class RewardVector:
    safety: float
    efficiency: float
    comfort: float

    def as_array(self) -> np.ndarray:
        return np.array([self.safety, self.efficiency, self.comfort])


@dataclass(frozen=True)
class WorldSnapshot:
    tick: int
    ego: AgentState
    agents: tuple[AgentState, ...]
    road: RoadSpec
    scenario: Scenario
    density: Density
    goal_x: float


@dataclass(frozen=True)
class StepOutcome:
    snapshot: WorldSnapshot
    rewards: RewardVector
    terminal: Terminal


def footprint(kind: AgentKind) -> tuple[float, float]:
    """(length, width) of an agent's rectangular footprint."""
    if kind is AgentKind.PEDESTRIAN:
        return PED_SIZE, PED_SIZE
    return CAR_LENGTH, CAR_WIDTH


def lane_center(index: int, lane_width: float = LANE_WIDTH) -> float:
    return index * lane_width


def lane_of(y: float, lane_count: int, lane_width: float = LANE_WIDTH) -> int:
    return min(max(int(round(y / lane_width)), 0), lane_count - 1)


def _corners(cx, cy, heading, length, width):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    return [
        (cx + dx * c - dy * s, cy + dx * s + dy * c)
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    ]


def rects_overlap(a: tuple, b: tuple) -> bool:
    """Oriented-rectangle overlap by separating axes.

    Rect = (cx, cy, heading, length, width). Touching edges count as overlap.
    """
    ca, cb = _corners(*a), _corners(*b)
    for heading in (a[2], b[2]):
        c, s = math.cos(heading), math.sin(heading)
        for ax, ay in ((c, s), (-s, c)):
            pa = [x * ax + y * ay for x, y in ca]
            pb = [x * ax + y * ay for x, y in cb]
            if max(pa) < min(pb) or max(pb) < min(pa):
                return False
    return True


def agent_rect(state: AgentState) -> tuple:
    length, width = footprint(state.kind)
    return (state.x, state.y, state.heading, length, width)


def ego_collides(ego: AgentState, agents) -> bool:
    er = agent_rect(ego)
    for a in agents:
        # Cheap prefilter: footprints fit inside a 3 m radius circle.
        if (a.x - ego.x) ** 2 + (a.y - ego.y) ** 2 > 36.0:
            continue
        if rects_overlap(er, agent_rect(a)):
            return True
    return False


def compute_ttc(ego: AgentState, agents) -> float:
    """Minimum time-to-collision over same-lane agents ahead of the ego.

    gap / max(closing_speed, 0.1) with bumper-to-bumper gaps; 1e9 when no
    agent is ahead in the ego lane.
    """
    ego_lane_y = LANE_WIDTH * round(ego.y / LANE_WIDTH)
    ego_vx = ego.speed * math.cos(ego.heading)
    ego_len = footprint(ego.kind)[0]
    best = TTC_SENTINEL
    for a in agents:
        if a.x <= ego.x:
            continue
        if abs(a.y - ego_lane_y) >= LANE_WIDTH / 2.0:
            continue
        gap = max((a.x - ego.x) - (ego_len + footprint(a.kind)[0]) / 2.0, 0.0)
        closing = ego_vx - a.speed * math.cos(a.heading)
        best = min(best, gap / max(closing, 0.1))
    return best


def reward_components(prev: WorldSnapshot, action: Action, nxt: WorldSnapshot) -> RewardVector:
    """Per-attribute rewards for the transition prev -> nxt."""
    if prev.tick + 1 != nxt.tick:
        raise ValueError(f"non-adjacent snapshots: {prev.tick} -> {nxt.tick}")
    if ego_collides(nxt.ego, nxt.agents):
        safety = -1.0
    else:
        ttc = compute_ttc(nxt.ego, nxt.agents)
        if ttc > TTC_SAFE:
            safety = 0.02
        else:
            safety = max(-0.5 * max(0.0, 1.0 - ttc / TTC_SAFE), -1.0)
    efficiency = min(max(nxt.ego.speed / V_TARGET, 0.0), 1.0) * 0.05
    jerk = (nxt.ego.accel - prev.ego.accel) / DT
    comfort = -0.01 * (nxt.ego.accel / A_MAX) ** 2 - 0.01 * (jerk / JERK_REF) ** 2
    comfort = min(max(comfort, -1.0), 0.0)
    return RewardVector(safety, efficiency, comfort)


def _wrap_pi(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


class DriveWorld:
    """One driving episode at a time; reset() starts a new one."""

    def __init__(self, *, goal_x: float = DEFAULT_GOAL_X, tick_limit: int = TICK_LIMIT):
        if goal_x <= 0:
            raise ValueError("goal_x must be positive")
        self.goal_x = float(goal_x)
        self.tick_limit = int(tick_limit)
        self._tick = 0
        self._ego: AgentState | None = None
        self._agents: list[AgentState] = []
        self._cruise: list[float] = []
        self._road: RoadSpec | None = None
        self._scenario: Scenario | None = None
        self._density: Density | None = None
        self._terminal = Terminal.NONE

    # -- episode setup -----------------------------------------------------

    def reset(self, scenario, density, seed: int) -> WorldSnapshot:
        scenario = Scenario(scenario)
        density = Density(density)
        rng = np.random.default_rng(seed)
        self._scenario = scenario
        self._density = density
        self._tick = 0
        self._terminal = Terminal.NONE
        self._ego = AgentState(0.0, lane_center(0), 0.0, 0.0, 0.0, AgentKind.EGO, 0)

        total = DENSITY_COUNTS[density.value]
        agents: list[AgentState] = []
        cruise: list[float] = []
        merge_point = None
        occluder = None

        if scenario is Scenario.OVERTAKING:
            agents.append(self._vehicle(35.0, 0, speed=4.0))
            cruise.append(4.0)
            self._fill_vehicles(rng, total - 1, (0, 1), agents, cruise)
        elif scenario is Scenario.MERGING:
            merge_point = 120.0
            self._fill_vehicles(rng, total, (1,), agents, cruise, x_range=(25.0, 260.0))
        elif scenario is Scenario.TRILEMMA:
            agents.append(self._vehicle(50.0, 0, speed=0.0))
            cruise.append(0.0)
            x = 140.0
            agents.append(self._vehicle(x, 1, speed=7.0, heading=math.pi))
            cruise.append(7.0)
            for _ in range(total - 2):
                x += float(rng.uniform(30.0, 70.0))
                agents.append(self._vehicle(x, 1, speed=7.0, heading=math.pi))
                cruise.append(7.0)
        elif scenario is Scenario.OCCLUDED_PEDESTRIAN:
            ped_x = float(rng.uniform(40.0, 80.0))
            ped_y = -(LANE_WIDTH / 2.0 + 0.8)
            agents.append(
                AgentState(ped_x, ped_y, math.pi / 2.0, 0.0, 0.0, AgentKind.PEDESTRIAN, 0)
            )
            cruise.append(0.0)
            occluder = Obstacle(ped_x - 4.0, -(LANE_WIDTH / 2.0 + 1.5), 7.0, 2.2)
            self._fill_vehicles(rng, total - 1, (0, 1), agents, cruise)

        self._agents = agents
        self._cruise = cruise
        self._road = RoadSpec(
            lane_count=2,
            lane_width=LANE_WIDTH,
            length=ROAD_LENGTH,
            merge_point=merge_point,
            occluder=occluder,
        )
        return self.snapshot

    @staticmethod
    def _vehicle(x: float, lane: int, *, speed: float, heading: float = 0.0) -> AgentState:
        return AgentState(x, lane_center(lane), heading, speed, 0.0, AgentKind.VEHICLE, lane)

    def _fill_vehicles(self, rng, count, lanes, agents, cruise, x_range=(25.0, 220.0)):
        """Seed-driven filler traffic with a 15 m same-lane spawn spacing."""
        for _ in range(count):
            placed = False
            for _attempt in range(200):
                lane = int(lanes[int(rng.integers(0, len(lanes)))])
                x = float(rng.uniform(*x_range))
                same = [a.x for a in agents if a.lane_index == lane]
                if all(abs(x - ox) >= 15.0 for ox in same):
                    placed = True
                    break
            if not placed:
                same = [a.x for a in agents if a.lane_index == lane]
                x = (max(same) if same else x_range[0]) + 18.0
            speed = float(rng.uniform(3.5, 7.5))
            agents.append(self._vehicle(x, lane, speed=speed))
            cruise.append(speed)

    # -- stepping ----------------------------------------------------------

    @property
    def snapshot(self) -> WorldSnapshot:
        return WorldSnapshot(
            tick=self._tick,
            ego=self._ego,
            agents=tuple(self._agents),
            road=self._road,
            scenario=self._scenario,
            density=self._density,
            goal_x=self.goal_x,
        )

    @property
    def terminal(self) -> Terminal:
        return self._terminal

    def step(self, action: Action) -> StepOutcome:
        if self._terminal is not Terminal.NONE:
            raise EpisodeOver(f"episode already ended ({self._terminal.value})")
        act = action.clamped()
        prev = self.snapshot

        # All movers read the pre-step world and update simultaneously.
        self._agents = [self._advance_agent(i, a, prev.ego) for i, a in enumerate(self._agents)]
        self._ego = self._advance_ego(prev.ego, act)
        self._tick += 1

        nxt = self.snapshot
        if ego_collides(nxt.ego, nxt.agents):
            terminal = Terminal.COLLISION
        elif self._off_road(nxt.ego):
            terminal = Terminal.OFF_ROAD
        elif nxt.ego.x >= self.goal_x:
            terminal = Terminal.GOAL_REACHED
        elif nxt.tick >= self.tick_limit:
            terminal = Terminal.TIMEOUT
        else:
            terminal = Terminal.NONE
        self._terminal = terminal
        return StepOutcome(nxt, reward_components(prev, act, nxt), terminal)

    def _advance_ego(self, ego: AgentState, act: Action) -> AgentState:
        delta = act.steer * MAX_STEER
        x = ego.x + ego.speed * math.cos(ego.heading) * DT
        y = ego.y + ego.speed * math.sin(ego.heading) * DT
        heading = _wrap_pi(ego.heading + (ego.speed / WHEELBASE) * math.tan(delta) * DT)
        speed = min(max(ego.speed + act.throttle_brake * A_MAX * DT, 0.0), V_MAX)
        accel = (speed - ego.speed) / DT
        lane = lane_of(y, self._road.lane_count)
        return replace(ego, x=x, y=y, heading=heading, speed=speed, accel=accel, lane_index=lane)

    def _advance_agent(self, index: int, agent: AgentState, ego: AgentState) -> AgentState:
        if agent.kind is AgentKind.PEDESTRIAN:
            speed = agent.speed
            if speed == 0.0 and abs(ego.x - agent.x) <= PED_TRIGGER_RANGE:
                speed = PED_WALK_SPEED
            return replace(agent, y=agent.y + speed * DT, speed=speed)
        direction = 1.0 if abs(agent.heading) < math.pi / 2.0 else -1.0
        gap = self._lead_gap(index, agent, direction, ego)
        target = 0.0 if gap < HARD_BRAKE_GAP else self._cruise[index]
        dv = min(max(target - agent.speed, -A_MAX * DT), A_MAX * DT)
        x = agent.x + direction * agent.speed * DT
        speed = agent.speed + dv
        return replace(agent, x=x, speed=speed, accel=dv / DT)

    def _lead_gap(self, index: int, agent: AgentState, direction: float, ego: AgentState) -> float:
        lane_y = LANE_WIDTH * round(agent.y / LANE_WIDTH)
        own_len = footprint(agent.kind)[0]
        best = math.inf
        others = [ego] + [a for i, a in enumerate(self._agents) if i != index]
        for o in others:
            dx = direction * (o.x - agent.x)
            if dx <= 0:
                continue
            if abs(o.y - lane_y) >= LANE_WIDTH / 2.0:
                continue
            best = min(best, dx - (own_len + footprint(o.kind)[0]) / 2.0)
        return best

    def _off_road(self, ego: AgentState) -> bool:
        road = self._road
        lo = -road.lane_width / 2.0
        hi = (road.lane_count - 1) * road.lane_width + road.lane_width / 2.0
        if ego.y < lo or ego.y > hi:
            return True
        if road.merge_point is not None and ego.x > road.merge_point:
            # The closing lane (lane 0) no longer exists past the merge point.
            if ego.y < road.lane_width / 2.0:
                return True
        return False
