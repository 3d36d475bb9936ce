"""Five-state navigation controller with forward/rear safety checks and recovery.

States: Initial (wait for a global path), Heading (turn in place toward the
sub-goal), Drive (follow a pluggable drive policy), Backtrack (reverse along
the recorded path) and Forward (slow straight recovery). Transitions follow a
fixed edge table; an event with no edge from the current state leaves the
state unchanged and is reported as a diagnostic.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol

import numpy as np

from .geometry import (
    MAX_SPEED,
    Footprint,
    Pose2D,
    RobotState,
    Twist,
    footprint_collides,
    integrate_unicycle,
    normalize_angle,
    points_in_convex_polygon,
    polygon_collides,
    transform_points,
)
from .planning import Costmap, PlannedPath, point_at_arclength, project_onto_path, subgoal
from .sensor import LaserScan
from .tubes import UNSAFE, TubeLibrary, inverse_cost_weights, select_command


class Mode(enum.Enum):
    INITIAL = "Initial"
    HEADING = "Heading"
    DRIVE = "Drive"
    FORWARD = "Forward"
    BACKTRACK = "Backtrack"


class Event(enum.Enum):
    NO_PATH = "no path"
    PATH = "path"
    ALIGNED = "aligned"
    NOT_ALIGNED = "not aligned"
    SAFE = "safe"
    DANGEROUS = "dangerous"
    STUCK = "stuck"
    RECOVERED = "recovered"


EDGES: dict[tuple[Mode, Event], Mode] = {
    (Mode.INITIAL, Event.NO_PATH): Mode.INITIAL,
    (Mode.INITIAL, Event.PATH): Mode.HEADING,
    (Mode.HEADING, Event.NO_PATH): Mode.INITIAL,
    (Mode.HEADING, Event.ALIGNED): Mode.DRIVE,
    (Mode.DRIVE, Event.SAFE): Mode.DRIVE,
    (Mode.DRIVE, Event.NOT_ALIGNED): Mode.HEADING,
    (Mode.DRIVE, Event.DANGEROUS): Mode.BACKTRACK,
    (Mode.BACKTRACK, Event.SAFE): Mode.BACKTRACK,
    (Mode.BACKTRACK, Event.STUCK): Mode.FORWARD,
    (Mode.BACKTRACK, Event.RECOVERED): Mode.HEADING,
    (Mode.FORWARD, Event.SAFE): Mode.FORWARD,
    (Mode.FORWARD, Event.RECOVERED): Mode.HEADING,
    (Mode.FORWARD, Event.STUCK): Mode.BACKTRACK,
}


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FsmParams:
    heading_tolerance: float = math.pi / 6
    lookahead: float = 0.5
    backtrack_distance: float = 0.3
    fi_inflation: float = 0.04
    velocity_clip: float = 0.7
    mpc_steps: int = 20
    mpc_dt: float = 0.01
    forward_check: str = "fi"  # "fi" or "mpc"
    stuck_distance: float = 0.05
    stuck_window: float = 2.0
    recovered_window: float = 0.5
    reverse_speed: float = 0.2
    forward_speed: float = 0.2
    rotate_speed: float = 1.0
    rotate_gain: float = 2.0
    reverse_align_tolerance: float = 0.15
    target_reached: float = 0.05
    roi_depth: float = 0.4
    roi_extra_width: float = 0.1
    recorded_max_length: float = 10.0

    def __post_init__(self):
        if self.forward_check not in ("fi", "mpc"):
            raise ConfigurationError(f"forward_check must be 'fi' or 'mpc', not {self.forward_check!r}")
        if self.velocity_clip > MAX_SPEED:
            raise ConfigurationError("velocity_clip exceeds the platform limit")


# --- recorded path and rear region ----------------------------------------


class RecordedPath:
    """Time-stamped poses appended while driving, trimmed to ``max_length`` metres."""

    def __init__(self, max_length: float = 10.0, min_spacing: float = 0.01):
        self.max_length = max_length
        self.min_spacing = min_spacing
        self.stamps: deque[float] = deque()
        self.points: deque[tuple[float, float]] = deque()
        self._length = 0.0

    def __len__(self):
        return len(self.points)

    @property
    def length(self) -> float:
        return self._length

    def append(self, t: float, pose: Pose2D) -> None:
        if self.stamps and t <= self.stamps[-1]:
            raise ValueError("timestamps must increase")
        if self.points:
            lx, ly = self.points[-1]
            step = math.hypot(pose.x - lx, pose.y - ly)
            if step < self.min_spacing:
                return
            self._length += step
        self.stamps.append(t)
        self.points.append((pose.x, pose.y))
        while self._length > self.max_length and len(self.points) > 2:
            (ax, ay), (bx, by) = self.points[0], self.points[1]
            self._length -= math.hypot(bx - ax, by - ay)
            self.points.popleft()
            self.stamps.popleft()

    def as_array(self) -> np.ndarray:
        return np.array(self.points, dtype=float).reshape(-1, 2)


def backtrack_target(recorded, pose: Pose2D, distance: float = 0.3) -> np.ndarray:
    """Point ``distance`` of arc length back along the recorded path from the robot's projection."""
    pts = recorded.as_array() if isinstance(recorded, RecordedPath) else np.asarray(recorded, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("recorded path is empty")
    s, _ = project_onto_path(pts, pose.x, pose.y)
    return point_at_arclength(pts, s - distance)


@dataclass(frozen=True)
class RearRoI:
    """Rectangle behind the robot: x in [-(near + depth), -near], |y| <= width / 2."""

    width: float
    depth: float
    near: float

    @classmethod
    def for_footprint(cls, footprint: Footprint, depth: float = 0.4, extra_width: float = 0.1) -> "RearRoI":
        width = footprint.width + extra_width
        rear = -float(footprint.polygon[:, 0].min())
        # start no closer than width/2 so the box stays out of a 270 degree FOV wedge
        return cls(width, depth, max(rear, 0.5 * width))

    def polygon(self) -> np.ndarray:
        x0, x1, hy = -(self.near + self.depth), -self.near, 0.5 * self.width
        return np.array([[x1, hy], [x0, hy], [x0, -hy], [x1, -hy]])


# --- checks ------------------------------------------------------------------


def heading_error(pose: Pose2D, target) -> float:
    """Signed angle from the robot heading to the bearing of ``target``."""
    return normalize_angle(math.atan2(target[1] - pose.y, target[0] - pose.x) - pose.theta)


def heading_aligned(pose: Pose2D, path: PlannedPath, tolerance: float = math.pi / 6, lookahead: float = 0.5) -> bool:
    """Robot heading within ``tolerance`` (inclusive) of the bearing to the look-ahead sub-goal."""
    goal = subgoal(path, pose, lookahead)
    if math.hypot(goal[0] - pose.x, goal[1] - pose.y) < 1e-9:
        return True
    return abs(heading_error(pose, goal)) <= tolerance + 1e-12


def fi_check(scan: LaserScan, footprint: Footprint, inflation: float = 0.04) -> bool:
    """Safe unless a scan endpoint lies inside the footprint inflated by ``inflation``."""
    if inflation < 0:
        raise ValueError("inflation must be >= 0")
    pts = scan.points_robot_frame()
    if len(pts) == 0:
        return True
    return not bool(points_in_convex_polygon(pts, footprint.inflated(inflation)).any())


def mpc_check(state: RobotState, cmd: Twist, costmap: Costmap, n_steps: int = 20, dt: float = 0.01, footprint: Footprint | None = None) -> bool:
    """Roll ``cmd`` forward ``n_steps``; safe iff no predicted footprint touches a lethal cell."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    footprint = footprint or Footprint.rectangle()
    lethal = costmap.grid
    s = RobotState(state.pose, cmd)
    if footprint_collides(lethal, s.pose, footprint):
        return False
    for _ in range(n_steps):
        s = integrate_unicycle(s, cmd, dt)
        if footprint_collides(lethal, s.pose, footprint):
            return False
    return True


def rear_roi_check(costmap: Costmap, pose: Pose2D, roi: RearRoI) -> bool:
    """Safe iff no remembered lethal cell lies in the rear box; off-map counts as unsafe."""
    if not costmap.memory:
        raise ConfigurationError("rear RoI check needs a costmap with obstacle memory")
    return not polygon_collides(costmap.grid, transform_points(roi.polygon(), pose))


# --- policies -----------------------------------------------------------------


class DrivePolicy(Protocol):
    def __call__(self, scan: LaserScan, subgoal_robot: np.ndarray):
        """Twist toward the robot-frame sub-goal, or ``UNSAFE``."""


class TubePolicy:
    def __init__(self, library: TubeLibrary, weights=inverse_cost_weights):
        self.library = library
        self.weights = weights

    def __call__(self, scan, subgoal_robot):
        return select_command(self.library, scan, subgoal_robot, self.weights)


class PurePursuitPolicy:
    """Map-free stand-in: steer on the arc through the sub-goal at constant speed."""

    def __init__(self, speed: float = 0.5, max_curvature: float = 4.0):
        self.speed = speed
        self.max_curvature = max_curvature

    def __call__(self, scan, subgoal_robot):
        x, y = float(subgoal_robot[0]), float(subgoal_robot[1])
        d2 = x * x + y * y
        if d2 < 1e-12:
            return Twist(0.0, 0.0)
        kappa = max(-self.max_curvature, min(self.max_curvature, 2.0 * y / d2))
        return Twist(self.speed, self.speed * kappa)


# --- the state machine ----------------------------------------------------------


@dataclass(frozen=True)
class FsmState:
    mode: Mode = Mode.INITIAL
    backtrack_target: Optional[tuple[float, float]] = None
    entered_at: float = 0.0
    turn_dir: int = 0  # committed in-place rotation sense, 0 when none


@dataclass(frozen=True)
class FsmInputs:
    t: float = 0.0
    pose: Pose2D = field(default_factory=Pose2D)
    has_path: bool = False
    aligned: bool = False
    heading_error: float = 0.0
    policy_cmd: object = UNSAFE
    forward_safe: bool = False
    rear_safe: bool = True
    stuck: bool = False
    recovered: bool = False
    backtrack_target: Optional[tuple[float, float]] = None
    rotate_ok: tuple[bool, bool] = (True, True)  # (counter-clockwise, clockwise)
    forward_clear: bool = True


@dataclass(frozen=True)
class StepResult:
    state: FsmState
    cmd: Twist
    event: Optional[Event]
    fired: Optional[tuple[Mode, Event, Mode]]
    diagnostic: Optional[str] = None


def classify(mode: Mode, inp: FsmInputs) -> Optional[Event]:
    """Event raised by this tick's inputs; None means hold (Heading still turning)."""
    if mode is Mode.INITIAL:
        return Event.PATH if inp.has_path else Event.NO_PATH
    if mode is Mode.HEADING:
        if not inp.has_path:
            return Event.NO_PATH
        return Event.ALIGNED if inp.aligned else None
    if mode is Mode.DRIVE:
        if inp.policy_cmd is UNSAFE or not inp.forward_safe:
            return Event.DANGEROUS
        return Event.SAFE if inp.aligned else Event.NOT_ALIGNED
    if mode is Mode.BACKTRACK:
        if inp.recovered:
            return Event.RECOVERED
        if inp.stuck or not inp.rear_safe:
            return Event.STUCK
        return Event.SAFE
    if inp.recovered:
        return Event.RECOVERED
    return Event.STUCK if inp.stuck else Event.SAFE


def transition(mode: Mode, event: Optional[Event]) -> tuple[Mode, Optional[str]]:
    if event is None:
        return mode, None
    nxt = EDGES.get((mode, event))
    if nxt is None:
        return mode, f"ignored event '{event.value}' in state {mode.value}"
    return nxt, None


def _clip(cmd: Twist, vmax: float) -> Twist:
    """Scale (v, omega) together so |v| <= vmax, keeping the curvature."""
    if abs(cmd.v) <= vmax:
        return cmd
    k = vmax / abs(cmd.v)
    return Twist(cmd.v * k, cmd.omega * k)


def _turn(error: float, params: FsmParams, rotate_ok=(True, True), committed: int = 0) -> Twist:
    """In-place rotation toward ``error``.

    A nonzero ``committed`` sense is kept while it stays collision free, so a
    blocked short way round turns into the long way instead of dithering.
    """
    if abs(error) > math.pi - 0.35:
        # near +-pi the sign of the error flips with noise; commit to one side
        error = math.pi
    w = max(-params.rotate_speed, min(params.rotate_speed, params.rotate_gain * error))
    if abs(w) < 0.3 and error != 0.0:
        w = math.copysign(0.3, error)
    if committed and w * committed < 0:
        w = committed * params.rotate_speed
    ccw_ok, cw_ok = rotate_ok
    if (w > 0 and not ccw_ok) or (w < 0 and not cw_ok):
        alt_ok = cw_ok if w > 0 else ccw_ok
        w = -w if alt_ok else 0.0
    return Twist(0.0, w)


def step_fsm(state: FsmState, inputs: FsmInputs, params: FsmParams = FsmParams()) -> StepResult:
    event = classify(state.mode, inputs)
    return apply_event(state, event, inputs, params)


def apply_event(state: FsmState, event: Optional[Event], inputs: FsmInputs, params: FsmParams = FsmParams()) -> StepResult:
    """Fire ``event`` from ``state`` and produce the new state's command for this tick."""
    mode, diag = transition(state.mode, event)
    fired = (state.mode, event, mode) if event is not None and diag is None else None
    new = state
    if mode is not state.mode:
        new = FsmState(mode, None, inputs.t)
        if mode is Mode.BACKTRACK:
            target = inputs.backtrack_target
            new = replace(new, backtrack_target=None if target is None else (float(target[0]), float(target[1])))
    elif mode is Mode.BACKTRACK and inputs.backtrack_target is not None and new.backtrack_target is not None:
        tx, ty = new.backtrack_target
        if math.hypot(tx - inputs.pose.x, ty - inputs.pose.y) < params.target_reached:
            t2 = inputs.backtrack_target
            new = replace(new, backtrack_target=(float(t2[0]), float(t2[1])))
    cmd = _command(new, inputs, params)
    if cmd.v == 0.0 and cmd.omega != 0.0:
        new = replace(new, turn_dir=1 if cmd.omega > 0 else -1)
    return StepResult(new, cmd, event, fired, diag)


def _command(state: FsmState, inp: FsmInputs, params: FsmParams) -> Twist:
    mode = state.mode
    if mode is Mode.INITIAL:
        return Twist()
    if mode is Mode.HEADING:
        return _turn(inp.heading_error, params, inp.rotate_ok, state.turn_dir)
    if mode is Mode.DRIVE:
        if inp.policy_cmd is UNSAFE or not inp.forward_safe:
            return Twist()
        return _clip(inp.policy_cmd, params.velocity_clip)
    if mode is Mode.FORWARD:
        return Twist(params.forward_speed if inp.forward_clear else 0.0, 0.0)
    # Backtrack: point the rear at the target, then reverse straight
    target = state.backtrack_target
    if target is None or not inp.rear_safe:
        return Twist()
    p = inp.pose
    if math.hypot(target[0] - p.x, target[1] - p.y) < params.target_reached:
        return Twist()
    err = normalize_angle(math.atan2(target[1] - p.y, target[0] - p.x) + math.pi - p.theta)
    if abs(err) > params.reverse_align_tolerance:
        return _turn(err, params, inp.rotate_ok, state.turn_dir)
    return Twist(-params.reverse_speed, params.rotate_gain * err * 0.5)


# --- controller ---------------------------------------------------------------


@dataclass
class TickRecord:
    t: float
    mode: Mode
    event: Optional[Event]
    fired: Optional[tuple[Mode, Event, Mode]]
    cmd: Twist
    forward_safe: bool
    rear_safe: bool
    diagnostic: Optional[str]


class Navigator:
    """Owns the FSM state and the timers/recorded path feeding its inputs."""

    def __init__(
        self,
        policy: DrivePolicy,
        params: FsmParams = FsmParams(),
        footprint: Footprint | None = None,
    ):
        self.policy = policy
        self.params = params
        self.footprint = footprint or Footprint.rectangle()
        self.roi = RearRoI.for_footprint(self.footprint, params.roi_depth, params.roi_extra_width)
        self.state = FsmState()
        self.recorded = RecordedPath(params.recorded_max_length)
        self._history: deque[tuple[float, float, float]] = deque()
        self._safe_since: Optional[float] = None

    def _stuck(self, t: float, pose: Pose2D) -> bool:
        if self.state.mode not in (Mode.BACKTRACK, Mode.FORWARD):
            return False
        if t - self.state.entered_at < self.params.stuck_window - 1e-9:
            return False
        old = None
        for ht, hx, hy in self._history:
            if ht <= t - self.params.stuck_window + 1e-9:
                old = (hx, hy)
            else:
                break
        if old is None:
            return False
        return math.hypot(pose.x - old[0], pose.y - old[1]) < self.params.stuck_distance

    def _forward_safe(self, state: RobotState, scan: LaserScan, cmd, costmap: Costmap) -> bool:
        if cmd is UNSAFE:
            return False
        p = self.params
        if p.forward_check == "fi":
            return fi_check(scan, self.footprint, p.fi_inflation)
        return mpc_check(state, _clip(cmd, p.velocity_clip), costmap, p.mpc_steps, p.mpc_dt, self.footprint)

    def _rotate_ok(self, state: RobotState, costmap: Costmap) -> tuple[bool, bool]:
        p = self.params
        return tuple(
            mpc_check(state, Twist(0.0, s * p.rotate_speed), costmap, p.mpc_steps, p.mpc_dt, self.footprint) for s in (1.0, -1.0)
        )

    def tick(self, t: float, state: RobotState, scan: LaserScan, costmap: Costmap, path: PlannedPath | None) -> TickRecord:
        p = self.params
        pose = state.pose
        has_path = path is not None
        aligned = False
        err = 0.0
        cmd = UNSAFE
        if has_path:
            goal = subgoal(path, pose, p.lookahead)
            err = heading_error(pose, goal) if math.hypot(goal[0] - pose.x, goal[1] - pose.y) > 1e-9 else 0.0
            aligned = abs(err) <= p.heading_tolerance + 1e-12
            cmd = self.policy(scan, np.array(pose.to_local(goal[0], goal[1])))
        forward_safe = self._forward_safe(state, scan, cmd, costmap)
        mode = self.state.mode
        rear_safe = rear_roi_check(costmap, pose, self.roi) if mode in (Mode.BACKTRACK, Mode.DRIVE) else True

        # consecutive forward-safe time, counted only while recovering; judged by
        # the forward check alone so a momentarily empty tube set cannot block it
        if mode in (Mode.BACKTRACK, Mode.FORWARD) and self._forward_safe(state, scan, Twist(p.forward_speed, 0.0), costmap):
            if self._safe_since is None:
                self._safe_since = t
        else:
            self._safe_since = None
        recovered = self._safe_since is not None and t - self._safe_since >= p.recovered_window - 1e-9

        target = None
        if mode in (Mode.DRIVE, Mode.FORWARD, Mode.BACKTRACK) and len(self.recorded):
            target = backtrack_target(self.recorded, pose, p.backtrack_distance)
            if math.hypot(target[0] - pose.x, target[1] - pose.y) < p.target_reached:
                target = None
        if target is None:
            target = pose.to_world(-p.backtrack_distance, 0.0)

        rotate_ok = (True, True)
        if mode in (Mode.HEADING, Mode.BACKTRACK) or (mode is Mode.INITIAL and has_path):
            rotate_ok = self._rotate_ok(state, costmap)
        forward_clear = True
        if mode is Mode.FORWARD or mode is Mode.BACKTRACK:
            forward_clear = mpc_check(state, Twist(p.forward_speed, 0.0), costmap, p.mpc_steps, p.mpc_dt, self.footprint)

        inputs = FsmInputs(
            t=t,
            pose=pose,
            has_path=has_path,
            aligned=aligned,
            heading_error=err,
            policy_cmd=cmd,
            forward_safe=forward_safe,
            rear_safe=rear_safe,
            stuck=self._stuck(t, pose),
            recovered=recovered,
            backtrack_target=target,
            rotate_ok=rotate_ok,
            forward_clear=forward_clear,
        )
        res = step_fsm(self.state, inputs, p)
        if res.state.mode is not mode:
            self._history.clear()
            self._safe_since = None
        self.state = res.state
        self._history.append((t, pose.x, pose.y))
        while len(self._history) > 2 and self._history[1][0] <= t - p.stuck_window - 1e-9:
            self._history.popleft()
        if self.state.mode is Mode.DRIVE:
            self.recorded.append(t, pose)
        out = res.cmd
        if abs(out.v) > MAX_SPEED:
            out = _clip(out, MAX_SPEED)
        return TickRecord(t, self.state.mode, res.event, res.fired, out, forward_safe, rear_safe, res.diagnostic)


class TubeOnlyController:
    """Motion tubes without the state machine: stop and turn toward the sub-goal when no tube is free."""

    def __init__(self, policy: DrivePolicy, lookahead: float = 0.5, max_speed: float = MAX_SPEED, footprint: Footprint | None = None):
        self.policy = policy
        self.lookahead = lookahead
        self.max_speed = max_speed
        self.footprint = footprint or Footprint.rectangle()
        self.params = FsmParams()

    def tick(self, t, state, scan, costmap, path) -> TickRecord:
        if path is None:
            return TickRecord(t, Mode.INITIAL, None, None, Twist(), False, True, None)
        pose = state.pose
        goal = subgoal(path, pose, self.lookahead)
        cmd = self.policy(scan, np.array(pose.to_local(goal[0], goal[1])))
        if cmd is UNSAFE:
            ok = tuple(mpc_check(state, Twist(0.0, s), costmap, 20, 0.01, self.footprint) for s in (1.0, -1.0))
            turn = _turn(heading_error(pose, goal), self.params, ok)
            return TickRecord(t, Mode.HEADING, None, None, turn, False, True, None)
        return TickRecord(t, Mode.DRIVE, None, None, _clip(cmd, self.max_speed), True, True, None)
