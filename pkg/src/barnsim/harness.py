"""Seeded trials and suites: generate -> simulate -> navigate -> score."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
import os
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .envgen import CAParams, EnvSpec, GenerationError, XorShift64Star, generate_environment, read_keyvalue, write_keyvalue
from .fsm import FsmParams, Navigator, TubeOnlyController, TubePolicy
from .geometry import MAX_SPEED, Footprint, Pose2D, RobotState, Twist, footprint_collides, integrate_unicycle
from .planning import FALLBACK_RADII, MemoryCostmap, NoPathError, plan_with_fallback
from .scoring import Outcome, SuiteReport, TrialRecord, aggregate, optimal_time
from .sensor import BeamConfig, raycast_scan
from .tubes import TUBE_INFLATION, TubeLibrary, TubeParams, load_or_build

log = logging.getLogger(__name__)

PROFILES = ("tube", "tube+fsm-fi", "tube+fsm-mpc")


@dataclass(frozen=True)
class SuiteConfig:
    # suite layout
    env_count: int = 50
    trials_per_env: int = 10
    seed_base: int = 0
    profile: str = "tube+fsm-fi"
    # simulation
    tick_rate: float = 20.0
    timeout: float = 100.0
    replan_period: float = 1.0
    goal_tolerance: float = 0.5
    max_speed: float = MAX_SPEED
    noise_std: float = 0.0
    start_jitter_xy: float = 0.02
    start_jitter_theta: float = 0.1
    # metric
    clip_low: float = 4.0
    clip_high: float = 8.0
    # robot and sensor
    footprint_length: float = 0.508
    footprint_width: float = 0.430
    fov_deg: float = 270.0
    beam_count: int = 720
    max_range: float = 10.0
    # course generation
    ca_fill_prob: float = 0.35
    ca_iterations: int = 3
    ca_threshold: int = 5
    ca_max_retries: int = 100
    # motion tubes
    tube_v_min: float = 0.3
    tube_v_max: float = 2.0
    tube_v_levels: int = 5
    tube_curvatures: int = 400
    tube_curvature_range: float = 2.5
    tube_horizon: float = 1.0
    tube_d_sample: float = 0.02
    tube_inflation: float = TUBE_INFLATION
    tube_weight_eps: float = 0.05
    # global planner
    inflation_radius: float = 0.25
    # state machine
    heading_tolerance_deg: float = 30.0
    lookahead: float = 0.5
    backtrack_distance: float = 0.3
    fi_inflation: float = 0.04
    velocity_clip: float = 0.7
    mpc_steps: int = 20
    mpc_dt: float = 0.01
    # outputs
    out_dir: str = "barnsim-out"
    workers: int = 1
    emit_traces: bool = False

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}, not {self.profile!r}")
        if self.env_count < 1 or self.trials_per_env < 1:
            raise ValueError("env_count and trials_per_env must be >= 1")
        if not self.tick_rate > 0 or not self.timeout > 0:
            raise ValueError("tick_rate and timeout must be positive")

    # --- derived parameter objects ---

    def footprint(self) -> Footprint:
        return Footprint.rectangle(self.footprint_length, self.footprint_width)

    def beam_config(self) -> BeamConfig:
        return BeamConfig(math.radians(self.fov_deg), self.beam_count, self.max_range)

    def ca_params(self) -> CAParams:
        return CAParams(
            fill_prob=self.ca_fill_prob,
            iterations=self.ca_iterations,
            threshold=self.ca_threshold,
            max_retries=self.ca_max_retries,
        )

    def tube_params(self) -> TubeParams:
        return TubeParams(
            velocity_levels=tuple(float(v) for v in np.linspace(self.tube_v_min, self.tube_v_max, self.tube_v_levels)),
            curvatures_per_level=self.tube_curvatures,
            curvature_range=self.tube_curvature_range,
            horizon_T=self.tube_horizon,
            d_sample=self.tube_d_sample,
            footprint=Footprint.rectangle(self.footprint_length, self.footprint_width, self.tube_inflation),
        )

    def fsm_params(self) -> FsmParams:
        return FsmParams(
            heading_tolerance=math.radians(self.heading_tolerance_deg),
            lookahead=self.lookahead,
            backtrack_distance=self.backtrack_distance,
            fi_inflation=self.fi_inflation,
            velocity_clip=self.velocity_clip,
            mpc_steps=self.mpc_steps,
            mpc_dt=self.mpc_dt,
            forward_check="mpc" if self.profile.endswith("mpc") else "fi",
        )

    def env_seed(self, env_id: int) -> int:
        return self.seed_base + env_id

    def trial_seed(self, env_id: int, trial_index: int) -> int:
        return self.env_seed(env_id) * 1000 + trial_index

    # --- key=value files ---

    def to_keyvalue(self) -> dict[str, str]:
        return {f.name: _format_value(getattr(self, f.name)) for f in fields(self)}

    def save(self, path: str | Path) -> None:
        write_keyvalue(path, self.to_keyvalue())

    @classmethod
    def from_mapping(cls, items: dict[str, str], base: "SuiteConfig | None" = None) -> "SuiteConfig":
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in items.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _parse_value(hints[key], raw)
        return dataclasses.replace(base or cls(), **values)

    @classmethod
    def load(cls, path: str | Path) -> "SuiteConfig":
        return cls.from_mapping(read_keyvalue(path))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(tp, raw: str):
    if tp is bool:
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"bad boolean {raw!r}")
        return low in ("true", "1", "yes")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    return raw


# --- single trial ------------------------------------------------------------


@dataclass
class TrialResult:
    record: TrialRecord
    trace: list[str]

    @property
    def trace_digest(self) -> str:
        return hashlib.sha256("\n".join(self.trace).encode()).hexdigest()


def make_controller(config: SuiteConfig, library: TubeLibrary):
    policy = TubePolicy(library, lambda c: 1.0 / (c + config.tube_weight_eps))
    if config.profile == "tube":
        return TubeOnlyController(policy, config.lookahead, config.max_speed, config.footprint())
    return Navigator(policy, config.fsm_params(), config.footprint())


def _swept_collision(grid, state: RobotState, cmd: Twist, dt: float, footprint: Footprint) -> bool:
    """Collision check at sub-steps no longer than half a cell of footprint motion."""
    travel = abs(cmd.v) * dt + footprint.circumscribed_radius * abs(cmd.omega) * dt
    n = max(1, int(math.ceil(travel / (0.5 * grid.resolution))))
    s = state
    for _ in range(n):
        s = integrate_unicycle(s, cmd, dt / n)
        if footprint_collides(grid, s.pose, footprint):
            return True
    return False


def _trace_header(env: EnvSpec, env_id: int, config: SuiteConfig, trial_index: int, trial_seed: int) -> list[str]:
    head = [f"# env_id={env_id}", f"# env_seed={env.difficulty_seed}", f"# trial_index={trial_index}", f"# trial_seed={trial_seed}"]
    head += [f"# config.{k}={v}" for k, v in config.to_keyvalue().items() if k not in ("out_dir", "workers", "emit_traces")]
    return head


def run_trial(
    env: EnvSpec,
    config: SuiteConfig,
    trial_seed: int,
    library: TubeLibrary | None = None,
    env_id: int = 0,
    trial_index: int = 0,
) -> TrialResult:
    """Simulate one attempt; faults inside the stack become an ``error`` record."""
    library = library if library is not None else load_or_build(config.tube_params(), config.beam_config())
    ot = optimal_time(env.path_length, config.max_speed)
    trace = _trace_header(env, env_id, config, trial_index, trial_seed)

    def finish(outcome, at, diag=""):
        rec = TrialRecord.scored(env_id, trial_seed, outcome, at, ot, trial_index, diag, config.clip_low, config.clip_high)
        trace.append(f"END {rec.outcome.value} AT={at!r} OT={ot!r} score={rec.score!r} {diag}".rstrip())
        return TrialResult(rec, trace)

    rng = XorShift64Star(trial_seed)
    jx = rng.uniform(-1, 1) * config.start_jitter_xy
    jy = rng.uniform(-1, 1) * config.start_jitter_xy
    jth = rng.uniform(-1, 1) * config.start_jitter_theta
    start = Pose2D(env.start.x + jx, env.start.y + jy, env.start.theta + jth)
    state = RobotState(start)
    footprint = config.footprint()
    beams = config.beam_config()
    dt = 1.0 / config.tick_rate
    n_ticks = int(round(config.timeout * config.tick_rate))
    goal = env.goal

    if footprint_collides(env.grid, start, footprint):
        return finish(Outcome.COLLISION, 0.0, "start pose in collision")

    memory = MemoryCostmap(env.grid)
    controller = make_controller(config, library)
    radii = tuple(r for r in FALLBACK_RADII if r <= config.inflation_radius) or (0.0,)
    if config.inflation_radius not in radii:
        radii = (config.inflation_radius,) + radii
    path = None
    next_plan = 0.0
    try:
        for k in range(n_ticks):
            t = k * dt
            pose = state.pose
            scan = raycast_scan(env.grid, pose, beams, t, config.noise_std, rng)
            memory.observe_scan(scan, pose)
            if t >= next_plan - 1e-9:
                next_plan = t + config.replan_period
                try:
                    path, _ = plan_with_fallback(memory, (pose.x, pose.y), goal, radii)
                except NoPathError:
                    path = None
            rec = controller.tick(t, state, scan, memory.costmap(0.0), path)
            cmd = rec.cmd
            trace.append(
                f"{t:.2f} {pose.x!r} {pose.y!r} {pose.theta!r} {rec.mode.value} "
                f"{rec.event.value if rec.event else '-'} {cmd.v!r} {cmd.omega!r} "
                f"fs={int(rec.forward_safe)} rs={int(rec.rear_safe)}" + (f" ! {rec.diagnostic}" if rec.diagnostic else "")
            )
            if _swept_collision(env.grid, state, cmd, dt, footprint):
                return finish(Outcome.COLLISION, t + dt)
            state = integrate_unicycle(state, cmd, dt, config.max_speed)
            if math.hypot(state.pose.x - goal[0], state.pose.y - goal[1]) <= config.goal_tolerance:
                return finish(Outcome.SUCCESS, t + dt)
    except Exception as exc:  # noqa: BLE001 - one faulty trial must not abort the suite
        log.exception("trial env=%s seed=%s failed", env_id, trial_seed)
        return finish(Outcome.ERROR, max(state_time(trace), dt), f"{type(exc).__name__}: {exc}")
    return finish(Outcome.TIMEOUT, n_ticks * dt)


def state_time(trace: list[str]) -> float:
    for line in reversed(trace):
        if not line.startswith("#"):
            try:
                return float(line.split()[0])
            except ValueError:
                return 0.0
    return 0.0


# --- suites ---------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(config: SuiteConfig) -> None:
    _WORKER["library"] = load_or_build(config.tube_params(), config.beam_config())


def _run_job(job):
    env, config, env_id, trial_index = job
    lib = _WORKER.get("library")
    if lib is None:
        _init_worker(config)
        lib = _WORKER["library"]
    res = run_trial(env, config, config.trial_seed(env_id, trial_index), lib, env_id, trial_index)
    return env_id, trial_index, res


def generate_suite(config: SuiteConfig) -> tuple[dict[int, EnvSpec], dict[int, str]]:
    envs, skipped = {}, {}
    params = config.ca_params()
    for env_id in range(config.env_count):
        try:
            envs[env_id] = generate_environment(config.env_seed(env_id), params)
        except GenerationError as exc:
            skipped[env_id] = str(exc)
    return envs, skipped


def run_suite(config: SuiteConfig, workers: int | None = None, write: bool = True) -> SuiteReport:
    workers = config.workers if workers is None else workers
    envs, skipped = generate_suite(config)
    jobs = [(env, config, env_id, i) for env_id, env in envs.items() for i in range(config.trials_per_env)]
    library = load_or_build(config.tube_params(), config.beam_config())  # warms the cache for workers
    results = []
    if workers <= 1:
        _WORKER["library"] = library
        results = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(config,)) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=1))
    results.sort(key=lambda r: (r[0], r[1]))
    layout = {env_id: config.trials_per_env for env_id in envs}
    report = aggregate([r[2].record for r in results], layout, skipped)
    if write:
        out = Path(config.out_dir)
        report.write(out)
        if config.emit_traces:
            tdir = out / "traces"
            tdir.mkdir(parents=True, exist_ok=True)
            for env_id, i, res in results:
                (tdir / f"env{env_id:03d}_trial{i:02d}.trace").write_text("\n".join(res.trace) + "\n", encoding="utf-8")
    return report


def replay_trace(path: str | Path, library: TubeLibrary | None = None) -> tuple[TrialResult, bool]:
    """Re-run the trial described by a trace header; returns (result, identical-to-file)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head, cfg = parse_trace_header(lines)
    config = SuiteConfig.from_mapping(cfg)
    env = generate_environment(int(head["env_seed"]), config.ca_params())
    res = run_trial(env, config, int(head["trial_seed"]), library, int(head["env_id"]), int(head["trial_index"]))
    return res, res.trace == lines


def parse_trace_header(lines: list[str]) -> tuple[dict[str, str], dict[str, str]]:
    """Split the ``# key=value`` header into (trial fields, config fields)."""
    head, cfg = {}, {}
    for line in lines:
        if not line.startswith("# "):
            break
        key, _, value = line[2:].partition("=")
        if key.startswith("config."):
            cfg[key[len("config."):]] = value
        else:
            head[key] = value
    return head, cfg


def record_from_trace(lines: list[str], clip_low: float | None = None, clip_high: float | None = None) -> TrialRecord:
    """Rebuild the trial record from a trace, rescoring with the given clip bounds."""
    head, cfg = parse_trace_header(lines)
    config = SuiteConfig.from_mapping(cfg)
    end = next((l for l in reversed(lines) if l.startswith("END ")), None)
    if end is None:
        raise ValueError("trace has no END line")
    parts = end.split(" ", 4)
    outcome = parts[1]
    at = float(parts[2].partition("=")[2])
    ot = float(parts[3].partition("=")[2])
    diag = ""
    if len(parts) > 4:
        tail = parts[4].partition(" ")
        diag = tail[2] if tail[0].startswith("score=") else parts[4]
    return TrialRecord.scored(
        int(head["env_id"]),
        int(head["trial_seed"]),
        outcome,
        at,
        ot,
        int(head["trial_index"]),
        diag,
        config.clip_low if clip_low is None else clip_low,
        config.clip_high if clip_high is None else clip_high,
    )
