"""Adaptive free-space motion tubes.

A tube is the area swept by the inflated footprint while the robot holds a
constant speed ``v`` and curvature ``kappa`` for ``horizon_T`` seconds. Its
outline is sampled every ``d_sample`` metres and each sample is tied to the
LiDAR beam nearest its bearing, with the sample's distance from the sensor.
A tube is available when every beam reads farther than all of its samples,
so the per-tick test is a gather and a comparison with no map involved.

The library is built once per parameter set and cached on disk.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import shapely

from .geometry import Footprint, Pose2D, Twist, arc_poses
from .sensor import BeamConfig, LaserScan

LIBRARY_FORMAT_VERSION = 1
TUBE_INFLATION = 0.04


def default_velocity_levels() -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(0.3, 2.0, 5))


@dataclass(frozen=True)
class TubeParams:
    velocity_levels: tuple[float, ...] = field(default_factory=default_velocity_levels)
    curvatures_per_level: int = 400
    curvature_range: float = 2.5
    horizon_T: float = 1.0
    d_sample: float = 0.02
    footprint: Footprint = field(default_factory=lambda: Footprint.rectangle(inflation_margin=TUBE_INFLATION))
    blind_fraction: float = 0.5

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if not self.d_sample > 0:
            raise ValueError("d_sample must be positive")
        if self.curvatures_per_level < 1 or not self.velocity_levels:
            raise ValueError("need at least one velocity level and one curvature")
        if any(v <= 0 for v in self.velocity_levels):
            raise ValueError("velocity levels must be positive")
        object.__setattr__(self, "velocity_levels", tuple(float(v) for v in self.velocity_levels))

    @property
    def tube_count(self) -> int:
        return len(self.velocity_levels) * self.curvatures_per_level

    def curvatures(self) -> np.ndarray:
        """``curvatures_per_level`` values evenly spaced on [-range, range], exactly symmetric."""
        n, k = self.curvatures_per_level, self.curvature_range
        if n == 1:
            return np.zeros(1)
        step = 2.0 * k / (n - 1)
        pos = k - step * np.arange(n // 2)
        mid = [0.0] if n % 2 else []
        return np.concatenate([-pos, mid, pos[::-1]])

    def key(self) -> str:
        doc = {
            "v": self.velocity_levels,
            "n": self.curvatures_per_level,
            "k": self.curvature_range,
            "T": self.horizon_T,
            "d": self.d_sample,
            "fp": self.footprint.polygon.tolist(),
            "m": self.footprint.inflation_margin,
            "blind": self.blind_fraction,
        }
        return json.dumps(doc, sort_keys=True)


@dataclass(eq=False)
class MotionTube:
    v: float
    kappa: float
    boundary_samples: np.ndarray  # (n, 2) robot frame, CCW
    beam_index: np.ndarray  # (m,) one entry per in-FOV sample
    expected_distance: np.ndarray  # (m,) metres from the sensor
    endpoint: Pose2D
    out_of_fov: int = 0
    blind: bool = False

    @property
    def omega(self) -> float:
        return self.v * self.kappa

    @property
    def beam_projection(self) -> list[tuple[int, float]]:
        return list(zip(self.beam_index.tolist(), self.expected_distance.tolist()))

    def __eq__(self, other):
        if not isinstance(other, MotionTube):
            return NotImplemented
        return (
            self.v == other.v
            and self.kappa == other.kappa
            and self.endpoint == other.endpoint
            and self.out_of_fov == other.out_of_fov
            and self.blind == other.blind
            and np.array_equal(self.boundary_samples, other.boundary_samples)
            and np.array_equal(self.beam_index, other.beam_index)
            and np.array_equal(self.expected_distance, other.expected_distance)
        )


# --- construction ---------------------------------------------------------


def swept_polygon(v: float, kappa: float, horizon: float, polygon: np.ndarray, step: float) -> shapely.Polygon:
    """Union of convex hulls of consecutive footprint poses along the arc."""
    n = max(2, int(math.ceil(v * horizon / step)) + 1)
    poses = arc_poses(v, kappa, np.linspace(0.0, horizon, n))
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    px = c[:, None] * polygon[None, :, 0] - s[:, None] * polygon[None, :, 1] + poses[:, :1]
    py = s[:, None] * polygon[None, :, 0] + c[:, None] * polygon[None, :, 1] + poses[:, 1:2]
    pts = np.stack([px, py], axis=-1)
    pairs = np.concatenate([pts[:-1], pts[1:]], axis=1)
    hulls = shapely.convex_hull(shapely.multipoints(pairs))
    union = shapely.union_all(hulls)
    if union.geom_type != "Polygon":
        union = union.convex_hull
    return shapely.Polygon(union.exterior)


def sample_ring(poly: shapely.Polygon, spacing: float) -> np.ndarray:
    """Points along the exterior, CCW, consecutive gaps <= ``spacing`` (closing gap included)."""
    ring = shapely.LineString(np.asarray(poly.exterior.coords))
    if not poly.exterior.is_ccw:
        ring = shapely.LineString(np.asarray(poly.exterior.coords)[::-1])
    n = max(3, int(math.ceil(ring.length / spacing)))
    s = np.arange(n) * (ring.length / n)
    return shapely.get_coordinates(shapely.line_interpolate_point(ring, s))


def project_to_beams(samples: np.ndarray, beam_config: BeamConfig):
    """(in_fov mask, beam index, distance) of robot-frame samples."""
    m = beam_config.mount_offset
    c, s = math.cos(m.theta), math.sin(m.theta)
    dx = samples[:, 0] - m.x
    dy = samples[:, 1] - m.y
    sx = c * dx + s * dy
    sy = -s * dx + c * dy
    bearing = np.arctan2(sy, sx)
    dist = np.hypot(sx, sy)
    in_fov = np.abs(bearing) <= 0.5 * beam_config.fov
    idx = np.rint((bearing - beam_config.angle_min) / beam_config.increment).astype(np.int64)
    idx = np.clip(idx, 0, beam_config.beam_count - 1)
    return in_fov, idx, dist


def _make_tube(v, kappa, samples, params, beam_config) -> MotionTube:
    in_fov, idx, dist = project_to_beams(samples, beam_config)
    out = int(np.count_nonzero(~in_fov))
    return MotionTube(
        v=float(v),
        kappa=float(kappa),
        boundary_samples=samples,
        beam_index=idx[in_fov],
        expected_distance=dist[in_fov],
        endpoint=_endpoint(v, kappa, params.horizon_T),
        out_of_fov=out,
        blind=out > params.blind_fraction * len(samples),
    )


def _endpoint(v, kappa, horizon) -> Pose2D:
    x, y, th = arc_poses(v, kappa, np.array([horizon]))[0]
    return Pose2D(float(x), float(y), float(th))


def build_tube_library(params: TubeParams = TubeParams(), beam_config: BeamConfig = BeamConfig()) -> "TubeLibrary":
    poly = params.footprint.inflated()
    kappas = params.curvatures()
    tubes: list[MotionTube] = []
    mirror = np.array([1.0, -1.0])
    for v in params.velocity_levels:
        built = {
            float(k): sample_ring(swept_polygon(v, k, params.horizon_T, poly, params.d_sample), params.d_sample)
            for k in kappas
            if k >= 0 or -k not in kappas
        }
        for kappa in kappas:
            samples = built.get(float(kappa))
            if samples is None:
                # exact mirror of the positive-curvature tube, reversed to stay CCW
                samples = (built[float(-kappa)] * mirror)[::-1].copy()
            tubes.append(_make_tube(v, kappa, samples, params, beam_config))
    return TubeLibrary(params, beam_config, tubes)


class TubeLibrary:
    """Immutable tube set with flattened arrays for per-tick evaluation."""

    def __init__(self, params: TubeParams, beam_config: BeamConfig, tubes: Sequence[MotionTube]):
        if not tubes:
            raise ValueError("empty tube library")
        self.params = params
        self.beam_config = beam_config
        self.tubes = list(tubes)
        n = len(self.tubes)
        self.v = np.array([t.v for t in self.tubes])
        self.kappa = np.array([t.kappa for t in self.tubes])
        self.omega = self.v * self.kappa
        self.endpoints = np.array([[t.endpoint.x, t.endpoint.y] for t in self.tubes])
        self.blind = np.array([t.blind for t in self.tubes])
        # one (tube, beam) pair per beam a tube touches, keeping the farthest sample
        tube_ids, beams, dists = [], [], []
        starts = np.zeros(n, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)
        pos = 0
        for i, t in enumerate(self.tubes):
            starts[i] = pos
            if len(t.beam_index) == 0:
                continue
            order = np.lexsort((t.expected_distance, t.beam_index))
            b = t.beam_index[order]
            d = t.expected_distance[order]
            last = np.r_[b[1:] != b[:-1], True]
            tube_ids.append(np.full(int(last.sum()), i))
            beams.append(b[last])
            dists.append(d[last])
            counts[i] = int(last.sum())
            pos += counts[i]
        self.pair_beam = np.concatenate(beams) if beams else np.zeros(0, dtype=np.int64)
        self.pair_dist = np.concatenate(dists) if dists else np.zeros(0)
        self.pair_start = starts
        self.pair_count = counts
        self._nonempty = counts > 0

    def __len__(self):
        return len(self.tubes)

    def __getitem__(self, i) -> MotionTube:
        return self.tubes[i]

    def _check_scan(self, scan: LaserScan) -> None:
        if scan.config != self.beam_config:
            raise ValueError("scan beam configuration differs from the library's")

    def available(self, scan: LaserScan) -> np.ndarray:
        """Boolean availability of every tube against ``scan``."""
        self._check_scan(scan)
        ok = scan.ranges[self.pair_beam] > self.pair_dist
        out = np.zeros(len(self.tubes), dtype=bool)
        if ok.size:
            seg = np.logical_and.reduceat(ok, self.pair_start[self._nonempty])
            out[self._nonempty] = seg
        out &= ~self.blind
        return out

    def costs(self, subgoal) -> np.ndarray:
        return np.hypot(self.endpoints[:, 0] - subgoal[0], self.endpoints[:, 1] - subgoal[1])

    def __eq__(self, other):
        if not isinstance(other, TubeLibrary):
            return NotImplemented
        return (
            self.params.key() == other.params.key()
            and self.beam_config == other.beam_config
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.tubes, other.tubes))
        )

    # --- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """npz archive: format version, parameter JSON, and concatenated per-tube arrays."""
        sample_off = np.cumsum([0] + [len(t.boundary_samples) for t in self.tubes])
        beam_off = np.cumsum([0] + [len(t.beam_index) for t in self.tubes])
        bc = self.beam_config
        with open(path, "wb") as fh:
            np.savez_compressed(
                fh,
                version=np.array(LIBRARY_FORMAT_VERSION),
                params=np.array(self.params.key()),
                beam=np.array([bc.fov, bc.beam_count, bc.max_range, bc.mount_offset.x, bc.mount_offset.y, bc.mount_offset.theta]),
                v=self.v,
                kappa=self.kappa,
                endpoint=np.array([[t.endpoint.x, t.endpoint.y, t.endpoint.theta] for t in self.tubes]),
                out_of_fov=np.array([t.out_of_fov for t in self.tubes]),
                blind=self.blind,
                samples=np.concatenate([t.boundary_samples for t in self.tubes]),
                sample_off=sample_off,
                beam_index=np.concatenate([t.beam_index for t in self.tubes]),
                distance=np.concatenate([t.expected_distance for t in self.tubes]),
                beam_off=beam_off,
            )

    @classmethod
    def load(cls, path: str | Path) -> "TubeLibrary":
        with np.load(path, allow_pickle=False) as z:
            version = int(z["version"])
            if version != LIBRARY_FORMAT_VERSION:
                raise ValueError(f"{path}: library format {version}, expected {LIBRARY_FORMAT_VERSION}")
            params = params_from_key(str(z["params"]))
            fov, count, max_range, mx, my, mth = z["beam"]
            bc = BeamConfig(float(fov), int(count), float(max_range), Pose2D(float(mx), float(my), float(mth)))
            so, bo = z["sample_off"], z["beam_off"]
            samples, bidx, dist = z["samples"], z["beam_index"], z["distance"]
            tubes = []
            for i in range(len(z["v"])):
                ex, ey, eth = z["endpoint"][i]
                tubes.append(
                    MotionTube(
                        v=float(z["v"][i]),
                        kappa=float(z["kappa"][i]),
                        boundary_samples=samples[so[i] : so[i + 1]].copy(),
                        beam_index=bidx[bo[i] : bo[i + 1]].copy(),
                        expected_distance=dist[bo[i] : bo[i + 1]].copy(),
                        endpoint=Pose2D(float(ex), float(ey), float(eth)),
                        out_of_fov=int(z["out_of_fov"][i]),
                        blind=bool(z["blind"][i]),
                    )
                )
        return cls(params, bc, tubes)


def params_from_key(key: str) -> TubeParams:
    doc = json.loads(key)
    return TubeParams(
        velocity_levels=tuple(doc["v"]),
        curvatures_per_level=doc["n"],
        curvature_range=doc["k"],
        horizon_T=doc["T"],
        d_sample=doc["d"],
        footprint=Footprint(np.array(doc["fp"]), doc["m"]),
        blind_fraction=doc["blind"],
    )


def cache_dir() -> Path:
    return Path(os.environ.get("BARNSIM_CACHE", Path.home() / ".cache" / "barnsim"))


def load_or_build(params: TubeParams = TubeParams(), beam_config: BeamConfig = BeamConfig(), directory: str | Path | None = None) -> TubeLibrary:
    """Library for ``(params, beam_config)``, reusing a cached build when present."""
    directory = Path(directory) if directory is not None else cache_dir()
    digest = hashlib.sha256(f"{LIBRARY_FORMAT_VERSION}|{params.key()}|{beam_config!r}".encode()).hexdigest()[:16]
    path = directory / f"tubes-{digest}.npz"
    if path.exists():
        try:
            return TubeLibrary.load(path)
        except (OSError, ValueError, KeyError):
            pass
    lib = build_tube_library(params, beam_config)
    directory.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".{os.getpid()}.tmp")
    lib.save(tmp)
    os.replace(tmp, path)
    return lib


# --- per-tick evaluation ---------------------------------------------------


class _Unsafe:
    """No tube is available: the caller must treat the situation as dangerous."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNSAFE"

    def __bool__(self):
        return False


UNSAFE = _Unsafe()


def tube_available(tube: MotionTube, scan: LaserScan) -> bool:
    if tube.blind:
        return False
    return bool(np.all(scan.ranges[tube.beam_index] > tube.expected_distance))


def tube_cost(tube: MotionTube, subgoal) -> float:
    """Distance from the tube's end position to the robot-frame sub-goal."""
    return math.hypot(tube.endpoint.x - subgoal[0], tube.endpoint.y - subgoal[1])


def inverse_cost_weights(costs: np.ndarray, eps: float = 0.05) -> np.ndarray:
    return 1.0 / (costs + eps)


def softmax_weights(costs: np.ndarray, temperature: float = 0.1) -> np.ndarray:
    z = -(costs - costs.min()) / temperature
    return np.exp(z)


def select_command(library: TubeLibrary, scan: LaserScan, subgoal, weights=inverse_cost_weights):
    """Weighted average of the available tubes' (v, v*kappa), or ``UNSAFE``."""
    avail = library.available(scan)
    if not avail.any():
        return UNSAFE
    w = weights(library.costs(subgoal)[avail])
    total = w.sum()
    return Twist(float(np.dot(w, library.v[avail]) / total), float(np.dot(w, library.omega[avail]) / total))
