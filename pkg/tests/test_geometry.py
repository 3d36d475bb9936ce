import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon, box
from shapely.ops import unary_union

from barnsim.geometry import (
    JACKAL_LENGTH,
    JACKAL_WIDTH,
    MAX_SPEED,
    Footprint,
    Pose2D,
    RobotState,
    Twist,
    arc_endpoint,
    arc_poses,
    footprint_collides,
    inflate_polygon,
    integrate_unicycle,
    normalize_angle,
    points_in_convex_polygon,
    polygon_area,
    polygon_collides,
    transform_points,
)
from barnsim.grid import OccupancyGrid

# fine-step Euler (h = 1e-5) endpoints, computed once and frozen
EULER_FIXTURES = [
    # (x, y, theta, v, omega, dt) -> (x, y, theta)
    ((0.0, 0.0, 0.0, 1.0, 1.0, math.pi / 2), (1.000005, 0.999995, math.pi / 2)),
    ((0.3, -0.2, 0.4, 1.5, -2.0, 0.7), (1.223169851, -0.485559784, -1.0)),
    ((1.0, 1.0, 3.0, 0.8, 0.5, 2.0), (-0.436677351, 0.461845391, 4.0 - 2 * math.pi)),
]


def euler(x, y, th, v, w, T, h=1e-5):
    n = int(round(T / h))
    h = T / n
    ths = th + w * h * np.arange(n)
    return x + v * h * np.cos(ths).sum(), y + v * h * np.sin(ths).sum()


angles = st.floats(-20.0, 20.0, allow_nan=False)
speeds = st.floats(-MAX_SPEED, MAX_SPEED, allow_nan=False)
rates = st.floats(-4.0, 4.0, allow_nan=False)


def test_normalize_angle_range_and_tie():
    assert normalize_angle(math.pi) == math.pi
    assert normalize_angle(-math.pi) == math.pi
    assert normalize_angle(3 * math.pi) == pytest.approx(math.pi)
    assert normalize_angle(-0.5) == -0.5


@given(angles)
def test_pose_theta_always_normalized(a):
    p = Pose2D(1.0, 2.0, a)
    assert -math.pi < p.theta <= math.pi
    assert math.isclose(math.cos(p.theta), math.cos(a), abs_tol=1e-9)


def test_integrate_straight_and_rotation():
    s = integrate_unicycle(RobotState(), Twist(1.0, 0.0), 1.0)
    assert (s.pose.x, s.pose.y, s.pose.theta) == (1.0, 0.0, 0.0)
    s = integrate_unicycle(RobotState(), Twist(0.0, math.pi / 2), 1.0)
    assert (s.pose.x, s.pose.y) == (0.0, 0.0)
    assert s.pose.theta == pytest.approx(math.pi / 2, abs=1e-15)


def test_integrate_quarter_circle():
    s = integrate_unicycle(RobotState(), Twist(1.0, 1.0), math.pi / 2)
    assert s.pose.x == pytest.approx(1.0, abs=1e-12)
    assert s.pose.y == pytest.approx(1.0, abs=1e-12)
    assert s.pose.theta == pytest.approx(math.pi / 2, abs=1e-12)


@pytest.mark.parametrize("args,frozen", EULER_FIXTURES)
def test_integrate_matches_euler_oracle(args, frozen):
    x, y, th, v, w, dt = args
    s = integrate_unicycle(RobotState(Pose2D(x, y, th)), Twist(v, w), dt)
    ex, ey = euler(*args)
    # live oracle and frozen value agree, then the closed form matches both
    assert (ex, ey) == pytest.approx(frozen[:2], abs=1e-8)
    assert s.pose.x == pytest.approx(ex, abs=1e-4)
    assert s.pose.y == pytest.approx(ey, abs=1e-4)
    assert s.pose.theta == pytest.approx(frozen[2], abs=1e-9)


def test_integrate_clamps_speed_and_reports_applied_twist():
    s = integrate_unicycle(RobotState(), Twist(5.0, 0.0), 1.0)
    assert s.pose.x == pytest.approx(MAX_SPEED)
    assert s.twist == Twist(MAX_SPEED, 0.0)


def test_integrate_rejects_non_positive_dt():
    with pytest.raises(ValueError):
        integrate_unicycle(RobotState(), Twist(1, 0), 0.0)


@settings(max_examples=200)
@given(angles, speeds, rates, st.floats(0.001, 2.0))
def test_integration_group_property(th, v, w, dt):
    s0 = RobotState(Pose2D(0.4, -1.2, th))
    one = integrate_unicycle(s0, Twist(v, w), dt)
    two = integrate_unicycle(integrate_unicycle(s0, Twist(v, w), dt / 2), Twist(v, w), dt / 2)
    assert one.pose.x == pytest.approx(two.pose.x, abs=1e-12)
    assert one.pose.y == pytest.approx(two.pose.y, abs=1e-12)
    assert math.isclose(math.cos(one.pose.theta - two.pose.theta), 1.0, abs_tol=1e-12)


def test_arc_endpoint_examples():
    assert arc_endpoint(2.0, 0.0, 1.0) == Pose2D(2.0, 0.0, 0.0)
    p = arc_endpoint(1.0, 1.0, math.pi)
    assert (p.x, p.y, p.theta) == pytest.approx((0.0, 2.0, math.pi), abs=1e-12)
    a, b = arc_endpoint(1.0, 0.5, 1.0), arc_endpoint(1.0, -0.5, 1.0)
    assert (b.x, b.y, b.theta) == (a.x, -a.y, -a.theta)
    with pytest.raises(ValueError):
        arc_endpoint(1.0, 0.0, -1.0)


@given(st.floats(0.0, 2.0), st.floats(0.0, 3.0))
def test_arc_continuity_at_zero_curvature(v, t):
    a, b = arc_endpoint(v, 1e-9, t), arc_endpoint(v, 0.0, t)
    assert math.hypot(a.x - b.x, a.y - b.y) < 1e-6


@given(st.floats(0.0, 2.0), st.floats(-3.0, 3.0), st.floats(0.0, 2.0))
def test_arc_mirror_symmetry_exact(v, k, t):
    a, b = arc_endpoint(v, k, t), arc_endpoint(v, -k, t)
    assert a.x == b.x and a.y == -b.y


def test_arc_poses_matches_scalar():
    times = np.linspace(0, 1, 11)
    arr = arc_poses(1.3, -1.7, times)
    for t, row in zip(times, arr):
        p = arc_endpoint(1.3, -1.7, t)
        assert row[:2] == pytest.approx((p.x, p.y), abs=1e-12)


def test_footprint_defaults_and_validation():
    fp = Footprint.rectangle()
    assert fp.length == pytest.approx(JACKAL_LENGTH)
    assert fp.width == pytest.approx(JACKAL_WIDTH)
    cw = np.array([[0.2, 0.1], [0.2, -0.1], [-0.2, -0.1], [-0.2, 0.1]])
    fcw = Footprint(cw)
    assert polygon_area(fcw.polygon) > 0  # reordered to CCW
    assert sorted(map(tuple, fcw.polygon)) == sorted(map(tuple, cw))
    with pytest.raises(ValueError):
        Footprint(np.array([[1, 1], [2, 1], [2, 2]]))  # misses origin
    with pytest.raises(ValueError):
        Footprint(np.array([[1, 0], [0, 0.2], [-1, 0], [0, 1]]))  # non-convex
    with pytest.raises(ValueError):
        Footprint.rectangle(inflation_margin=-0.1)


@given(st.floats(0.001, 0.3))
def test_inflated_polygon_strictly_contains_physical(m):
    fp = Footprint.rectangle()
    inflated = Polygon(fp.inflated(m))
    phys = Polygon(fp.polygon)
    assert inflated.contains(phys)
    assert inflated.exterior.distance(phys.exterior) == pytest.approx(m, rel=1e-9)


def test_inflate_polygon_general_convex():
    poly = np.array([[0.3, 0.0], [0.0, 0.25], [-0.2, 0.1], [-0.2, -0.15], [0.1, -0.2]])
    out = Polygon(inflate_polygon(poly, 0.05))
    # contains the Minkowski sum with a disc of the margin
    assert out.buffer(1e-9).contains(Polygon(poly).buffer(0.05, quad_segs=64))


def test_points_in_polygon_boundary_counts_inside():
    sq = Footprint.rectangle(2.0, 2.0).polygon
    mask = points_in_convex_polygon(np.array([[1.0, 0.0], [1.0001, 0.0], [0, 0]]), sq)
    assert mask.tolist() == [True, False, True]


# --- collision ----------------------------------------------------------------------


def occupied_union(grid):
    r, c = np.nonzero(grid.cells)
    res = grid.resolution
    ox, oy = grid.origin
    return unary_union([box(ox + j * res, oy + i * res, ox + (j + 1) * res, oy + (i + 1) * res) for i, j in zip(r, c)])


def sampling_oracle(grid, pose, fp):
    """Dense interior samples at resolution/4; collision iff a sample lands in an occupied cell."""
    step = grid.resolution / 4
    poly = fp.polygon
    xs = np.arange(poly[:, 0].min() + step / 2, poly[:, 0].max(), step)
    ys = np.arange(poly[:, 1].min() + step / 2, poly[:, 1].max(), step)
    pts = np.array([(x, y) for x in xs for y in ys])
    pts = pts[points_in_convex_polygon(pts, poly)]
    w = transform_points(pts, pose)
    for x, y in w:
        r, c = grid.world_to_cell(x, y)
        if not grid.in_bounds(r, c) or grid.cells[r, c]:
            return True
    return False


def random_grid(rng, n=40, res=0.05, p=0.04):
    cells = rng.random((n, n)) < p
    return OccupancyGrid(cells, res, (-1.0, -1.0))


def test_empty_grid_never_collides():
    g = OccupancyGrid(np.zeros((40, 40), bool), 0.05, (-1, -1))
    for th in np.linspace(-3, 3, 13):
        assert not footprint_collides(g, Pose2D(0, 0, th), Footprint.rectangle())


def test_pose_on_occupied_cell_collides():
    cells = np.zeros((40, 40), bool)
    cells[20, 20] = True
    g = OccupancyGrid(cells, 0.05, (-1, -1))
    assert footprint_collides(g, Pose2D(0.025, 0.025, 0.3), Footprint.rectangle())


def test_out_of_bounds_is_collision():
    g = OccupancyGrid(np.zeros((10, 10), bool), 0.1)
    assert footprint_collides(g, Pose2D(0.1, 0.5, 0.0), Footprint.rectangle())


def test_touching_edge_is_not_overlap():
    cells = np.zeros((40, 40), bool)
    cells[20, 30] = True  # x in [0.5, 0.55)
    g = OccupancyGrid(cells, 0.05, (-1, -1))
    fp = Footprint.rectangle(0.5, 0.3)
    assert not footprint_collides(g, Pose2D(0.25, 0.025, 0.0), fp)
    assert footprint_collides(g, Pose2D(0.2501, 0.025, 0.0), fp)


def test_footprint_collides_matches_exact_and_sampling_oracles():
    rng = np.random.default_rng(7)
    fp = Footprint.rectangle()
    agree_sampling = 0
    n = 300
    for _ in range(n):
        g = random_grid(rng)
        pose = Pose2D(*rng.uniform(-0.4, 0.4, 2), rng.uniform(-math.pi, math.pi))
        got = footprint_collides(g, pose, fp)
        world = Polygon(transform_points(fp.polygon, pose))
        exact = world.intersection(occupied_union(g)).area > 1e-12
        assert got == exact
        agree_sampling += got == sampling_oracle(g, pose, fp)
    # sampling can only miss slivers thinner than resolution/4
    assert agree_sampling >= 0.97 * n


def test_collision_invariant_under_rigid_transform():
    rng = np.random.default_rng(3)
    fp = Footprint.rectangle()
    for _ in range(50):
        g = random_grid(rng)
        pose = Pose2D(*rng.uniform(-0.3, 0.3, 2), rng.uniform(-math.pi, math.pi))
        # rot90 on (row=y, col=x) maps (x, y) -> (y, -x) about the grid centre (the world origin)
        rot = OccupancyGrid(np.rot90(g.cells, 1), g.resolution, (-1.0, -1.0))
        p2 = Pose2D(pose.y, -pose.x, pose.theta - math.pi / 2)
        assert footprint_collides(g, pose, fp) == footprint_collides(rot, p2, fp)
        # integer-cell translation
        sh = OccupancyGrid(g.cells, g.resolution, (-1.0 + 0.15, -1.0 - 0.1))
        assert footprint_collides(g, pose, fp) == footprint_collides(sh, Pose2D(pose.x + 0.15, pose.y - 0.1, pose.theta), fp)


def test_polygon_collides_accepts_arbitrary_convex():
    cells = np.zeros((20, 20), bool)
    cells[10, 10] = True
    g = OccupancyGrid(cells, 0.1)
    tri = np.array([[0.9, 0.9], [1.2, 0.9], [0.9, 1.2]])
    assert polygon_collides(g, tri)
    assert not polygon_collides(g, tri + 0.5)
