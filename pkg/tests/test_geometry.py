import numpy as np
import pytest

from stresstomo.fields import Grid3, ScalarField
from stresstomo.geometry import (
    ConformalMetric,
    ball_chord,
    build_line_families,
    build_sphere_family,
    coverage_directions,
    diameter,
    fibonacci_sphere,
    line_ray,
    parallel_transport,
    reverse_ray,
    trace_geodesic,
    trilinear,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# interpolation


def test_trilinear_linear_field_exact():
    grid = Grid3.cube(16)
    x = grid.coords()
    vals = 1.0 + 2.0 * x[..., 0] - 0.5 * x[..., 1] + 0.25 * x[..., 2]
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.0, 1.0, size=(40, 3))
    got = trilinear(grid, vals, pts)
    want = 1.0 + 2.0 * pts[:, 0] - 0.5 * pts[:, 1] + 0.25 * pts[:, 2]
    assert np.max(np.abs(got - want)) <= 1e-12


def test_trilinear_zero_outside_box():
    grid = Grid3.cube(12)
    vals = np.ones(grid.dims)
    out = trilinear(grid, vals, [[5.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert out[0] == 0.0 and out[1] == pytest.approx(1.0)
    assert trilinear(grid, vals, [5.0, 0.0, 0.0], mode="clamp") == pytest.approx(1.0)


def test_trilinear_vector_components():
    grid = Grid3.cube(12)
    vals = np.stack([np.ones(grid.dims), 2 * np.ones(grid.dims)], axis=-1)
    out = trilinear(grid, vals, [0.1, -0.2, 0.3])
    assert out == pytest.approx([1.0, 2.0])


# ---------------------------------------------------------------------------
# straight rays and families


def test_ball_chord_diametral_and_miss():
    entry, length = ball_chord((0, 0, 0), 1.0, (0.0, 0.0, 0.0), (1.0, 0, 0))
    assert length == pytest.approx(2.0)
    assert entry == pytest.approx([-1.0, 0.0, 0.0])
    _, miss = ball_chord((0, 0, 0), 1.0, (0.0, 2.0, 0.0), (1.0, 0, 0))
    assert miss == 0.0


def test_line_ray_nodes_and_frame():
    ray = line_ray((-1.0, 0, 0), (1.0, 0, 0), 2.0, step=0.03)
    assert len(ray.tau) == int(np.ceil(2.0 / 0.03)) + 1
    assert ray.length == pytest.approx(2.0)
    assert np.allclose(np.linalg.norm(ray.tangents, axis=1), 1.0)
    f = ray.frames[0]
    assert abs(f[0] @ f[1]) <= 1e-14
    assert np.allclose([f[0] @ ray.tangents[0], f[1] @ ray.tangents[0]], 0.0)


def test_build_line_families_validation():
    grid = Grid3.cube(12)
    with pytest.raises(ValueError):
        build_line_families(grid, angles=2, offsets=12)
    with pytest.raises(ValueError):
        build_line_families(grid, angles=4, offsets=4)


def test_family_tangents_orthogonal_to_axis():
    grid = Grid3.cube(12)
    fams = build_line_families(grid, angles=4, offsets=12)
    assert len(fams) == 3
    for k, fam in enumerate(fams):
        for a in range(4):
            assert fam.direction(a)[k] == 0.0
            assert fam.offset_axis(a)[k] == 0.0


def test_family_ray_count_and_boundary_endpoints():
    grid = Grid3.cube(12)
    fams = build_line_families(grid, angles=4, offsets=12)
    for fam in fams:
        assert fam.ray_count <= 4 * 12 * 12
        for (a, o, si), ray in fam.rays():
            if ray.length == 0.0:
                continue
            for end in (ray.points[0], ray.points[-1]):
                assert abs(np.linalg.norm(end) - 1.0) <= fam.step


def test_family_chord_batch_matches_single_rays():
    grid = Grid3.cube(12)
    fam = build_line_families(grid, angles=5, offsets=12)[1]
    starts, d, lengths = fam.chords(3)
    for o in (0, 4, 7):
        for si in (0, 3, 7):
            ray = fam.ray(3, o, si)
            assert ray.length == pytest.approx(lengths[o, si], abs=1e-12)
            if lengths[o, si] > 0:
                assert np.allclose(ray.points[0], starts[o, si], atol=1e-12)


def test_sphere_family_geometry():
    grid = Grid3.cube(12)
    fam = build_sphere_family(grid, directions=20, offsets=12)
    dirs = fam.directions
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    # all pairwise distinct
    dots = dirs @ dirs.T - np.eye(20)
    assert np.max(dots) < 1.0 - 1e-6
    ray = fam.ray(7, 3, 4)
    if ray.length > 0:
        e1, e2 = fam.frame(7)
        assert abs(e1 @ dirs[7]) <= 1e-12 and abs(e2 @ dirs[7]) <= 1e-12
        assert np.allclose(ray.frames[0], fam.frame(7))


def test_fibonacci_sphere_spread():
    d = fibonacci_sphere(60)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
    assert len(np.unique(np.round(d, 9), axis=0)) == 60


# ---------------------------------------------------------------------------
# geodesics


def constant_metric(v, n=16):
    grid = Grid3.cube(n)
    return ConformalMetric(ScalarField(grid, np.full(grid.dims, float(v))))


def test_constant_speed_geodesic_is_straight_chord():
    metric = constant_metric(2.0)
    x0 = unit([1.0, 0.3, -0.2])
    d = unit([-1.0, 0.1, 0.05])
    ray = trace_geodesic(metric, x0, d)
    # deviation from the straight line through x0 with direction d
    rel = ray.points - x0
    dev = rel - (rel @ d)[:, None] * d
    assert np.max(np.linalg.norm(dev, axis=1)) <= 1e-8
    # exit point on the sphere
    assert abs(np.linalg.norm(ray.points[-1]) - 1.0) <= 1e-10


def test_constant_speed_diametral_h_length():
    metric = constant_metric(2.0)
    ray = trace_geodesic(metric, [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0])
    assert ray.length == pytest.approx(1.0, abs=1e-6)  # Euclidean length / v


def radial_speed(pts):
    return 1.0 + 0.1 * np.sum(np.asarray(pts) ** 2, axis=-1)


def variable_metric(n=24):
    return ConformalMetric.from_function(Grid3.cube(n), radial_speed)


def test_unit_h_speed_along_variable_geodesic():
    metric = variable_metric()
    ray = trace_geodesic(metric, unit([0.2, 1.0, 0.3]), unit([-0.3, -1.0, 0.1]))
    v = metric.speed_at(ray.points)
    h_speed = np.linalg.norm(ray.tangents, axis=1) / v
    assert np.max(np.abs(h_speed - 1.0)) <= 1e-8


def test_variable_geodesic_step_halving_oracle():
    metric = variable_metric()
    x0 = unit([0.9, 0.2, -0.35])
    d = unit([-1.0, -0.15, 0.3])
    step = 0.02
    coarse = trace_geodesic(metric, x0, d, step=step)
    fine = trace_geodesic(metric, x0, d, step=0.5 * step)
    n = min(len(coarse.tau) - 1, (len(fine.tau) - 1) // 2)
    dev = coarse.points[:n] - fine.points[: 2 * n : 2]
    assert np.max(np.linalg.norm(dev, axis=1)) <= 1e-6


def test_variable_geodesic_bends():
    metric = variable_metric()
    x0 = np.array([np.sqrt(1 - 0.25), 0.5, 0.0])
    d = np.array([-1.0, 0.0, 0.0])
    ray = trace_geodesic(metric, x0, d)
    assert np.max(np.abs(ray.points[:, 1] - 0.5)) > 1e-4


# ---------------------------------------------------------------------------
# parallel transport and frames


def test_transport_identity_for_straight_rays():
    ray = line_ray((-1.0, 0, 0), (1.0, 0, 0), 2.0, step=0.05)
    out = parallel_transport(ray, [0.0, 1.0, 2.0])
    assert np.allclose(out, [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        parallel_transport(ray, [1.0, 0.0, 0.0])


def test_transport_preserves_h_products():
    metric = variable_metric()
    ray = trace_geodesic(metric, unit([0.7, -0.5, 0.4]), unit([-0.8, 0.5, -0.2]))
    v = metric.speed_at(ray.points)
    for f in (ray.frames[:, 0], ray.frames[:, 1]):
        h_norm = np.linalg.norm(f, axis=1) / v
        h_dot = np.einsum("nj,nj->n", f, ray.tangents) / v**2
        assert np.max(np.abs(h_norm - 1.0)) <= 1e-8
        assert np.max(np.abs(h_dot)) <= 1e-8
    cross = np.einsum("nj,nj->n", ray.frames[:, 0], ray.frames[:, 1]) / v**2
    assert np.max(np.abs(cross)) <= 1e-8


def test_transport_reverse_path_round_trip():
    metric = variable_metric()
    ray = trace_geodesic(metric, unit([0.1, 0.8, 0.55]), unit([0.2, -0.9, -0.4]))
    X0 = ray.frames[0, 0] + 0.37 * ray.frames[0, 1]
    fwd = parallel_transport(ray, X0)
    back = parallel_transport(reverse_ray(ray), fwd)
    assert np.linalg.norm(back - X0) <= 1e-6 * np.linalg.norm(X0)


# ---------------------------------------------------------------------------
# diameter and coverage


def test_diameter_constant_speed():
    for v in (1.0, 2.0):
        metric = constant_metric(v)
        assert diameter(metric, samples=16) == pytest.approx(2.0 / v, abs=1e-6)


def test_diameter_variable_refinement():
    metric = variable_metric(16)
    d1 = diameter(metric, samples=16)
    d2 = diameter(metric, samples=64)
    assert abs(d2 - d1) <= 0.01 * d2


def test_coverage_directions_off_axis():
    rng = np.random.default_rng(2)
    for _ in range(20):
        y = rng.normal(size=3)
        xi, ok = coverage_directions(y)
        assert ok.all()
        assert np.allclose(np.einsum("kj,j->k", xi, y), 0.0, atol=1e-12)
        # pairwise distinct and the quadratic-form sampling matrix well posed
        b1, b2 = np.linalg.svd(np.outer(y, y) / (y @ y))[0].T[1:]
        rows = []
        for x in xi:
            c1, c2 = x @ b1, x @ b2
            rows.append([c1 * c1, c2 * c2, 2 * c1 * c2])
        assert np.linalg.cond(np.asarray(rows)) < 1e8


def test_coverage_directions_axis_degenerate():
    _, ok = coverage_directions([0.0, 0.0, 3.0])
    assert list(ok) == [True, True, False]


def test_metric_validation_and_diagnostics():
    grid = Grid3.cube(12)
    with pytest.raises(ValueError):
        ConformalMetric(ScalarField(grid, np.zeros(grid.dims)))
    m = variable_metric(12)
    assert 0.0 < m.speed_variation() < 1.0
