import numpy as np
import pytest

from stresstomo.fields import (
    CovectorField,
    Grid3,
    ScalarField,
    SymField2,
    analyze_sym,
    bump_profile,
    divergence,
    identity_sym,
    inc_potential,
    inner_derivative,
    matrix_to_sym,
    random_bump_covector,
    random_bump_scalar,
    random_bump_sym,
    solenoidal_project,
    spectral_gradient,
    sym_inner,
    sym_to_matrix,
    synthesize_sym,
    tangential_projector,
    trace,
)


@pytest.fixture(scope="module")
def grid():
    return Grid3.cube(32, halfwidth=1.2, ball_radius=1.0)


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(7)


def analytic_covector(x):
    """Analytic covector field decaying to ~1e-13 at the box edge (halfwidth 1.2)."""
    g = np.exp(-20.0 * np.sum(x * x, axis=-1))
    return np.stack(
        [
            g * np.sin(1.3 * x[..., 0] + 0.2),
            g * x[..., 1] * x[..., 2],
            g * np.cos(x[..., 0] - 0.7 * x[..., 2]),
        ],
        axis=-1,
    )


def smooth_covector(grid):
    return CovectorField(grid, analytic_covector(grid.coords()))


def cstep_partial(fun, x0, j, k, h=1e-30):
    """Complex-step derivative d_j fun_k at a point: exact to machine precision."""
    xc = x0.astype(complex).copy()
    xc[j] += 1j * h
    return np.imag(fun(xc[None, :])[0, k]) / h


_C8_SECOND = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])
_C8_FIRST = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def fd2_point(fun, x0, j, k, comp, h=0.012):
    """8th-order finite-difference second derivative d_j d_k fun_comp at a point."""
    ej, ek = np.eye(3)[j], np.eye(3)[k]
    if j == k:
        pts = np.array([x0 + (i - 4) * h * ej for i in range(9)])
        return np.dot(_C8_SECOND, fun(pts)[:, comp]) / h**2
    vals = np.zeros(9)
    for a in range(9):
        pts = np.array([x0 + (a - 4) * h * ej + (b - 4) * h * ek for b in range(9)])
        vals[a] = np.dot(_C8_FIRST, fun(pts)[:, comp]) / h
    return np.dot(_C8_FIRST, vals) / h


# ---------------------------------------------------------------------------
# grid / storage


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid3((4, 32, 32), (0.1, 0.1, 0.1), (0, 0, 0))
    with pytest.raises(ValueError):
        Grid3.cube(16, halfwidth=0.9, ball_radius=1.0)  # ball pokes out of the box


def test_sym_matrix_round_trip(rng):
    v = rng.normal(size=(4, 4, 4, 6))
    assert np.allclose(matrix_to_sym(sym_to_matrix(v)), v)


def test_fourier_round_trip(grid, rng):
    u = random_bump_sym(grid, rng)
    back = synthesize_sym(analyze_sym(u))
    assert np.max(np.abs(back.values - u.values)) <= 1e-12 * np.max(np.abs(u.values))


def test_fourier_hermitian_symmetry(grid, rng):
    u = random_bump_sym(grid, rng)
    spec = analyze_sym(u).values
    flipped = np.conj(spec[::-1, ::-1, ::-1])
    flipped = np.roll(flipped, 1, axis=(0, 1, 2))  # y -> -y on the fft grid
    # the index flip is only a true negation off the (self-aliased) Nyquist planes
    n = grid.dims[0]
    keep = np.ones(n, dtype=bool)
    keep[n // 2] = False
    band = np.ix_(keep, keep, keep)
    assert np.max(np.abs((spec - flipped)[band])) <= 1e-9 * np.max(np.abs(spec))


# ---------------------------------------------------------------------------
# inner derivative


def test_inner_derivative_zero(grid):
    v = CovectorField(grid, np.zeros(grid.dims + (3,)))
    assert np.all(inner_derivative(v).values == 0.0)


def test_inner_derivative_linear_field(grid, rng):
    a = rng.normal(size=(3, 3))
    x = grid.coords()
    v = CovectorField(grid, np.einsum("kj,...j->...k", a, x))
    dv = inner_derivative(v, backend="centered").values
    sym = matrix_to_sym(0.5 * (a + a.T))
    interior = dv[1:-1, 1:-1, 1:-1]
    assert np.max(np.abs(interior - sym)) <= 1e-10


def test_inner_derivative_matches_pointwise_oracle():
    grid = Grid3.cube(40, halfwidth=1.2, ball_radius=1.0)
    v = smooth_covector(grid)
    dv = inner_derivative(v).values
    scale = np.max(np.abs(dv))
    x = grid.coords()
    for idx in [(22, 19, 21), (20, 20, 20), (17, 23, 18)]:
        x0 = x[idx]
        for s, (j, k) in enumerate(SYM_PAIRS := [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]):
            want = 0.5 * (
                cstep_partial(analytic_covector, x0, j, k)
                + cstep_partial(analytic_covector, x0, k, j)
            )
            assert abs(dv[idx][s] - want) <= 1e-10 * scale


def test_inner_derivative_spectral_close_to_centered(grid):
    v = smooth_covector(grid)
    a = inner_derivative(v, backend="spectral").values
    b = inner_derivative(v, backend="centered").values
    scale = np.max(np.abs(a))
    assert np.median(np.abs(a - b)) <= 2e-2 * scale


# ---------------------------------------------------------------------------
# divergence and trace


def test_divergence_constant_tensor(grid):
    u = identity_sym(grid, 2.5)
    u.values[..., 5] = 1.0
    dv = divergence(u, backend="centered").values
    assert np.max(np.abs(dv[1:-1, 1:-1, 1:-1])) <= 1e-12


def test_divergence_of_dv_matches_second_difference_oracle():
    grid = Grid3.cube(40, halfwidth=1.2, ball_radius=1.0)
    v = smooth_covector(grid)
    got = divergence(inner_derivative(v)).values
    scale = np.max(np.abs(got))
    x = grid.coords()
    # oracle: (delta dv)_j = (Lap v_j + d_j div v) / 2 via 8th-order stencils
    for idx in [(22, 19, 21), (19, 21, 20)]:
        x0 = x[idx]
        for j in range(3):
            lap = sum(fd2_point(analytic_covector, x0, a, a, j) for a in range(3))
            ddiv = sum(fd2_point(analytic_covector, x0, j, a, a) for a in range(3))
            assert abs(got[idx][j] - 0.5 * (lap + ddiv)) <= 1e-8 * scale


def test_trace_identity(grid):
    u = identity_sym(grid)
    assert np.allclose(trace(u).values, 3.0)
    vp = ScalarField(grid, np.full(grid.dims, 2.0))
    assert np.allclose(trace(u, speed=vp).values, 12.0)


def test_trace_matches_direct_sum(grid, rng):
    u = random_bump_sym(grid, rng)
    tr = trace(u).values
    nodes = rng.integers(0, 32, size=(100, 3))
    for i, j, k in nodes:
        assert tr[i, j, k] == pytest.approx(u.values[i, j, k, :3].sum(), abs=1e-14)


# ---------------------------------------------------------------------------
# solenoidal projection


def test_projector_idempotent(grid, rng):
    u = random_bump_sym(grid, rng)
    su = solenoidal_project(u)
    ssu = solenoidal_project(su)
    assert SymField2(grid, ssu.values - su.values).norm() <= 1e-10 * u.norm()


def test_projector_kills_potential_fields(grid, rng):
    v = random_bump_covector(grid, rng, radius=0.6)
    dv = inner_derivative(v)
    assert solenoidal_project(dv).norm() <= 1e-8 * dv.norm()


def test_projector_orthogonality(grid, rng):
    u = random_bump_sym(grid, rng)
    v = random_bump_covector(grid, rng, radius=0.6)
    dv = inner_derivative(v)
    su = solenoidal_project(u)
    assert abs(sym_inner(su, dv)) <= 1e-8 * u.norm() * dv.norm()


def test_projected_field_is_divergence_free(grid, rng):
    u = random_bump_sym(grid, rng)
    su = solenoidal_project(u)
    assert divergence(su).norm() <= 1e-8 * u.norm() / min(grid.spacing)


def test_projection_of_scalar_times_identity(grid, rng):
    phi = random_bump_scalar(grid, rng)
    u = SymField2(grid, np.zeros(grid.dims + (6,)))
    u.values[..., :3] = phi.values[..., None]
    # hand algebra: P g P = P = eps, so S(phi g)^hat = phi_hat eps
    from stresstomo.fields import _nyquist_mask, _padded_fft, _wavevectors

    su_hat = _padded_fft(solenoidal_project(u).values, grid)
    phi_hat = _padded_fft(phi.values, grid)
    eps = matrix_to_sym(tangential_projector(*_wavevectors(grid)))
    want = phi_hat[..., None] * eps
    band = ~_nyquist_mask(grid)  # Nyquist planes are outside the projector's band
    scale = np.max(np.abs(phi_hat))
    assert np.max(np.abs(su_hat[band] - want[band])) <= 1e-9 * scale


def test_tangential_trace_is_two():
    y = np.mgrid[-3:4, -3:4, -3:4].astype(float)
    eps = tangential_projector(y[0], y[1], y[2])
    tr = np.trace(eps, axis1=-2, axis2=-1)
    nonzero = (y[0] != 0) | (y[1] != 0) | (y[2] != 0)
    assert np.all(tr[nonzero] == 2.0)


# ---------------------------------------------------------------------------
# incompatibility generator


def test_inc_zero(grid):
    a = SymField2(grid, np.zeros(grid.dims + (6,)))
    assert np.all(inc_potential(a).values == 0.0)


def test_inc_rejects_wide_support(grid):
    a = identity_sym(grid)
    with pytest.raises(ValueError):
        inc_potential(a)


def test_inc_divergence_free_and_supported(rng):
    grid = Grid3.cube(48, halfwidth=1.2, ball_radius=1.0)
    from stresstomo.fields import random_admissible_potential, support_margin

    a = random_admissible_potential(grid, rng)
    r = inc_potential(a)
    assert divergence(r).norm() <= 1e-8 * r.norm() / min(grid.spacing)
    edge = support_margin(r.values, grid, margin=2 * grid.spacing[0])
    assert edge <= 1e-6 * r.max_abs()


def test_inc_axis_aligned_potential_matches_symbolic_oracle():
    # A = phi(x) e3 x e3 with phi = exp(-w r^2):
    # R_jk = eps_j p q eps_k r 3 d_p d_r A_q3 ... only the (1,2) block survives:
    # R_11 = d2 d2 phi, R_22 = d1 d1 phi, R_12 = -d1 d2 phi, R_j3 = 0.
    grid = Grid3.cube(64, halfwidth=1.2, ball_radius=1.0)
    x = grid.coords()
    w = 40.0
    phi = np.exp(-w * np.sum(x * x, axis=-1))
    a = SymField2(grid, np.zeros(grid.dims + (6,)))
    a.values[..., 2] = phi
    r = inc_potential(a)
    d11 = (4 * w**2 * x[..., 0] ** 2 - 2 * w) * phi
    d22 = (4 * w**2 * x[..., 1] ** 2 - 2 * w) * phi
    d12 = 4 * w**2 * x[..., 0] * x[..., 1] * phi
    scale = np.max(np.abs(r.values))
    for idx in [(32, 32, 32), (35, 30, 33), (29, 34, 31)]:
        m = sym_to_matrix(r.values[idx])
        assert m[0, 0] == pytest.approx(d22[idx], abs=1e-6 * scale)
        assert m[1, 1] == pytest.approx(d11[idx], abs=1e-6 * scale)
        assert m[0, 1] == pytest.approx(-d12[idx], abs=1e-6 * scale)
        assert abs(m[2, 2]) <= 1e-6 * scale
        assert abs(m[0, 2]) <= 1e-6 * scale


def test_inc_moment_identity(grid, rng):
    # compactly supported divergence-free symmetric fields integrate to zero
    a = random_bump_sym(grid, rng, radius=0.6)
    r = inc_potential(a)
    total = np.sum(r.values, axis=(0, 1, 2)) * grid.cell_volume()
    assert np.max(np.abs(total)) <= 1e-8 * r.max_abs()
