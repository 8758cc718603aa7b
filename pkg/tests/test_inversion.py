import numpy as np
import pytest

from stresstomo.fields import (
    Grid3,
    SymField2,
    divergence,
    identity_sym,
    inc_potential,
    inner_derivative,
    random_admissible_potential,
    random_bump_covector,
    random_bump_sym,
    random_smooth_sym,
    solenoidal_project,
)
from stresstomo.forward import (
    Sinogram,
    kdata_transform,
    longitudinal_transform,
    mixed_transform,
    rytov_family,
)
from stresstomo.geometry import build_line_families, build_sphere_family
from stresstomo.inversion import (
    NonUniqueError,
    ReconReport,
    detangle_trace,
    invert_I_solenoidal,
    invert_K_tracefree,
    pwave_pipeline,
    recover_trace,
    swave_pipeline,
    verify_poincare,
)
from stresstomo.material import MaterialParams, swave_weights


@pytest.fixture
def grid():
    return Grid3.cube(16)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# ---------------------------------------------------------------------------
# trace detangling


def make_entangled(f, a):
    """m whose Fourier modes are f_hat + a (tr f_hat) eps for solenoidal f."""
    grid = f.grid
    trf = f.values[..., :3].sum(-1)
    g = identity_sym(grid).values
    return SymField2(
        grid,
        f.values + a * solenoidal_project(SymField2(grid, trf[..., None] * g)).values,
    )


def test_detangle_round_trip(grid, rng):
    f = solenoidal_project(random_smooth_sym(grid, rng))
    for a in (0.8, -0.2, 3.0):
        m = make_entangled(f, a)
        rec = detangle_trace(m, a)
        assert rel(rec.values, f.values) < 1e-12


def test_detangle_zero_coupling_is_identity(grid, rng):
    m = solenoidal_project(random_smooth_sym(grid, rng))
    rec = detangle_trace(m, 0.0)
    assert np.max(np.abs(rec.values - m.values)) < 1e-12 * m.max_abs()


def test_detangle_trace_scaling(grid, rng):
    # tr f_hat = tr m_hat / (1 + 2a) holds pointwise in real space too
    f = solenoidal_project(random_smooth_sym(grid, rng))
    a = 0.8
    m = make_entangled(f, a)
    rec = detangle_trace(m, a)
    trm = m.values[..., :3].sum(-1)
    assert rel(rec.values[..., :3].sum(-1), trm / (1.0 + 2.0 * a)) < 1e-12


def test_detangle_nonunique_weight(grid, rng):
    m = solenoidal_project(random_smooth_sym(grid, rng))
    with pytest.raises(NonUniqueError):
        detangle_trace(m, -0.5)
    with pytest.raises(NonUniqueError):
        detangle_trace(m, -0.5 + 1e-12)
    # just outside the floor is allowed
    detangle_trace(m, -0.5 + 1e-6)


# ---------------------------------------------------------------------------
# longitudinal inversion


def test_invert_I_zero_data(grid):
    fams = build_line_families(grid, 24, 24)
    zero = SymField2(grid, np.zeros(grid.dims + (6,)))
    sinos = [longitudinal_transform(zero, f) for f in fams]
    m = invert_I_solenoidal(sinos, grid)
    assert np.max(np.abs(m.values)) < 1e-12


def test_invert_I_output_is_solenoidal(grid, rng):
    R = inc_potential(random_bump_sym(grid, rng, radius=0.55))
    fams = build_line_families(grid, 24, 24)
    sinos = [longitudinal_transform(R, f) for f in fams]
    m = invert_I_solenoidal(sinos, grid)
    diam = 2.0 * grid.domain.radius
    assert divergence(m).norm() * diam < 1e-6 * m.norm()


def test_invert_I_insensitive_to_potential_part(grid, rng):
    # data from R + dv reconstruct the same field as data from R alone
    R = inc_potential(random_bump_sym(grid, rng, radius=0.55))
    from stresstomo.fields import random_smooth_covector

    dv = inner_derivative(random_smooth_covector(grid, rng, width=20.0))
    dv = SymField2(grid, dv.values * (R.max_abs() / dv.max_abs()))
    fams = build_line_families(grid, 24, 24)
    m1 = invert_I_solenoidal([longitudinal_transform(R, f) for f in fams], grid)
    R2 = SymField2(grid, R.values + dv.values)
    m2 = invert_I_solenoidal([longitudinal_transform(R2, f) for f in fams], grid)
    assert rel(m2.values, m1.values) < 0.01


def test_invert_I_round_trip_24():
    grid = Grid3.cube(24)
    rng = np.random.default_rng(7)
    R = inc_potential(random_admissible_potential(grid, rng, r0=0.5))
    fams = build_line_families(grid, 48, 32)
    sinos = [longitudinal_transform(R, f) for f in fams]
    m = invert_I_solenoidal(sinos, grid)
    assert rel(m.values, R.values) < 0.10


def test_invert_I_condition_limit(grid, rng):
    # an absurdly tight condition limit marks every node weak and errors out
    R = inc_potential(random_bump_sym(grid, rng, radius=0.55))
    fams = build_line_families(grid, 24, 24)
    sinos = [longitudinal_transform(R, f) for f in fams]
    with pytest.raises(RuntimeError, match="angular sampling"):
        invert_I_solenoidal(sinos, grid, cond_limit=1.0 + 1e-9)


def test_pwave_pipeline_zero_data(grid):
    fams = build_line_families(grid, 24, 24)
    zero = SymField2(grid, np.zeros(grid.dims + (6,)))
    sinos = [longitudinal_transform(zero, f) for f in fams]
    params = MaterialParams()
    R, report = pwave_pipeline(sinos, params, grid)
    assert np.max(np.abs(R.values)) < 1e-12
    assert "total" in report.timing


# ---------------------------------------------------------------------------
# trace-free truncated-transverse inversion


def test_invert_K_zero_data(grid):
    fam = build_sphere_family(grid, 12)
    zero = SymField2(grid, np.zeros(grid.dims + (6,)))
    kd = kdata_transform(zero, fam)
    F = invert_K_tracefree(kd, grid)
    assert np.max(np.abs(F.values)) == 0.0


def test_invert_K_output_trace_free(grid, rng):
    fam = build_sphere_family(grid, 12)
    F0 = random_smooth_sym(grid, rng)
    kd = kdata_transform(F0, fam)
    F = invert_K_tracefree(kd, grid, tol=1e-2, maxiter=50)
    tr = F.values[..., :3].sum(-1)
    assert np.max(np.abs(tr)) < 1e-12 * max(F.max_abs(), 1e-300)


def test_kdata_blind_to_pure_trace(grid, rng):
    # isotropic fields produce no truncated-transverse data at all
    fam = build_sphere_family(grid, 12)
    phi = random_bump_sym(grid, rng, radius=0.7).values[..., 0]
    iso = SymField2(grid, phi[..., None] * identity_sym(grid).values)
    kd = kdata_transform(iso, fam)
    scale = np.max(np.abs(kdata_transform(random_smooth_sym(grid, rng), fam).values))
    assert np.max(np.abs(kd.values)) < 1e-10 * scale


def test_invert_K_nonconvergence_raises(grid, rng):
    fam = build_sphere_family(grid, 12)
    kd = kdata_transform(random_smooth_sym(grid, rng), fam)
    with pytest.raises(RuntimeError, match="did not converge"):
        invert_K_tracefree(kd, grid, tol=1e-14, maxiter=2)


# ---------------------------------------------------------------------------
# trace recovery


def _normalized_ldata(R, params, fams):
    sw = swave_weights(params)
    return [
        Sinogram(f, "lmatrix", mixed_transform(R, params, f).values / sw.scale)
        for f in fams
    ]


def test_recover_trace_nonunique_weight(grid):
    Ft = SymField2(grid, np.zeros(grid.dims + (6,)))
    with pytest.raises(NonUniqueError):
        recover_trace([], Ft, -2.0 / 3.0)


def test_recover_trace_needs_axis3_family(grid, rng):
    params = MaterialParams(nu=(0.1, 0.4, -0.2, 0.5))
    fams = build_line_families(grid, 12, 16)
    R = random_bump_sym(grid, rng, radius=0.6)
    ldata = _normalized_ldata(R, params, fams[:2])
    Ft = SymField2(grid, np.zeros(grid.dims + (6,)))
    with pytest.raises(ValueError, match="axis 3"):
        recover_trace(ldata, Ft, swave_weights(params).a)


def test_recover_trace_on_trace_free_field(grid, rng):
    # consistent trace-free data with the exact deviatoric part: zero trace
    params = MaterialParams(nu=(0.1, 0.4, -0.2, 0.5))
    fams = build_line_families(grid, 24, 24)
    R = random_bump_sym(grid, rng, radius=0.6)
    tr = R.values[..., :3].sum(-1)
    Ft = SymField2(grid, R.values - (tr[..., None] / 3.0) * identity_sym(grid).values)
    ldata = _normalized_ldata(Ft, params, fams)
    phi = recover_trace(ldata, Ft, swave_weights(params).a)
    assert np.max(np.abs(phi.values)) < 1e-10 * Ft.max_abs()


def test_recover_trace_round_trip_24():
    grid = Grid3.cube(24)
    rng = np.random.default_rng(7)
    params = MaterialParams(nu=(0.1, 0.4, -0.2, 0.5))
    R = inc_potential(random_admissible_potential(grid, rng, r0=0.5))
    tr = R.values[..., :3].sum(-1)
    Ft = SymField2(grid, R.values - (tr[..., None] / 3.0) * identity_sym(grid).values)
    fams = build_line_families(grid, 96, 64)
    ldata = _normalized_ldata(R, params, fams[2:])
    phi = recover_trace(ldata, Ft, swave_weights(params).a)
    mask = grid.domain_mask()
    assert np.linalg.norm((phi.values - tr) * mask) < 0.08 * np.linalg.norm(tr * mask)


def test_recover_trace_inconsistent_split_warns(grid, rng):
    params = MaterialParams(nu=(0.1, 0.4, -0.2, 0.5))
    fams = build_line_families(grid, 12, 16)
    R = random_bump_sym(grid, rng, radius=0.6)
    ldata = _normalized_ldata(R, params, [fams[2]])
    tr = R.values[..., :3].sum(-1)
    Ft = SymField2(grid, R.values - (tr[..., None] / 3.0) * identity_sym(grid).values)
    vals = ldata[0].values.copy()
    bump = 0.1 * np.max(np.abs(vals))
    vals[..., 0, 0] += bump
    vals[..., 1, 1] -= bump
    bad = ldata[0].copy_with("lmatrix", vals)
    with pytest.warns(UserWarning, match="polarization split"):
        recover_trace([bad], Ft, swave_weights(params).a)


def test_swave_pipeline_family_mix(grid, rng):
    params = MaterialParams(nu=(0.1, 0.4, -0.2, 0.5))
    fams = build_line_families(grid, 6, 16)
    R = random_bump_sym(grid, rng, radius=0.6)
    sinos = [rytov_family(R, params, f, scale=1e-3) for f in fams]
    with pytest.raises(ValueError, match="family"):
        swave_pipeline(sinos, params, grid, 1e-3)


# ---------------------------------------------------------------------------
# energy-ratio check


def test_poincare_ratio_bounded(grid, rng):
    for _ in range(10):
        v = random_bump_covector(grid, rng, radius=0.8)
        ratio = verify_poincare(v)
        assert 0.0 < ratio <= 1.0


def test_poincare_zero_field(grid):
    from stresstomo.fields import CovectorField

    v = CovectorField(grid, np.zeros(grid.dims + (3,)))
    assert verify_poincare(v) == 0.0


def test_poincare_rejects_boundary_support(grid):
    from stresstomo.fields import CovectorField

    v = CovectorField(grid, np.ones(grid.dims + (3,)))
    with pytest.raises(ValueError, match="boundary"):
        verify_poincare(v)


# ---------------------------------------------------------------------------
# reports


def test_report_json_round_trip():
    rep = ReconReport(
        stages={"m_norm": 1.5},
        errors={"divergence_residual": 1e-9},
        conditions={"weak_fraction": 0.0},
        timing={"total": 2.5},
        config={"pipeline": "pwave", "a": 0.25},
    )
    back = ReconReport.from_json(rep.to_json())
    assert back.to_dict() == rep.to_dict()
