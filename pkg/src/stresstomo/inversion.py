"""Reconstruction: longitudinal and truncated-transverse inversion.

The compressional route inverts the longitudinal ray transform over three
coordinate-plane line families by Fourier regridding (central-slice), then
splits the trace contamination in the Fourier domain.  The shear route
solves a regularized normal equation for the trace-free part and recovers
the trace by scalar filtered backprojection of the eta-averaged diagonal
data.
"""

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    Grid3,
    CovectorField,
    ScalarField,
    SymField2,
    SYM_MULT,
    _padded_fft,
    _padded_ifft,
    _wavevectors,
    divergence,
    identity_sym,
    inner_derivative,
    solenoidal_project,
    sym_to_matrix,
    matrix_to_sym,
    tangential_projector,
)
from .forward import (
    Sinogram,
    _n_views,
    _view_frame,
    _view_nodes,
    born_reduce,
    kdata_adjoint,
    kdata_transform,
    longitudinal_transform,
    sym_qform,
    truncated_reduce,
    unitarity_drift,
)
from .geometry import PlaneFamily, SphereFamily, trilinear
from .material import pwave_weights, swave_weights


class NonUniqueError(RuntimeError):
    """The requested inversion has a nontrivial null space at these weights."""


@dataclass
class ReconReport:
    """Serializable record of a reconstruction run."""

    stages: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    conditions: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "stages": self.stages,
            "errors": self.errors,
            "conditions": self.conditions,
            "timing": self.timing,
            "config": self.config,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            stages=d.get("stages", {}),
            errors=d.get("errors", {}),
            conditions=d.get("conditions", {}),
            timing=d.get("timing", {}),
            config=d.get("config", {}),
        )

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


# ---------------------------------------------------------------------------
# longitudinal inversion: Fourier regrid + per-node solve


def _family_slice_spectrum(sino, angle_upsample=8):
    """Slice-axis Fourier transform of parallel-beam data per angle.

    The angle axis is first refined by trigonometric interpolation: the data
    are periodic over a full turn once the offset axis is reversed at pi, so
    zero-padding the angular Fourier series interpolates them spectrally.
    Returns (spec, zeta): spec[a, j, l] is the transform of the data over
    the slice coordinate only, so spec[a, :, l] remains a function of the
    offset; the offset transform is evaluated per query in _sample_polar.
    """
    fam = sino.family
    vals = sino.values
    if angle_upsample > 1:
        full = np.concatenate([vals, vals[:, ::-1, :]], axis=0)
        na = full.shape[0]
        ft = np.fft.fft(full, axis=0)
        padded = np.zeros((na * angle_upsample,) + full.shape[1:], dtype=complex)
        half = na // 2
        padded[:half] = ft[:half]
        padded[-half:] = ft[-half:]
        # split the Nyquist coefficient symmetrically
        padded[half] = 0.5 * ft[half]
        padded[-half] = 0.5 * ft[half]
        full = np.real(np.fft.ifft(padded, axis=0)) * angle_upsample
        vals = full[: full.shape[0] // 2]
    z = fam.slices
    dz = z[1] - z[0]
    zeta = 2.0 * np.pi * np.fft.fftfreq(len(z), d=dz)
    spec = np.fft.fft(vals, axis=2) * np.exp(-1j * zeta[None, :] * z[0])
    return spec * dz, zeta


def _cubic_weights(f):
    """Four-point Lagrange weights at fractional position f in [0, 1]."""
    return (
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    )


def _sample_polar(spec, offsets, theta_count, angle_idx, angle_frac, radius, zeta_idx):
    """Offset transform of spec[angle, offset, zeta] at exact signed radii.

    The offset axis is transformed by direct quadrature at each query
    frequency, so only the angle is interpolated (cubic), wrapping at pi
    with radius negation: a half turn reverses the offset axis.
    """
    do = offsets[1] - offsets[0]
    out = np.zeros(radius.shape, dtype=complex)
    for da, wa in zip((-1, 0, 1, 2), _cubic_weights(angle_frac)):
        a = angle_idx + da
        r = np.where((a >= theta_count) | (a < 0), -radius, radius)
        a = np.mod(a, theta_count)
        rows = spec[a, :, zeta_idx]
        phases = np.exp(-1j * r[:, None] * offsets[None, :])
        out += wa * np.sum(rows * phases, axis=-1) * do
    return out


def _support_fill_weights(xcoords, radius):
    """Weights recovering the zero-frequency sample of a line spectrum.

    The line's inverse transform vanishes where |x| > radius, so the missing
    sample is the least-squares value minimizing the out-of-support energy;
    that estimate is a fixed weighted sum of the other samples.
    """
    xcoords = np.asarray(xcoords)
    n = len(xcoords)
    outside = np.flatnonzero(np.abs(xcoords) > radius)
    if len(outside) == 0:
        raise RuntimeError(
            "grid does not extend beyond the support; cannot fill "
            "rank-deficient Fourier nodes"
        )
    Fo = np.exp(2j * np.pi * np.outer(outside, np.arange(n)) / n) / n
    col = Fo[:, 0]
    w = -(np.conj(col) @ Fo) / np.real(np.conj(col) @ col)
    w[0] = 0.0
    return w


def _plane_basis(y, ynorm):
    """Vectorized orthonormal basis (b1, b2) of the plane orthogonal to y."""
    n = y / ynorm[..., None]
    # seed with the axis least aligned with n
    seed = np.eye(3)[np.argmin(np.abs(n), axis=-1)]
    b1 = seed - (np.sum(seed * n, axis=-1))[..., None] * n
    b1 /= np.linalg.norm(b1, axis=-1)[..., None]
    b2 = np.cross(n, b1)
    return b1, b2


def invert_I_solenoidal(sinograms, grid: Grid3, floor=1e-6, cond_limit=1e8, refine=1):
    """Recover the solenoidal field m from its longitudinal transform.

    sinograms: scalar-kind records over the three coordinate-plane line
    families.  A direct Fourier-regrid estimate is followed by `refine`
    defect-correction sweeps: the estimate is pushed through the exact
    forward operator and the data residual is inverted again, which removes
    the offset-sampling alias bias of the direct pass.
    """
    m = _invert_I_once(sinograms, grid, floor, cond_limit)
    for _ in range(refine):
        resid = [
            s.copy_with("scalar", s.values - longitudinal_transform(m, s.family).values)
            for s in sinograms
        ]
        corr = _invert_I_once(resid, grid, floor, cond_limit)
        m = SymField2(grid, m.values + corr.values)
    return m


def _invert_I_once(sinograms, grid: Grid3, floor=1e-6, cond_limit=1e8):
    """One Fourier-regrid inversion pass over the three plane families.

    Per family the 2D transform of parallel-beam data samples mhat(y) xi xi
    for the in-plane direction xi orthogonal to y; the three families give
    three quadratic samples per Fourier node, enough to determine the
    symmetric 2-form of mhat on the plane orthogonal to y.  Structurally
    rank-deficient nodes (on coordinate planes and axes) are filled using
    the compact support of the field.
    """
    fams = {s.family.axis: s for s in sinograms}
    if len(fams) != 3:
        raise ValueError("need one sinogram per coordinate-plane family")
    ks = np.meshgrid(*grid.freqs(), indexing="ij")
    shape = ks[0].shape
    y = np.stack(ks, axis=-1)
    ynorm = np.linalg.norm(y, axis=-1)
    # beyond the grid Nyquist sphere the sampled spectrum is pure alias and
    # the kernel deconvolution only amplifies noise; leave those nodes zero
    band = np.pi / np.max(np.asarray(grid.spacing))
    active = (ynorm > 0.0) & (ynorm <= band)
    yv = y[active]
    yn = ynorm[active]
    b1, b2 = _plane_basis(yv, yn)

    nact = len(yv)
    # the data integrate the trilinear interpolant of the field, whose
    # transform carries the separable kernel prod_i sinc^2(y_i h_i / 2);
    # divide it out to recover the sample-grid spectrum
    wtri = np.prod(
        np.sinc(yv * np.asarray(grid.spacing) / (2.0 * np.pi)) ** 2, axis=-1
    )
    rows_M = np.zeros((nact, 3, 3))
    rows_Q = np.zeros((nact, 3), dtype=complex)
    rows_ok = np.zeros((nact, 3), dtype=bool)
    axis_tol = 1e-12

    # fft-ordered index of each active node along every grid axis
    idx = np.argwhere(active)

    for k, sino in fams.items():
        fam = sino.family
        if not isinstance(fam, PlaneFamily):
            raise ValueError("longitudinal inversion expects plane families")
        spec, zeta = _family_slice_spectrum(sino)
        i1, i2 = (k + 1) % 3, (k + 2) % 3
        yp1, yp2 = yv[:, i1], yv[:, i2]
        rad = np.hypot(yp1, yp2)
        ok = rad > axis_tol * np.maximum(yn, 1.0)
        # in-plane direction of the measuring rays: xi ~ unit(e_k x y)
        xi = np.zeros((nact, 3))
        xi[:, i1] = -yp2
        xi[:, i2] = yp1
        xi[ok] /= rad[ok, None]
        # angle of the offset axis w matching y_p, folded to [0, pi)
        phi = np.arctan2(yp2, yp1) - 0.5 * np.pi
        fold = np.floor(phi / np.pi).astype(int)
        theta = phi - fold * np.pi
        r = np.where(fold % 2 == 0, rad, -rad)
        ntheta = spec.shape[0]
        dtheta = np.pi / ntheta
        t = theta / dtheta
        a0 = np.minimum(t.astype(int), ntheta - 1)
        frac = t - a0
        sel = np.where(ok)[0]
        vals = _sample_polar(
            spec, fam.offsets, ntheta, a0[sel], frac[sel], r[sel], idx[sel, k]
        )
        zc = zeta[idx[sel, k]]
        # undo the slice-axis zeroed-Nyquist mismatch: zeta grid carries the
        # true frequency; quadratic sample corresponds to y as built above
        origin_phase = np.exp(1j * np.sum(yv[sel] * np.asarray(grid.origin), axis=-1))
        # consistency of the slice frequency with the node frequency
        if np.max(np.abs(zc - yv[sel, k])) > 1e-9 * max(np.max(np.abs(zeta)), 1.0):
            raise ValueError("slice axis of the family does not match the grid axis")
        c = np.sum(xi[sel] * b1[sel], axis=-1)
        s = np.sum(xi[sel] * b2[sel], axis=-1)
        rows_M[sel, k, 0] = c * c
        rows_M[sel, k, 1] = s * s
        rows_M[sel, k, 2] = 2.0 * c * s
        rows_Q[sel, k] = vals * origin_phase / (grid.cell_volume() * wtri[sel])
        rows_ok[sel, k] = True

    # per-node regularized least squares on the 2-form coefficients
    MtM = np.einsum("nri,nrj->nij", rows_M, rows_M)
    MtQ = np.einsum("nri,nr->ni", rows_M, rows_Q)
    tr = np.trace(MtM, axis1=-2, axis2=-1)
    eps = floor * np.maximum(tr, 1.0)
    A = np.linalg.solve(MtM + eps[:, None, None] * np.eye(3), MtQ[..., None])[..., 0]

    # nodes on a coordinate plane are structurally rank-deficient: there two
    # of the three measuring directions coincide, so the cross term of the
    # 2-form is not measured.  Detect via the node spectrum and recover the
    # weak component from the compact support of the field.
    ev, evec = np.linalg.eigh(MtM)
    weak = ev[:, 0] <= ev[:, 2] / cond_limit

    def assemble(Acoef):
        mats = (
            Acoef[:, 0, None, None] * b1[:, :, None] * b1[:, None, :]
            + Acoef[:, 1, None, None] * b2[:, :, None] * b2[:, None, :]
            + Acoef[:, 2, None, None]
            * (b1[:, :, None] * b2[:, None, :] + b2[:, :, None] * b1[:, None, :])
        )
        spec6 = np.zeros(shape + (6,), dtype=complex)
        spec6[active] = matrix_to_sym(mats)
        return spec6

    spec6 = assemble(A)
    zerocomp = np.abs(yv) < 1e-12
    nzero = np.sum(zerocomp, axis=-1)
    stray = float(np.mean(weak & (nzero == 0)))
    if stray > 0.01:
        raise RuntimeError(
            f"insufficient angular sampling: {100 * stray:.1f}% of generic "
            "nodes are rank-deficient"
        )
    u = evec[:, :, 0]

    def apply_fill(sel, est6):
        # replace only the unmeasured combination at the selected nodes with
        # the estimate projected onto the local 2-form coordinates
        nbm = sym_to_matrix(est6)
        nbA = np.stack(
            [
                np.einsum("ni,nij,nj->n", b1[sel], nbm, b1[sel]),
                np.einsum("ni,nij,nj->n", b2[sel], nbm, b2[sel]),
                np.einsum("ni,nij,nj->n", b1[sel], nbm, b2[sel]),
            ],
            axis=-1,
        )
        corr = np.einsum("nc,nc->n", nbA - A[sel], u[sel])
        A[sel] += corr[:, None] * u[sel]

    if np.any(weak & (nzero >= 1)):
        axes_x = [np.asarray(ax) for ax in grid.axes()]
        wfill = [
            _support_fill_weights(axes_x[a], grid.domain.radius) for a in range(3)
        ]

        def line_estimate(sp6, a):
            # estimates over the y_a = 0 plane via the support constraint
            return np.tensordot(wfill[a], np.moveaxis(sp6, a, 0), axes=(0, 0))

        # plane nodes first: their fill lines traverse only full-rank nodes
        for a in range(3):
            sel = np.flatnonzero(weak & (nzero == 1) & zerocomp[:, a])
            if len(sel) == 0:
                continue
            est = line_estimate(spec6, a)
            rest = [idx[sel, b] for b in range(3) if b != a]
            apply_fill(sel, est[rest[0], rest[1]])
        spec6 = assemble(A)
        # axis nodes next, averaging both transverse lines of filled planes
        axis_sel = np.flatnonzero(weak & (nzero == 2))
        if len(axis_sel):
            est6 = np.zeros((len(axis_sel), 6), dtype=complex)
            for a in range(3):
                sub = zerocomp[axis_sel, a]
                if not np.any(sub):
                    continue
                tsel = axis_sel[sub]
                est = line_estimate(spec6, a)
                rest = [idx[tsel, b] for b in range(3) if b != a]
                est6[sub] += est[rest[0], rest[1]]
            est6 /= 2.0
            apply_fill(axis_sel, est6)
            spec6 = assemble(A)

    m = SymField2(grid, _padded_ifft(spec6, grid, True))
    return solenoidal_project(m)


def detangle_trace(m: SymField2, a, floor=1e-8) -> SymField2:
    """Split f from m = S(f + a (tr f) g) for solenoidal f.

    In the Fourier domain m_hat = f_hat + a (tr f_hat) eps with tr eps = 2,
    so tr f_hat = tr m_hat / (1 + 2a).
    """
    if abs(1.0 + 2.0 * a) < floor:
        raise NonUniqueError(
            "1 + 2a vanishes: the data are blind to the S(alpha g) family"
        )
    spec = _padded_fft(m.values, m.grid)
    eps = tangential_projector(*_wavevectors(m.grid))
    eps6 = matrix_to_sym(eps)
    trm = spec[..., 0] + spec[..., 1] + spec[..., 2]
    trf = trm / (1.0 + 2.0 * a)
    f = spec - a * trf[..., None] * eps6
    return SymField2(m.grid, _padded_ifft(f, m.grid, True))


def pwave_pipeline(data, params, grid: Grid3, refine=1):
    """Compressional reconstruction: invert I, detangle the trace, rescale."""
    t0 = time.time()
    w = pwave_weights(params)
    report = ReconReport(
        config={"pipeline": "pwave", "a": w.a, "scale": w.scale, "refine": refine}
    )
    m = invert_I_solenoidal(data, grid, refine=refine)
    report.timing["invert_I"] = time.time() - t0
    t1 = time.time()
    f = detangle_trace(m, w.a)
    R = SymField2(grid, f.values * w.b)
    report.timing["detangle"] = time.time() - t1
    rn = R.norm()
    dn = divergence(R).norm()
    diam = 2.0 * grid.domain.radius
    report.stages["m_norm"] = m.norm()
    report.stages["R_norm"] = rn
    report.errors["divergence_residual"] = dn * diam / max(rn, 1e-300)
    report.timing["total"] = time.time() - t0
    return R, report


# ---------------------------------------------------------------------------
# trace-free K inversion


_DEV_BASIS = np.array(
    [
        [1.0 / np.sqrt(2.0), -1.0 / np.sqrt(2.0), 0.0, 0.0, 0.0, 0.0],
        [1.0 / np.sqrt(6.0), 1.0 / np.sqrt(6.0), -2.0 / np.sqrt(6.0), 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0 / np.sqrt(2.0), 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0 / np.sqrt(2.0), 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0 / np.sqrt(2.0)],
    ]
)  # orthonormal under the multiplicity-weighted inner product


def _coef_to_sym(x):
    return np.einsum("...c,cs->...s", x, _DEV_BASIS)


def _sym_to_coef(v6):
    return np.einsum("...s,cs->...c", v6 * SYM_MULT, _DEV_BASIS)


def invert_K_tracefree(kdata: Sinogram, grid: Grid3, lam=None, maxiter=500, tol=1e-8):
    """Solve min |K F - kdata|^2 + lam |F|^2 over trace-free symmetric F.

    Conjugate gradient on the normal equations; trace-freeness is enforced
    by working in a 5-component deviatoric basis per node.
    """
    if kdata.kind != "kpair":
        raise ValueError("invert_K_tracefree expects kpair records")
    fam = kdata.family

    def K(x):
        return kdata_transform(SymField2(grid, _coef_to_sym(x)), fam).values

    def Kt(yv):
        return _sym_to_coef(kdata_adjoint(fam, yv, grid).values)

    b = Kt(kdata.values)
    if not np.any(b):
        F = SymField2(grid, np.zeros(grid.dims + (6,)))
        F._cg_info = {"iterations": 0, "lam": 0.0, "residual": 0.0}
        return F
    data_norm = float(np.linalg.norm(kdata.values))
    if lam is None:
        lam = 1e-6 * float(np.linalg.norm(b)) / max(data_norm, 1e-300)
    x = np.zeros(grid.dims + (5,))
    r = b - (Kt(K(x)) + lam * x)
    p = r.copy()
    rs = float(np.sum(r * r))
    b0 = float(np.sum(b * b))
    iters = 0
    for iters in range(1, maxiter + 1):
        Ap = Kt(K(p)) + lam * p
        alpha = rs / float(np.sum(p * Ap))
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(np.sum(r * r))
        if rs_new <= tol**2 * b0:
            rs = rs_new
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    else:
        raise RuntimeError(
            f"normal-equation CG did not converge in {maxiter} iterations "
            f"(residual {np.sqrt(rs / b0):.3e})"
        )
    F = SymField2(grid, _coef_to_sym(x))
    F._cg_info = {"iterations": iters, "lam": lam, "residual": float(np.sqrt(rs / b0))}
    return F


# ---------------------------------------------------------------------------
# scalar trace recovery (filtered backprojection)


def _ramlak_filter(p, offsets):
    """Ramp-filtered projections along the last axis.

    With p-hat the continuous transform of the projections, returns
    (1/(4 pi^2)) integral |nu| p-hat e^{i nu o} dnu sampled back on the
    offset grid; the offset-origin phases of the forward and inverse
    transforms cancel, leaving ifft(fft(p) |nu|) / (2 pi).
    """
    n = p.shape[-1]
    npad = 2 * n
    do = offsets[1] - offsets[0]
    nu = 2.0 * np.pi * np.fft.fftfreq(npad, d=do)
    spec = np.fft.fft(p, n=npad, axis=-1) * np.abs(nu)
    return np.real(np.fft.ifft(spec, axis=-1))[..., :n] / (2.0 * np.pi)


def recover_trace(ldata, Ftilde: SymField2, a, floor=1e-8, eta_tol=1e-6):
    """Trace of F from eta-averaged diagonal shear data and the known
    trace-free part.

    Per ray the two diagonal entries each equal (their F-tilde prediction)
    plus (a + 2/3) times the ray integral of tr F; the average over the two
    polarizations is used, and their disagreement is reported as a data
    consistency warning.  The scalar transform is inverted slice by slice
    with Ram-Lak filtered backprojection on the family orthogonal to the
    third axis; the remaining families serve as consistency checks.
    """
    if abs(a + 2.0 / 3.0) < floor:
        raise NonUniqueError("a + 2/3 vanishes: the trace cannot be recovered")
    grid = Ftilde.grid
    sinos = {s.family.axis: s for s in ldata}
    if 2 not in sinos:
        raise ValueError("trace recovery needs the family orthogonal to axis 3")

    def scalar_rhs(sino):
        fam = sino.family
        L = sino.values
        diag = 0.5 * (L[..., 0, 0] + L[..., 1, 1])
        split = L[..., 0, 0] - L[..., 1, 1]
        pred_diag = np.empty_like(diag)
        pred_split = np.empty_like(diag)
        for m in range(_n_views(fam)):
            pts, d, w, _ = _view_nodes(fam, m)
            vals = trilinear(grid, Ftilde.values, pts)
            e1, e2 = _view_frame(fam, m)
            j11 = np.sum(sym_qform(vals, e1, e1) * w, axis=-1)
            j22 = np.sum(sym_qform(vals, e2, e2) * w, axis=-1)
            ii = np.sum(sym_qform(vals, d, d) * w, axis=-1)
            tt = np.sum((vals[..., 0] + vals[..., 1] + vals[..., 2]) * w, axis=-1)
            pred_diag[m] = 0.5 * (j11 + j22) + ii + a * tt
            pred_split[m] = j11 - j22
        mism = np.max(np.abs(split - pred_split))
        scale = max(np.max(np.abs(diag)), 1e-300)
        if mism > eta_tol * scale:
            warnings.warn(
                f"polarization split disagrees with the trace-free part "
                f"({mism / scale:.2e} relative): inconsistent data",
                stacklevel=2,
            )
        return (diag - pred_diag) / (a + 2.0 / 3.0)

    fam = sinos[2].family
    p = scalar_rhs(sinos[2])  # (angles, offsets, slices)
    q = _ramlak_filter(np.moveaxis(p, 1, 2), fam.offsets)  # (angles, slices, offsets)

    # trig-upsample the filtered projections so the linear interpolation in
    # the backprojection stays below the data discretization error
    up = 4
    n = q.shape[-1]
    spec = np.fft.fft(q, axis=-1)
    pad = np.zeros(q.shape[:-1] + (up * n,), dtype=complex)
    half = n // 2
    pad[..., :half] = spec[..., :half]
    pad[..., -half:] = spec[..., -half:]
    pad[..., half] = 0.5 * spec[..., half]
    pad[..., -half] = 0.5 * spec[..., half]
    q = np.real(np.fft.ifft(pad, axis=-1)) * up
    do = (fam.offsets[1] - fam.offsets[0]) / up
    offs = fam.offsets[0] + do * np.arange(up * n)
    q = np.moveaxis(q, 1, 2)  # back to (angles, offsets, slices)

    ax = grid.axes()
    x1, x2 = np.meshgrid(ax[0], ax[1], indexing="ij")
    out = np.zeros(grid.dims)
    dtheta = np.pi / len(fam.thetas)
    for ai, th in enumerate(fam.thetas):
        # offset coordinate of every in-plane node for this angle
        t = -np.sin(th) * x1 + np.cos(th) * x2
        j = np.searchsorted(offs, t) - 1
        ok = (j >= 0) & (j < len(offs) - 1)
        j = np.clip(j, 0, len(offs) - 2)
        wt = (t - offs[j]) / do
        vals = (1.0 - wt)[..., None] * q[ai, j, :] + wt[..., None] * q[ai, j + 1, :]
        out += np.where(ok[..., None], vals, 0.0) * dtheta
    out *= grid.domain_mask()
    return ScalarField(grid, out)


def swave_pipeline(sinograms, params, grid: Grid3, scale, lam=None, maxiter=500, tol=1e-8):
    """Shear reconstruction from propagator sinograms.

    sinograms: propagator records over one dense-sphere family (feeds the
    trace-free inversion) and three coordinate-plane families (feed the
    scalar trace recovery).  scale is the stress amplitude used when the
    propagators were collected; the result approximates the true R up to
    the quadratic Born remainder.
    """
    t0 = time.time()
    sw = swave_weights(params)
    report = ReconReport(
        config={"pipeline": "swave", "a": sw.a, "scale": scale, "weight": sw.scale}
    )
    sphere = [s for s in sinograms if isinstance(s.family, SphereFamily)]
    planes = [s for s in sinograms if isinstance(s.family, PlaneFamily)]
    if len(sphere) != 1 or len(planes) != 3:
        raise ValueError("expected one sphere-family and three plane-family sinograms")
    drift = max(unitarity_drift(s.values) for s in sinograms)
    report.conditions["unitarity_drift"] = drift

    norm = 1.0 / (scale * sw.scale)
    lred = []
    for s in sinograms:
        br = born_reduce(s)
        lred.append(br.copy_with("lmatrix", br.values * norm))
    lsphere = next(s for s in lred if isinstance(s.family, SphereFamily))
    lplanes = [s for s in lred if isinstance(s.family, PlaneFamily)]

    t1 = time.time()
    kdata = truncated_reduce(lsphere)
    Ft = invert_K_tracefree(kdata, grid, lam=lam, maxiter=maxiter, tol=tol)
    report.stages["cg"] = getattr(Ft, "_cg_info", {})
    report.timing["invert_K"] = time.time() - t1

    t2 = time.time()
    # the split consistency check compares against the *estimated* trace-free
    # part, so its tolerance must sit above the reconstruction error level
    tr_rec = recover_trace(lplanes, Ft, sw.a, eta_tol=0.2)
    report.timing["recover_trace"] = time.time() - t2

    R = SymField2(grid, Ft.values + (tr_rec.values[..., None] / 3.0) * identity_sym(grid).values)
    report.stages["tracefree_norm"] = Ft.norm()
    report.stages["trace_norm"] = tr_rec.norm()
    report.stages["R_norm"] = R.norm()
    report.timing["total"] = time.time() - t0
    return R, report


# ---------------------------------------------------------------------------
# Poincare-type verification


def verify_poincare(v: CovectorField, metric=None, D=None, margin=0.03, tol=1e-6):
    """Ratio |v|^2 / ((D^2/10)(2 |dv|^2 + |delta v|^2)); at most 1.

    v must vanish near the domain boundary; D defaults to the Euclidean
    diameter of the ball domain.
    """
    grid = v.grid
    vmax = float(np.max(np.abs(v.values)))
    if vmax == 0.0:
        return 0.0
    r = np.linalg.norm(grid.coords() - np.asarray(grid.domain.center), axis=-1)
    rim = r > grid.domain.radius * (1.0 - margin)
    if np.max(np.abs(v.values[rim])) > tol * vmax:
        raise ValueError("field does not vanish on the boundary margin")
    if D is None:
        D = 2.0 * grid.domain.radius
    dv = inner_derivative(v)
    spec = _padded_fft(v.values, grid)
    y1, y2, y3 = _wavevectors(grid)
    div_spec = 1j * (y1 * spec[..., 0] + y2 * spec[..., 1] + y3 * spec[..., 2])
    dvv = _padded_ifft(div_spec, grid, True)
    vol = grid.cell_volume()
    nv = float(np.sum(v.values**2)) * vol
    ndv = float(np.sum(SYM_MULT * dv.values**2)) * vol
    ndel = float(np.sum(dvv**2)) * vol
    return nv / ((D**2 / 10.0) * (2.0 * ndv + ndel))
