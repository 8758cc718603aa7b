"""Forward data synthesis for the constant-coefficient pipelines.

Longitudinal, transverse, and truncated-transverse ray transforms of
symmetric 2-tensor fields; the compressional phase data; the shear-wave
polarization propagator (a unitary 2x2 ODE flow in the ray frame) with its
Born reduction to mixed-ray-transform data; and the discrete adjoints used
by iterative inversion.

All family-level operations share one quadrature layout: every chord of a
family carries the same node count, nodes equispaced on [0, L] per ray, and
composite-trapezoid weights, so empty chords (L = 0) contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ScalarField, SymField2
from .geometry import PlaneFamily, Ray, SphereFamily, trilinear
from .material import ConditionError, check_pwave_conditions, pwave_weights, swave_weights

_EYE2 = np.eye(2)


@dataclass
class Sinogram:
    """Per-ray data records for one ray family.

    kind "scalar": values[view, ...offsets] reals; kind "propagator":
    trailing (2, 2) complex matrices; kind "lmatrix": trailing (2, 2) real
    quadratic forms; kind "kpair": trailing (d, o) trace-free pairs.
    """

    family: object
    kind: str
    values: np.ndarray

    def copy_with(self, kind, values):
        return Sinogram(self.family, kind, values)


def sym_qform(vals6, a, b):
    """u_jk a^j b^k from symmetric storage (11,22,33,23,13,12)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return (
        vals6[..., 0] * a[..., 0] * b[..., 0]
        + vals6[..., 1] * a[..., 1] * b[..., 1]
        + vals6[..., 2] * a[..., 2] * b[..., 2]
        + vals6[..., 3] * (a[..., 1] * b[..., 2] + a[..., 2] * b[..., 1])
        + vals6[..., 4] * (a[..., 0] * b[..., 2] + a[..., 2] * b[..., 0])
        + vals6[..., 5] * (a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0])
    )


def sym_outer(a, b):
    """Symmetric storage components of sym(a x b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack(
        [
            a[..., 0] * b[..., 0],
            a[..., 1] * b[..., 1],
            a[..., 2] * b[..., 2],
            0.5 * (a[..., 1] * b[..., 2] + a[..., 2] * b[..., 1]),
            0.5 * (a[..., 0] * b[..., 2] + a[..., 2] * b[..., 0]),
            0.5 * (a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0]),
        ],
        axis=-1,
    )


def _is_family(rays):
    return isinstance(rays, (PlaneFamily, SphereFamily))


def _n_views(family):
    return len(family.thetas) if isinstance(family, PlaneFamily) else len(family.directions)


def _view_frame(family, m):
    if isinstance(family, SphereFamily):
        return family.frame(m)
    return np.stack([family.offset_axis(m), np.eye(3)[family.axis]])


def _view_nodes(family, m, n_nodes=None):
    """Node points, direction, trapezoid weights, and step for one view."""
    starts, d, lengths = family.chords(m)
    n = n_nodes or family.n_nodes
    t = np.linspace(0.0, 1.0, n)
    pts = starts[..., None, :] + (lengths[..., None] * t)[..., None] * d
    dt = lengths / (n - 1)
    w = np.repeat(dt[..., None], n, axis=-1)
    w[..., 0] *= 0.5
    w[..., -1] *= 0.5
    return pts, d, w, dt


def _integrate_family(values, grid, family, integrand):
    """Stack of per-view integrals; integrand(samples, d, frame) -> per-node."""
    out = []
    for m in range(_n_views(family)):
        pts, d, w, _ = _view_nodes(family, m)
        vals = trilinear(grid, values, pts)
        out.append(np.sum(integrand(vals, d, _view_frame(family, m)) * w, axis=-1))
    return np.stack(out)


# ---------------------------------------------------------------------------
# scalar and longitudinal transforms


def ray_integral_scalar(field: ScalarField, ray: Ray):
    """Trapezoid quadrature of an interpolated scalar along one ray."""
    if len(ray.tau) == 0:
        raise ValueError("empty ray")
    if len(ray.tau) < 2:
        return 0.0
    vals = trilinear(field.grid, field.values, ray.points)
    return float(np.trapezoid(vals, ray.tau))


def scalar_transform(field: ScalarField, family) -> Sinogram:
    """Per-ray integrals of a scalar over a whole family."""
    vals = _integrate_family(
        field.values[..., None], field.grid, family, lambda v, d, f: v[..., 0]
    )
    return Sinogram(family, "scalar", vals)


def longitudinal_transform(u: SymField2, rays):
    """I(u): per ray the integral of u_jk tangent^j tangent^k.

    rays may be a family (vectorized), a list of families, or an iterable
    of Ray objects.
    """
    if isinstance(rays, (list, tuple)) and rays and _is_family(rays[0]):
        return [longitudinal_transform(u, fam) for fam in rays]
    if _is_family(rays):
        vals = _integrate_family(
            u.values, u.grid, rays, lambda v, d, f: sym_qform(v, d, d)
        )
        return Sinogram(rays, "scalar", vals)
    out = []
    for ray in rays:
        v = trilinear(u.grid, u.values, ray.points)
        out.append(np.trapezoid(sym_qform(v, ray.tangents, ray.tangents), ray.tau))
    return Sinogram(None, "scalar", np.asarray(out))


def transverse_transform(F: SymField2, ray: Ray, eta):
    """J(F)(ray, eta): the integral of F_jk eta^j eta^k for eta in the
    tangent-orthogonal plane."""
    eta = np.asarray(eta, dtype=float)
    if np.max(np.abs(ray.tangents @ eta)) > 1e-8 * np.linalg.norm(eta):
        raise ValueError("eta must be orthogonal to the ray tangent")
    vals = trilinear(F.grid, F.values, ray.points)
    return float(np.trapezoid(sym_qform(vals, eta, eta), ray.tau))


def pwave_data(R: SymField2, params, rays):
    """Compressional phase data D per ray.

    D = integral of scale * (R_tt + a * tr R) with the constant-coefficient
    weights; equals I(f + a (tr f) g) for f = scale * R.
    """
    rep = check_pwave_conditions(params)
    for key in ("weight_sum", "leading_weight"):
        if not rep.passed[key]:
            raise ConditionError(f"material condition {key} fails: {rep.values[key]:.3g}")
    w = pwave_weights(params)
    if not params.constants_mode:
        raise NotImplementedError("geodesic compressional data needs constant coefficients here")

    def integrand(v, d, f):
        return w.scale * (sym_qform(v, d, d) + w.a * (v[..., 0] + v[..., 1] + v[..., 2]))

    if isinstance(rays, (list, tuple)) and rays and _is_family(rays[0]):
        return [
            Sinogram(fam, "scalar", _integrate_family(R.values, R.grid, fam, integrand))
            for fam in rays
        ]
    if _is_family(rays):
        return Sinogram(rays, "scalar", _integrate_family(R.values, R.grid, rays, integrand))
    out = []
    for ray in rays:
        v = trilinear(R.grid, R.values, ray.points)
        out.append(np.trapezoid(integrand(v, ray.tangents, None), ray.tau))
    return Sinogram(None, "scalar", np.asarray(out))


# ---------------------------------------------------------------------------
# shear-wave propagator


def _frame_generator(vals6, d, frame, s_scale, a):
    """2x2 polarization generator G in the ray frame.

    G_ab = s * (R(e_a, e_b) + delta_ab (R_dd + a tr R)) where s and a are
    the shear weights; the ODE matrix is -i G.
    """
    e1, e2 = frame
    g11 = sym_qform(vals6, e1, e1)
    g22 = sym_qform(vals6, e2, e2)
    g12 = sym_qform(vals6, e1, e2)
    diag = sym_qform(vals6, d, d) + a * (vals6[..., 0] + vals6[..., 1] + vals6[..., 2])
    G = np.empty(vals6.shape[:-1] + (2, 2))
    G[..., 0, 0] = s_scale * (g11 + diag)
    G[..., 1, 1] = s_scale * (g22 + diag)
    G[..., 0, 1] = s_scale * g12
    G[..., 1, 0] = s_scale * g12
    return G


def _flow(G, dt):
    """RK4 flow of U' = -i G(tau) U over the node sequence (last axis -3 of G).

    G has shape (..., n, 2, 2); dt (...,) is the per-ray step.  Midpoint
    generators are averaged from the nodes, which keeps the scheme exact
    for constant G.
    """
    n = G.shape[-3]
    U = np.zeros(G.shape[:-3] + (2, 2), dtype=complex)
    U[..., 0, 0] = 1.0
    U[..., 1, 1] = 1.0
    h = dt[..., None, None]

    def mul(A, B):
        return np.einsum("...ab,...bc->...ac", A, B)

    for i in range(n - 1):
        A1 = -1j * G[..., i, :, :]
        A2 = -1j * G[..., i + 1, :, :]
        Am = 0.5 * (A1 + A2)
        k1 = mul(A1, U)
        k2 = mul(Am, U + 0.5 * h * k1)
        k3 = mul(Am, U + 0.5 * h * k2)
        k4 = mul(A2, U + h * k3)
        U = U + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return U


def unitarity_drift(U):
    return float(np.max(np.abs(np.einsum("...ba,...bc->...ac", np.conj(U), U) - _EYE2)))


def _midpoint_refine(pts, tans, tau, frames):
    """Insert linear midpoints between consecutive nodes."""
    idx = range(1, len(tau))
    return (
        np.insert(pts, idx, 0.5 * (pts[:-1] + pts[1:]), axis=0),
        np.insert(tans, idx, 0.5 * (tans[:-1] + tans[1:]), axis=0),
        np.insert(tau, idx, 0.5 * (tau[:-1] + tau[1:])),
        np.insert(frames, idx, 0.5 * (frames[:-1] + frames[1:]), axis=0),
    )


def rytov_propagate(R: SymField2, params, ray: Ray, scale=1.0, tol=1e-8):
    """Propagator U of the polarization ODE along one ray.

    Integrates dU/dtau = -i G U in the parallel frame with classic RK4;
    halves the step (up to 3 times) if the unitarity drift of U exceeds
    tol.  scale multiplies the stress (Born-regime studies).
    """
    if ray.frames is None:
        raise ValueError("ray frame not populated")
    sw = swave_weights(params)
    pts, tans, tau, frames = ray.points, ray.tangents, ray.tau, ray.frames
    for _ in range(4):
        vals = trilinear(R.grid, scale * R.values, pts)
        d = tans / np.linalg.norm(tans, axis=-1, keepdims=True)
        U = np.eye(2, dtype=complex)
        for i in range(len(tau) - 1):
            G = np.stack(
                [
                    _frame_generator(vals[j], d[j], frames[j], sw.scale, sw.a)
                    for j in (i, i + 1)
                ]
            )
            h = tau[i + 1] - tau[i]
            U = _flow(G[None], np.array([h]))[0] @ U
        if unitarity_drift(U[None]) <= tol:
            return U
        pts, tans, tau, frames = _midpoint_refine(pts, tans, tau, frames)
    raise RuntimeError("unitarity drift persists after step refinement")


def rytov_family(R: SymField2, params, family, scale=1.0, tol=1e-8) -> Sinogram:
    """Propagators for every chord of a family, vectorized per view."""
    sw = swave_weights(params)
    n = family.n_nodes
    for _ in range(4):
        views = []
        drift = 0.0
        for m in range(_n_views(family)):
            pts, d, _, dt = _view_nodes(family, m, n_nodes=n)
            vals = trilinear(R.grid, scale * R.values, pts)
            G = _frame_generator(vals, d, _view_frame(family, m), sw.scale, sw.a)
            U = _flow(G, dt)
            drift = max(drift, unitarity_drift(U))
            views.append(U)
        if drift <= tol:
            out = Sinogram(family, "propagator", np.stack(views))
            out.drift = drift
            return out
        n = 2 * n - 1
    raise RuntimeError("unitarity drift persists after step refinement")


def born_reduce(sino: Sinogram) -> Sinogram:
    """Born-linearized quadratic-form data from propagators.

    Re[i(U - E)] symmetrized equals the mixed-transform matrix up to a
    remainder quadratic in the stress scale.
    """
    if sino.kind != "propagator":
        raise ValueError("born_reduce expects propagator records")
    B = -np.imag(sino.values)  # Re(i (U - E))
    L = 0.5 * (B + np.swapaxes(B, -1, -2))
    return sino.copy_with("lmatrix", L)


def mixed_transform(R: SymField2, params, family, scale=1.0) -> Sinogram:
    """Direct quadrature of the mixed ray transform: per ray the 2x2 form
    with entries integral of G_ab (the Born limit of the propagator data)."""
    sw = swave_weights(params)

    def integrand(v, d, f):
        return np.moveaxis(_frame_generator(v, d, f, sw.scale, sw.a), (-2, -1), (0, 1))

    out = []
    for m in range(_n_views(family)):
        pts, d, w, _ = _view_nodes(family, m)
        vals = trilinear(R.grid, scale * R.values, pts)
        G = _frame_generator(vals, d, _view_frame(family, m), sw.scale, sw.a)
        out.append(np.sum(G * w[..., None, None], axis=-3))
    return Sinogram(family, "lmatrix", np.stack(out))


def truncated_reduce(lm: Sinogram) -> Sinogram:
    """Trace-free (d, o) pairs of the L-matrix data.

    D(gamma, eta) = L(gamma, eta) - |eta|^2/2 (L(gamma, e1) + L(gamma, e2))
    as a quadratic form is L minus half its trace times the identity; the
    pair (d, o) = ((L11 - L22)/2, (L12 + L21)/2) represents it in the
    frame basis and rotates as a spin-2 object under frame rotations.
    """
    if lm.kind != "lmatrix":
        raise ValueError("truncated_reduce expects lmatrix records")
    L = lm.values
    d = 0.5 * (L[..., 0, 0] - L[..., 1, 1])
    o = 0.5 * (L[..., 0, 1] + L[..., 1, 0])
    return lm.copy_with("kpair", np.stack([d, o], axis=-1))


# ---------------------------------------------------------------------------
# direct K transform and adjoints


def kdata_transform(F: SymField2, family) -> Sinogram:
    """K(F): the truncated transverse transform straight from a field.

    Per ray, d = integral of F : (e1 e1 - e2 e2)/2 and o = integral of
    F : sym(e1 x e2).
    """
    out = []
    for m in range(_n_views(family)):
        pts, d, w, _ = _view_nodes(family, m)
        vals = trilinear(F.grid, F.values, pts)
        e1, e2 = _view_frame(family, m)
        f11 = sym_qform(vals, e1, e1)
        f22 = sym_qform(vals, e2, e2)
        f12 = sym_qform(vals, e1, e2)
        dd = np.sum(0.5 * (f11 - f22) * w, axis=-1)
        oo = np.sum(f12 * w, axis=-1)
        out.append(np.stack([dd, oo], axis=-1))
    return Sinogram(family, "kpair", np.stack(out))


def _scatter(grid, out, pts, contrib):
    """Trilinear scatter (transpose of the gather used by trilinear)."""
    p = pts.reshape(-1, 3)
    c = contrib.reshape(-1, contrib.shape[-1])
    u = (p - np.asarray(grid.origin)) / np.asarray(grid.spacing)
    top = np.asarray(grid.dims) - 1
    inside = np.all((u >= 0.0) & (u <= top), axis=-1)
    u = np.clip(u[inside], 0.0, top)
    c = c[inside]
    i0 = np.minimum(u.astype(int), top - 1)
    frac = u - i0
    dims = grid.dims
    ncomp = c.shape[-1]
    flat = out.reshape(-1, ncomp)
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                idx = ((i0[:, 0] + dx) * dims[1] + (i0[:, 1] + dy)) * dims[2] + (
                    i0[:, 2] + dz
                )
                w = wx * wy * wz
                for comp in range(ncomp):
                    flat[:, comp] += np.bincount(
                        idx, weights=w * c[:, comp], minlength=flat.shape[0]
                    )


def longitudinal_adjoint(family, values, grid) -> SymField2:
    """I*: backprojection of scalar ray data onto tangent dyads.

    Adjoint of longitudinal_transform with respect to the plain sum over
    rays and the L2 field inner product (cell-volume weighted).
    """
    out = np.zeros(grid.dims + (6,))
    for m in range(_n_views(family)):
        pts, d, w, _ = _view_nodes(family, m)
        dyad = sym_outer(d, d)
        contrib = (values[m][..., None] * w)[..., None] * dyad
        _scatter(grid, out, pts, contrib)
    return SymField2(grid, out / grid.cell_volume())


def kdata_adjoint(family, values, grid) -> SymField2:
    """K*: backprojection of (d, o) pairs onto the frame's trace-free dyads."""
    out = np.zeros(grid.dims + (6,))
    for m in range(_n_views(family)):
        pts, _, w, _ = _view_nodes(family, m)
        e1, e2 = _view_frame(family, m)
        Td = 0.5 * (sym_outer(e1, e1) - sym_outer(e2, e2))
        To = sym_outer(e1, e2)
        s = values[m]
        contrib = (s[..., 0, None] * w)[..., None] * Td + (s[..., 1, None] * w)[..., None] * To
        _scatter(grid, out, pts, contrib)
    return SymField2(grid, out / grid.cell_volume())


def add_noise(sino: Sinogram, level, rng) -> Sinogram:
    """Additive Gaussian noise scaled to the rms of the stored values."""
    v = sino.values
    sigma = level * float(np.sqrt(np.mean(np.abs(v) ** 2)))
    return sino.copy_with(sino.kind, v + sigma * rng.standard_normal(v.shape))
