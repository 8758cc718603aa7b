"""Uniform-grid tensor fields and spectral tensor calculus.

Symmetric rank-2 fields are stored with 6 components per node in the
order (11, 22, 33, 23, 13, 12).  All differential operators work either
spectrally (the default) or with centered differences.
Fields that represent objects extended by zero outside the domain are
expected to vanish on nodes outside it; generators below guarantee that.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# component order of symmetric storage: pairs (j,k) for each slot
SYM_PAIRS = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
# slot index for a full (j,k) pair
SYM_SLOT = {(j, k): s for s, (j, k) in enumerate(SYM_PAIRS)}
SYM_SLOT.update({(k, j): s for s, (j, k) in enumerate(SYM_PAIRS)})
# multiplicity of each slot in a full double contraction
SYM_MULT = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


@dataclass(frozen=True)
class Domain:
    """Region descriptor: the whole grid box or a ball strictly inside it."""

    kind: str = "box"  # "box" | "ball"
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            return np.ones(x.shape[:-1], dtype=bool)
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return r2 <= self.radius**2


@dataclass(frozen=True)
class Grid3:
    dims: tuple  # nodes per axis
    spacing: tuple  # grid step per axis
    origin: tuple  # coordinate of node (0,0,0)
    domain: Domain = field(default_factory=Domain)

    def __post_init__(self):
        if any(n < 8 for n in self.dims):
            raise ValueError("need at least 8 nodes per axis")
        if any(h <= 0 for h in self.spacing):
            raise ValueError("spacing must be positive")
        if self.domain.kind == "ball":
            lo, hi = self.box()
            c = np.asarray(self.domain.center)
            if np.any(c - self.domain.radius < lo) or np.any(c + self.domain.radius > hi):
                raise ValueError("ball domain must lie inside the grid box")

    @classmethod
    def cube(cls, n, halfwidth=1.2, ball_radius=1.0, center=(0.0, 0.0, 0.0)):
        """Cubic grid on [-halfwidth, halfwidth]^3 with a centered ball domain."""
        h = 2.0 * halfwidth / n
        origin = tuple(c - halfwidth + 0.5 * h for c in center)  # cell-centered nodes
        dom = Domain("ball", center, ball_radius) if ball_radius else Domain("box")
        return cls((n, n, n), (h, h, h), origin, dom)

    def axes(self):
        return [self.origin[i] + self.spacing[i] * np.arange(self.dims[i]) for i in range(3)]

    def coords(self):
        """(n1,n2,n3,3) array of node coordinates."""
        ax = self.axes()
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)

    def box(self):
        lo = np.asarray(self.origin)
        hi = lo + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)
        return lo, hi

    def domain_mask(self):
        return self.domain.contains(self.coords())

    def cell_volume(self):
        return float(np.prod(self.spacing))

    def freqs(self, pad=1):
        """Angular frequency arrays per axis for a pad-times-enlarged grid."""
        return [
            2.0 * np.pi * np.fft.fftfreq(pad * self.dims[i], d=self.spacing[i])
            for i in range(3)
        ]


@dataclass
class ScalarField:
    grid: Grid3
    values: np.ndarray  # (n1,n2,n3)

    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume()))


@dataclass
class CovectorField:
    grid: Grid3
    values: np.ndarray  # (n1,n2,n3,3)

    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume()))


@dataclass
class SymField2:
    grid: Grid3
    values: np.ndarray  # (n1,n2,n3,6), order (11,22,33,23,13,12)

    def norm(self):
        """L2 norm accounting for off-diagonal multiplicity."""
        w = np.sum(SYM_MULT * np.abs(self.values) ** 2, axis=-1)
        return float(np.sqrt(np.sum(w) * self.grid.cell_volume()))

    def max_abs(self):
        return float(np.max(np.abs(self.values)))


@dataclass
class FourierSymField2:
    """Fourier transform of a SymField2 on the unpadded frequency grid."""

    grid: Grid3
    values: np.ndarray  # complex (n1,n2,n3,6)


def sym_to_matrix(values):
    """(...,6) -> (...,3,3)."""
    m = np.empty(values.shape[:-1] + (3, 3), dtype=values.dtype)
    for s, (j, k) in enumerate(SYM_PAIRS):
        m[..., j, k] = values[..., s]
        m[..., k, j] = values[..., s]
    return m


def matrix_to_sym(m):
    """(...,3,3) -> (...,6); symmetrizes the input."""
    out = np.empty(m.shape[:-2] + (6,), dtype=m.dtype)
    for s, (j, k) in enumerate(SYM_PAIRS):
        out[..., s] = 0.5 * (m[..., j, k] + m[..., k, j])
    return out


def sym_inner(u: SymField2, w: SymField2):
    """L2 inner product of two symmetric fields."""
    prod = np.sum(SYM_MULT * u.values * np.conj(w.values), axis=-1)
    return float(np.real(np.sum(prod))) * u.grid.cell_volume()


def identity_sym(grid, scale=1.0):
    vals = np.zeros(grid.dims + (6,))
    vals[..., :3] = scale
    return SymField2(grid, vals)


def spectral_upsample(field, factor):
    """Resample a field onto a factor-times finer grid by trig interpolation.

    Exact for the band-limited representation the grid already carries, so
    downstream trilinear sampling sees a denser, smoother field.  Returns a
    field of the same type on the refined grid.
    """
    if factor == 1:
        return field
    grid = field.grid
    dims = np.asarray(grid.dims)
    fine = Grid3(
        tuple(int(n) for n in dims * factor),
        tuple(h / factor for h in grid.spacing),
        grid.origin,
        grid.domain,
    )
    vals = field.values
    scalar = vals.ndim == 3
    comps = vals[..., None] if scalar else vals
    out = np.empty(fine.dims + comps.shape[3:])
    pad = [((factor - 1) * n // 2, (factor - 1) * n - (factor - 1) * n // 2) for n in dims]
    for c in range(comps.shape[-1]):
        spec = np.fft.fftshift(np.fft.fftn(comps[..., c]))
        spec = np.pad(spec, pad)
        out[..., c] = np.fft.ifftn(np.fft.ifftshift(spec)).real * factor**3
    return type(field)(fine, out[..., 0] if scalar else out)


# ---------------------------------------------------------------------------
# spectral machinery
#
# All spectral operators (d, delta, S, inc) share one periodic Fourier space.
# That makes the projector algebra exact: S is idempotent, S annihilates dv,
# and delta(S u) vanishes, all to roundoff.  Zero-padding would break these
# identities at the crop boundary; since every field handled here is
# compactly supported strictly inside the grid box, wraparound only enters
# at the aliasing level and padding is unnecessary.

PAD = 1


def _padded_fft(values, grid):
    n = grid.dims
    shape = tuple(PAD * d for d in n) + values.shape[3:]
    buf = np.zeros(shape, dtype=complex)
    buf[: n[0], : n[1], : n[2], ...] = values
    return np.fft.fftn(buf, axes=(0, 1, 2))


def _padded_ifft(spec, grid, real_output):
    n = grid.dims
    out = np.fft.ifftn(spec, axes=(0, 1, 2))[: n[0], : n[1], : n[2], ...]
    return np.real(out) if real_output else out


def _wavevectors(grid):
    """Meshed frequency arrays with the Nyquist planes zeroed.

    For even axis lengths the Nyquist frequency has no negative partner, so
    odd-order spectral operators built from it break Hermitian symmetry.
    Zeroing it keeps every operator below exact on real fields; the dropped
    content is at the aliasing level for resolved fields.
    """
    ks = []
    for i in range(3):
        k = 2.0 * np.pi * np.fft.fftfreq(PAD * grid.dims[i], d=grid.spacing[i])
        n = PAD * grid.dims[i]
        if n % 2 == 0:
            k[n // 2] = 0.0
        ks.append(k)
    return np.meshgrid(*ks, indexing="ij")


def _nyquist_mask(grid):
    """Boolean mask of frequency nodes lying on any Nyquist plane."""
    masks = []
    for i in range(3):
        n = PAD * grid.dims[i]
        m = np.zeros(n, dtype=bool)
        if n % 2 == 0:
            m[n // 2] = True
        masks.append(m)
    m1, m2, m3 = np.meshgrid(*masks, indexing="ij")
    return m1 | m2 | m3


def spectral_gradient(f: ScalarField) -> CovectorField:
    spec = _padded_fft(f.values, f.grid)
    ks = _wavevectors(f.grid)
    grad = np.stack([_padded_ifft(1j * k * spec, f.grid, np.isrealobj(f.values)) for k in ks], axis=-1)
    return CovectorField(f.grid, grad)


def _gradient_nd(values, grid, backend):
    """Per-component partials: (...,C) -> (...,C,3)."""
    if backend == "centered":
        parts = [np.gradient(values, grid.spacing[i], axis=i) for i in range(3)]
        return np.stack(parts, axis=-1)
    spec = _padded_fft(values, grid)
    ks = _wavevectors(grid)
    real = np.isrealobj(values)
    cols = []
    for i in range(3):
        ki = ks[i].reshape(ks[i].shape + (1,) * (values.ndim - 3))
        cols.append(_padded_ifft(1j * ki * spec, grid, real))
    return np.stack(cols, axis=-1)


def inner_derivative(v: CovectorField, backend="spectral") -> SymField2:
    """Symmetrized derivative (dv)_jk = (d_j v_k + d_k v_j) / 2."""
    dv = _gradient_nd(v.values, v.grid, backend)  # (...,k,j) = d_j v_k
    out = np.empty(v.grid.dims + (6,), dtype=dv.dtype)
    for s, (j, k) in enumerate(SYM_PAIRS):
        out[..., s] = 0.5 * (dv[..., k, j] + dv[..., j, k])
    return SymField2(v.grid, out)


def divergence(u: SymField2, speed=None, backend="spectral") -> CovectorField:
    """Divergence (delta u)_j = d_k u_jk; covariant w.r.t. h = speed^-2 g if given."""
    du = _gradient_nd(u.values, u.grid, backend)  # (...,s,i) = d_i u_s
    out = np.empty(u.grid.dims + (3,), dtype=du.dtype)
    for j in range(3):
        out[..., j] = sum(du[..., SYM_SLOT[(j, k)], k] for k in range(3))
    if speed is None:
        return CovectorField(u.grid, out)
    if speed.values.shape != u.grid.dims:
        raise ValueError("conformal factor must live on the same grid")
    # (delta_h u)_j = v^2 [ (delta_E u)_j + (d_j ln v) tr_E u - (u . grad ln v)_j ]
    logv = ScalarField(u.grid, np.log(speed.values))
    glv = spectral_gradient(logv).values if backend == "spectral" else _gradient_nd(
        logv.values, u.grid, "centered"
    )
    tr = trace(u).values
    um = sym_to_matrix(u.values)
    out = out + glv * tr[..., None] - np.einsum("...jk,...k->...j", um, glv)
    return CovectorField(u.grid, speed.values[..., None] ** 2 * out)


def trace(u: SymField2, speed=None) -> ScalarField:
    """Euclidean trace, or the h-trace v^2 tr_E u for the conformal metric."""
    tr = u.values[..., 0] + u.values[..., 1] + u.values[..., 2]
    if speed is not None:
        v = speed.values if isinstance(speed, ScalarField) else speed
        tr = tr * np.asarray(v) ** 2
    return ScalarField(u.grid, tr)


def tangential_projector(y1, y2, y3):
    """eps_jk(y) = delta_jk - y_j y_k / |y|^2 on a frequency grid; zero row at y=0."""
    y = np.stack(np.broadcast_arrays(y1, y2, y3), axis=-1)
    n2 = np.sum(y * y, axis=-1)
    safe = np.where(n2 == 0.0, 1.0, n2)
    eps = -y[..., :, None] * y[..., None, :] / safe[..., None, None]
    for j in range(3):
        eps[..., j, j] += 1.0
    # enforce tr eps = 2 exactly (floating-point sum of y_j^2/|y|^2 drifts off 1)
    eps[..., 2, 2] = 2.0 - (eps[..., 0, 0] + eps[..., 1, 1])
    eps[n2 == 0.0] = 0.0
    return eps


def solenoidal_project(u: SymField2) -> SymField2:
    """Solenoidal part S(u): Fourier-domain projection P uhat P, P = I - y y^T/|y|^2.

    The y = 0 node is set to zero: compactly supported solenoidal fields
    have vanishing componentwise integral, so no information is lost.
    """
    if np.iscomplexobj(u.values):
        raise ValueError("solenoidal_project expects a real field")
    spec = _padded_fft(u.values, u.grid)
    spec[_nyquist_mask(u.grid)] = 0.0
    eps = tangential_projector(*_wavevectors(u.grid))
    mat = sym_to_matrix(spec)
    proj = np.einsum("...jp,...pq,...kq->...jk", eps, mat, eps)
    return SymField2(u.grid, _padded_ifft(matrix_to_sym(proj), u.grid, True))


_LEVI = np.zeros((3, 3, 3))
for _p in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    _LEVI[_p] = 1.0
for _p in [(0, 2, 1), (2, 1, 0), (1, 0, 2)]:
    _LEVI[_p] = -1.0


def support_margin(values, grid, margin):
    """Largest absolute value on nodes within `margin` of the ball boundary (or outside)."""
    if grid.domain.kind != "ball":
        return 0.0
    r = np.linalg.norm(grid.coords() - np.asarray(grid.domain.center), axis=-1)
    shell = r >= grid.domain.radius - margin
    comp = np.abs(values).reshape(values.shape[:3] + (-1,)).max(axis=-1)
    return float(comp[shell].max()) if shell.any() else 0.0


def inc_potential(a: SymField2, margin=None) -> SymField2:
    """Incompatibility R_jk = eps_jpq eps_krs d_p d_r A_qs of a symmetric potential.

    The output is symmetric and spectrally divergence-free; if A vanishes
    near the boundary so does R, which makes R traction-free.
    """
    grid = a.grid
    if margin is None:
        margin = 2.0 * max(grid.spacing)
    if grid.domain.kind == "ball":
        edge = support_margin(a.values, grid, margin)
        if edge > 1e-8 * (a.max_abs() or 1.0):
            raise ValueError("potential must vanish within the boundary margin")
    spec = sym_to_matrix(_padded_fft(a.values, grid))
    ks = _wavevectors(grid)
    y = np.stack(np.broadcast_arrays(*ks), axis=-1)
    # R_hat_jk = - eps_jpq eps_krs y_p y_r A_hat_qs
    rhat = -np.einsum("jpq,krs,...p,...r,...qs->...jk", _LEVI, _LEVI, y, y, spec, optimize=True)
    return SymField2(grid, _padded_ifft(matrix_to_sym(rhat), grid, True))


# ---------------------------------------------------------------------------
# unpadded Fourier transform with absolute-position phases (used by inversion)


def analyze_sym(u: SymField2) -> FourierSymField2:
    """Continuous-convention transform uhat(y) = sum u(x) e^{-i y.x} dV on the grid frequencies."""
    grid = u.grid
    spec = np.fft.fftn(u.values, axes=(0, 1, 2)).astype(complex)
    ks = np.meshgrid(*grid.freqs(), indexing="ij")
    phase = np.exp(-1j * sum(k * x0 for k, x0 in zip(ks, grid.origin)))
    return FourierSymField2(grid, spec * phase[..., None] * grid.cell_volume())


def synthesize_sym(f: FourierSymField2, real_output=True) -> SymField2:
    grid = f.grid
    ks = np.meshgrid(*grid.freqs(), indexing="ij")
    phase = np.exp(1j * sum(k * x0 for k, x0 in zip(ks, grid.origin)))
    spec = f.values * phase[..., None] / grid.cell_volume()
    out = np.fft.ifftn(spec, axes=(0, 1, 2))
    return SymField2(grid, np.real(out) if real_output else out)


# ---------------------------------------------------------------------------
# smooth compactly supported test-field generators


def bump_profile(r2, radius):
    """C-infinity cutoff exp(1 - 1/(1 - r^2/radius^2)), zero outside."""
    q = np.clip(r2 / radius**2, 0.0, 1.0)
    out = np.zeros_like(q)
    inside = q < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - q[inside]))
    return out


def _bump_modulation(grid, rng, radius, degree=2):
    x = grid.coords() / radius
    mod = np.zeros(grid.dims)
    for _ in range(degree + 1):
        c = rng.normal(size=3)
        w = rng.normal()
        mod += w * np.prod(x ** rng.integers(0, degree + 1, size=3), axis=-1) + np.sin(
            x @ c * 2.0
        ) * rng.normal(scale=0.5)
    return mod


def random_bump_scalar(grid, rng, radius=None, degree=2) -> ScalarField:
    radius = radius or 0.75 * grid.domain.radius
    r2 = np.sum((grid.coords() - np.asarray(grid.domain.center)) ** 2, axis=-1)
    chi = bump_profile(r2, radius)
    return ScalarField(grid, chi * _bump_modulation(grid, rng, radius, degree))


def random_bump_covector(grid, rng, radius=None, degree=2) -> CovectorField:
    comps = [random_bump_scalar(grid, rng, radius, degree).values for _ in range(3)]
    return CovectorField(grid, np.stack(comps, axis=-1))


def random_bump_sym(grid, rng, radius=None, degree=2) -> SymField2:
    comps = [random_bump_scalar(grid, rng, radius, degree).values for _ in range(6)]
    return SymField2(grid, np.stack(comps, axis=-1))


def gaussian_envelope(grid, r0=None):
    """Gaussian envelope balancing spectral resolution against support leakage.

    Width w = k_max / (2 r0) makes the truncation error at the grid Nyquist
    equal to the residual value at radius r0; both shrink as the grid refines.
    """
    r0 = r0 or 0.9 * grid.domain.radius
    kmax = np.pi / max(grid.spacing)
    w = kmax / (2.0 * r0)
    r2 = np.sum((grid.coords() - np.asarray(grid.domain.center)) ** 2, axis=-1)
    return np.exp(-w * r2)


def random_smooth_field(grid, rng, ncomp, width=14.0, degree=1):
    """Gaussian-envelope components with low-order polynomial modulation.

    width fixes the envelope decay exp(-width (r/R)^2), so values at the
    domain boundary are ~e^{-width} of the peak: numerically supported yet
    smooth enough for low-order quadrature to resolve.
    """
    R = grid.domain.radius or 1.0
    x = (grid.coords() - np.asarray(grid.domain.center)) / R
    env = np.exp(-width * np.sum(x**2, axis=-1))
    comps = []
    for _ in range(ncomp):
        mod = rng.normal()
        for _ in range(degree):
            mod = mod + x @ rng.normal(size=3)
        comps.append(env * mod)
    return np.stack(comps, axis=-1)


def random_smooth_covector(grid, rng, width=14.0, degree=1) -> CovectorField:
    return CovectorField(grid, random_smooth_field(grid, rng, 3, width, degree))


def random_smooth_sym(grid, rng, width=14.0, degree=1) -> SymField2:
    return SymField2(grid, random_smooth_field(grid, rng, 6, width, degree))


def null_space_witness(grid, rng, width=20.0, radius=0.95) -> SymField2:
    """Solenoidal field S(alpha g) with a compactly supported potential part.

    For generic alpha the potential of S(alpha g) only decays like an
    inverse square, so chord integrals truncated at the domain boundary
    pick up its tail.  Taking alpha as the Laplacian of a compactly
    supported scalar removes the monopole moment: the potential is then a
    gradient of that scalar and vanishes outside its support, which is
    what makes the invisibility of S(alpha g) testable at quadrature
    accuracy.  alpha is normalized to unit sup norm.
    """
    x = grid.coords()
    r2 = np.sum((x - np.asarray(grid.domain.center)) ** 2, axis=-1)
    r2 = r2 / grid.domain.radius**2
    c = rng.normal(size=3)
    beta = np.exp(-width * r2) * (1.0 + x @ c) * bump_profile(r2, radius)
    y1, y2, y3 = _wavevectors(grid)
    alpha = _padded_ifft(
        -(y1**2 + y2**2 + y3**2) * _padded_fft(beta, grid), grid, True
    )
    alpha /= np.max(np.abs(alpha))
    vals = np.zeros(grid.dims + (6,))
    vals[..., :3] = alpha[..., None]
    return solenoidal_project(SymField2(grid, vals))


def random_admissible_potential(grid, rng, r0=None, degree=2) -> SymField2:
    """Smooth symmetric potential suitable for the incompatibility generator."""
    env = gaussian_envelope(grid, r0)
    x = grid.coords() / (r0 or 0.9 * grid.domain.radius)
    comps = []
    for _ in range(6):
        mod = rng.normal()
        for _ in range(degree):
            c = rng.normal(size=3)
            mod = mod + rng.normal() * (x @ c) + rng.normal(scale=0.5) * np.sin(x @ c)
        comps.append(env * mod)
    return SymField2(grid, np.stack(comps, axis=-1))
