"""Ray geometry: straight-line families, geodesics, and parallel transport.

Straight-line families organize parallel-beam chords of the ball domain for
the constant-coefficient pipelines.  Geodesic tracing and parallel transport
serve the conformally Euclidean metric h = v^-2 g used when the wave speed
varies.  All rays are parameterized by arclength of the active metric and
carry a parallel-transported orthonormal frame of the tangent-orthogonal
plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Grid3, ScalarField


class TrappedRayError(RuntimeError):
    """A traced geodesic exhausted its step budget without leaving the domain."""


# ---------------------------------------------------------------------------
# interpolation


def trilinear(grid: Grid3, values, points, mode="zero"):
    """Trilinear interpolation of a node-sampled array at arbitrary points.

    values has shape dims or dims + (m,); points has shape (..., 3).
    mode "zero" treats the field as extended by zero outside the grid box,
    mode "clamp" clamps to the nearest node (for strictly positive metric
    coefficients that must not vanish outside).
    """
    values = np.asarray(values)
    pts = np.asarray(points, dtype=float)
    u = (pts - np.asarray(grid.origin)) / np.asarray(grid.spacing)
    top = np.asarray(grid.dims) - 1
    if mode == "zero":
        outside = np.any((u < 0.0) | (u > top), axis=-1)
        u = np.clip(u, 0.0, top)
    elif mode == "clamp":
        outside = None
        u = np.clip(u, 0.0, top)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    i0 = np.minimum(u.astype(int), top - 1)
    frac = u - i0
    comp_shape = values.shape[3:]
    out = np.zeros(u.shape[:-1] + comp_shape, dtype=values.dtype)
    ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
    fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
    for dx in (0, 1):
        wx = fx if dx else 1.0 - fx
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            for dz in (0, 1):
                wz = fz if dz else 1.0 - fz
                w = wx * wy * wz
                corner = values[ix + dx, iy + dy, iz + dz]
                out += w.reshape(w.shape + (1,) * len(comp_shape)) * corner
    if outside is not None and np.any(outside):
        out[outside] = 0.0
    return out


def _orthobasis(d):
    """Two unit vectors completing a unit direction to an orthonormal triple."""
    d = np.asarray(d, dtype=float)
    axis = np.zeros(3)
    axis[np.argmin(np.abs(d))] = 1.0
    e1 = np.cross(d, axis)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


# ---------------------------------------------------------------------------
# rays


@dataclass
class Ray:
    """A directed segment with quadrature nodes.

    points: (n, 3) node positions; tangents: (n, 3) velocities dx/dtau in
    the active metric (Euclidean norm = speed, so |tangent|_h = 1); tau:
    (n,) arclength parameters; frames: (n, 2, 3) parallel-transported
    tangent-orthogonal basis, h-orthonormal.
    """

    points: np.ndarray
    tangents: np.ndarray
    tau: np.ndarray
    frames: np.ndarray = None
    metric: object = None

    @property
    def length(self):
        return float(self.tau[-1] - self.tau[0]) if len(self.tau) > 1 else 0.0


def line_ray(start, direction, length, step, with_frame=True):
    """Straight Euclidean unit-speed ray from start, uniform quadrature nodes."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    n = max(int(np.ceil(length / step)) + 1, 2)
    tau = np.linspace(0.0, length, n)
    pts = np.asarray(start, dtype=float) + tau[:, None] * d
    tangents = np.broadcast_to(d, (n, 3)).copy()
    frames = None
    if with_frame:
        e1, e2 = _orthobasis(d)
        frames = np.broadcast_to(np.stack([e1, e2]), (n, 2, 3)).copy()
    return Ray(pts, tangents, tau, frames)


def ball_chord(center, radius, point, direction):
    """Entry point and length of the chord of the ball cut by a line.

    The line is point + t * direction (unit direction); returns (entry, L)
    with L = 0 when the line misses the ball.
    """
    p = np.asarray(point, dtype=float) - np.asarray(center, dtype=float)
    d = np.asarray(direction, dtype=float)
    tm = -p @ d
    h2 = radius**2 - (p @ p - tm**2)
    if h2 <= 0.0:
        return np.asarray(point, dtype=float), 0.0
    hl = np.sqrt(h2)
    entry = np.asarray(point, dtype=float) + (tm - hl) * d
    return entry, 2.0 * hl


# ---------------------------------------------------------------------------
# straight-line families


@dataclass
class PlaneFamily:
    """Parallel-beam chords confined to planes x_axis = const.

    Every ray tangent is orthogonal to e_axis.  Per slice, a 2D parallel
    geometry: angles theta_a = a*pi/A over the in-plane basis (u1, u2),
    cell-centered offsets along the rotated axis w = (-sin, cos).
    """

    axis: int
    thetas: np.ndarray
    offsets: np.ndarray
    slices: np.ndarray
    center: np.ndarray
    radius: float
    step: float
    kind: str = field(default="plane", init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        u = np.eye(3)
        self._u1 = u[(self.axis + 1) % 3]
        self._u2 = u[(self.axis + 2) % 3]
        self._ek = u[self.axis]

    @property
    def n_nodes(self):
        return int(np.ceil(2.0 * self.radius / self.step)) + 1

    @property
    def ray_count(self):
        return len(self.thetas) * len(self.offsets) * len(self.slices)

    def direction(self, a):
        t = self.thetas[a]
        return np.cos(t) * self._u1 + np.sin(t) * self._u2

    def offset_axis(self, a):
        t = self.thetas[a]
        return -np.sin(t) * self._u1 + np.cos(t) * self._u2

    def chords(self, a):
        """Start points (O, S, 3) and chord lengths (O, S) for one angle."""
        w = self.offset_axis(a)
        d = self.direction(a)
        dz = self.slices - self.center[self.axis]
        s = self.offsets
        h2 = self.radius**2 - s[:, None] ** 2 - dz[None, :] ** 2
        hl = np.sqrt(np.maximum(h2, 0.0))
        starts = (
            self.center
            + s[:, None, None] * w
            + dz[None, :, None] * self._ek
            - hl[..., None] * d
        )
        return starts, d, 2.0 * hl

    def ray(self, a, o, si):
        entry, length = ball_chord(
            self.center,
            self.radius,
            self.center
            + self.offsets[o] * self.offset_axis(a)
            + (self.slices[si] - self.center[self.axis]) * self._ek,
            self.direction(a),
        )
        return line_ray(entry, self.direction(a), length, self.step)

    def rays(self):
        for a in range(len(self.thetas)):
            for o in range(len(self.offsets)):
                for si in range(len(self.slices)):
                    yield (a, o, si), self.ray(a, o, si)


@dataclass
class SphereFamily:
    """Chords along a dense set of sphere directions, 2D offset grid each.

    Used by the truncated transverse transform: each direction carries a
    fixed orthonormal frame (e1, e2) of its orthogonal plane.
    """

    directions: np.ndarray
    offsets: np.ndarray
    center: np.ndarray
    radius: float
    step: float
    kind: str = field(default="sphere", init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.directions = np.asarray(self.directions, dtype=float)
        frames = [np.stack(_orthobasis(d)) for d in self.directions]
        self._frames = np.asarray(frames)

    @property
    def n_nodes(self):
        return int(np.ceil(2.0 * self.radius / self.step)) + 1

    @property
    def ray_count(self):
        return len(self.directions) * len(self.offsets) ** 2

    def frame(self, m):
        return self._frames[m]

    def chords(self, m):
        """Start points (O, O, 3) and chord lengths (O, O) for direction m."""
        d = self.directions[m]
        e1, e2 = self._frames[m]
        s1 = self.offsets[:, None]
        s2 = self.offsets[None, :]
        h2 = self.radius**2 - s1**2 - s2**2
        hl = np.sqrt(np.maximum(h2, 0.0))
        starts = (
            self.center
            + s1[..., None] * e1
            + s2[..., None] * e2
            - hl[..., None] * d
        )
        return starts, d, 2.0 * hl

    def ray(self, m, o1, o2):
        e1, e2 = self._frames[m]
        entry, length = ball_chord(
            self.center,
            self.radius,
            self.center + self.offsets[o1] * e1 + self.offsets[o2] * e2,
            self.directions[m],
        )
        r = line_ray(entry, self.directions[m], length, self.step, with_frame=False)
        r.frames = np.broadcast_to(self._frames[m], (len(r.tau), 2, 3)).copy()
        return r


def _cell_centered_offsets(radius, count):
    ds = 2.0 * radius / count
    return -radius + (np.arange(count) + 0.5) * ds


def _require_ball(grid):
    if grid.domain.kind != "ball" or grid.domain.radius <= 0:
        raise ValueError("ray families need a ball domain inside the grid")
    return np.asarray(grid.domain.center, dtype=float), grid.domain.radius


def default_step(grid):
    return 0.5 * min(grid.spacing)


def build_line_families(grid: Grid3, angles: int, offsets: int, step=None):
    """Three coordinate-plane families covering the grid's ball domain.

    Family k holds, per grid plane x_k = const, a 2D parallel-beam geometry
    of `angles` view angles (uniform over [0, pi)) and `offsets`
    cell-centered offsets spanning the ball diameter.
    """
    if angles < 3:
        raise ValueError("need at least 3 view angles")
    if offsets < max(grid.dims):
        raise ValueError("need at least as many offsets as grid nodes per axis")
    center, radius = _require_ball(grid)
    step = step or default_step(grid)
    thetas = np.arange(angles) * np.pi / angles
    offs = _cell_centered_offsets(radius, offsets)
    return [
        PlaneFamily(k, thetas, offs, grid.axes()[k].copy(), center, radius, step)
        for k in range(3)
    ]


def fibonacci_sphere(count):
    """Deterministic, roughly uniform unit directions."""
    i = np.arange(count)
    z = (2.0 * i + 1.0) / count - 1.0
    r = np.sqrt(np.maximum(1.0 - z**2, 0.0))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def build_sphere_family(grid: Grid3, directions: int, offsets=None, step=None):
    """Dense-sphere chord family with a 2D offset grid per direction."""
    center, radius = _require_ball(grid)
    offsets = offsets or max(grid.dims)
    step = step or default_step(grid)
    return SphereFamily(
        fibonacci_sphere(directions),
        _cell_centered_offsets(radius, offsets),
        center,
        radius,
        step,
    )


# ---------------------------------------------------------------------------
# conformal metric and geodesics


@dataclass
class ConformalMetric:
    """The metric h = v^-2 g of a positive wave-speed field v.

    Geodesics of h are the rays of the eikonal equation with index n = 1/v;
    derivatives of ln v use centered differences (ray-traced speed fields
    are not periodic-friendly).
    """

    speed: ScalarField
    fn: object = None  # optional complex-safe callable v(points) for analytic speeds

    def __post_init__(self):
        v = self.speed.values
        if np.any(v <= 0.0):
            raise ValueError("wave speed must be positive everywhere")
        logv = np.log(v)
        self._grad_logv = np.stack(
            np.gradient(logv, *self.speed.grid.spacing), axis=-1
        )
        self.v_min = float(v.min())
        self.v_max = float(v.max())

    @classmethod
    def from_function(cls, grid, fn):
        """Analytic speed: fn maps (..., 3) points to values, complex-safe
        so gradients come from complex-step differentiation."""
        return cls(ScalarField(grid, fn(grid.coords())), fn)

    @property
    def grid(self):
        return self.speed.grid

    def speed_at(self, points):
        if self.fn is not None:
            return self.fn(np.asarray(points, dtype=float))
        return trilinear(self.grid, self.speed.values, points, mode="clamp")

    def grad_log_speed_at(self, points):
        if self.fn is not None:
            pts = np.asarray(points, dtype=float)
            h = 1e-30
            g = np.stack(
                [
                    np.imag(self.fn(pts + 1j * h * e)) / h
                    for e in np.eye(3)
                ],
                axis=-1,
            )
            return g / self.fn(pts)[..., None]
        return trilinear(self.grid, self._grad_logv, points, mode="clamp")

    def speed_variation(self):
        """Relative spread of v: a constant-closeness diagnostic, not a bound."""
        return (self.v_max - self.v_min) / (0.5 * (self.v_max + self.v_min))


def _geodesic_rhs(metric, x, p):
    # h = e^{2 phi} g with phi = -ln v:  x'' = -2 (grad phi . x') x' + |x'|^2 grad phi
    g = -metric.grad_log_speed_at(x)
    return p, -2.0 * (g @ p) * p + (p @ p) * g


def _rk4_step(metric, x, p, dt):
    k1x, k1p = _geodesic_rhs(metric, x, p)
    k2x, k2p = _geodesic_rhs(metric, x + 0.5 * dt * k1x, p + 0.5 * dt * k1p)
    k3x, k3p = _geodesic_rhs(metric, x + 0.5 * dt * k2x, p + 0.5 * dt * k2p)
    k4x, k4p = _geodesic_rhs(metric, x + dt * k3x, p + dt * k3p)
    xn = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    pn = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    pn *= metric.speed_at(xn) / np.linalg.norm(pn)
    return xn, pn


def trace_geodesic(metric: ConformalMetric, x0, direction, step=None, budget=64.0):
    """Trace a unit-h-speed geodesic of h = v^-2 g until it exits the domain.

    x0 sits on (or inside) the boundary sphere; direction is a Euclidean
    unit vector.  Fixed-step RK4 in h-arclength with tangent renormalized
    to |dx/dtau| = v after every step; the final partial step is bisected
    onto the boundary.  Raises TrappedRayError past `budget` times the box
    diagonal of h-length.
    """
    grid = metric.grid
    center, radius = _require_ball(grid)
    dt = step or default_step(grid) / metric.v_max
    lo, hi = grid.box()
    diag = np.linalg.norm(hi - lo)
    max_steps = int(np.ceil(budget * diag / (dt * metric.v_min)))
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    x = np.asarray(x0, dtype=float)
    p = metric.speed_at(x) * d
    pts, tans, taus = [x], [p], [0.0]

    def r(x):
        return np.linalg.norm(x - center) - radius

    for n in range(max_steps):
        xn, pn = _rk4_step(metric, x, p, dt)
        if r(xn) > 0.0 and n > 0:
            lo, hi = 0.0, dt
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                xm, pm = _rk4_step(metric, x, p, mid)
                if r(xm) > 0.0:
                    hi = mid
                else:
                    lo = mid
                if hi - lo < 1e-14 * dt:
                    break
            xn, pn = _rk4_step(metric, x, p, hi)
            pts.append(xn)
            tans.append(pn)
            taus.append(taus[-1] + hi)
            break
        pts.append(xn)
        tans.append(pn)
        taus.append(taus[-1] + dt)
        x, p = xn, pn
    else:
        raise TrappedRayError("step budget exhausted; ray possibly trapped")

    ray = Ray(np.asarray(pts), np.asarray(tans), np.asarray(taus), metric=metric)
    e1, e2 = _orthobasis(d)
    v0 = metric.speed_at(ray.points[0])
    f1 = _transport(metric, ray, v0 * e1)
    f2 = _transport(metric, ray, v0 * e2)
    ray.frames = np.stack([f1, f2], axis=1)
    return ray


def _transport_rhs(metric, x, p, X):
    g = -metric.grad_log_speed_at(x)
    return -(g @ p) * X - (g @ X) * p + (p @ X) * g


def _transport(metric, ray: Ray, X0):
    """Parallel transport of X0 along the ray; returns values at all nodes.

    RK4 per interval with cubic-Hermite interpolation of positions and
    tangents between the stored nodes.
    """
    pts, tans, tau = ray.points, ray.tangents, ray.tau
    out = np.empty_like(pts)
    out[0] = X0
    X = np.asarray(X0, dtype=float)
    for i in range(len(tau) - 1):
        h = tau[i + 1] - tau[i]
        if h == 0.0:
            out[i + 1] = X
            continue
        x0, x1, p0, p1 = pts[i], pts[i + 1], tans[i], tans[i + 1]
        xm = 0.5 * (x0 + x1) + 0.125 * h * (p0 - p1)
        pm = 1.5 * (x1 - x0) / h - 0.25 * (p0 + p1)
        k1 = _transport_rhs(metric, x0, p0, X)
        k2 = _transport_rhs(metric, xm, pm, X + 0.5 * h * k1)
        k3 = _transport_rhs(metric, xm, pm, X + 0.5 * h * k2)
        k4 = _transport_rhs(metric, x1, p1, X + h * k3)
        X = X + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = X
    return out


def parallel_transport(ray: Ray, vector):
    """Transport a tangent-orthogonal vector from the ray start to its end.

    Preserves h-inner products; the identity for straight rays in a
    constant metric.
    """
    v = np.asarray(vector, dtype=float)
    t0 = ray.tangents[0]
    if abs(v @ t0) > 1e-8 * np.linalg.norm(v) * np.linalg.norm(t0):
        raise ValueError("vector must be orthogonal to the initial tangent")
    if ray.metric is None:
        return v.copy()
    return _transport(ray.metric, ray, v)[-1]


def reverse_ray(ray: Ray) -> Ray:
    """The same segment traversed backwards."""
    return Ray(
        ray.points[::-1].copy(),
        -ray.tangents[::-1].copy(),
        (ray.tau[-1] - ray.tau)[::-1].copy(),
        None if ray.frames is None else ray.frames[::-1].copy(),
        ray.metric,
    )


def coverage_directions(y):
    """In-plane directions xi_k = (e_k x y)/|e_k x y| seen by the line families.

    Returns (xi, ok): xi is (3, 3) with one unit direction per family and ok
    flags which families are nondegenerate at this Fourier node (family k
    degenerates when y is parallel to e_k).
    """
    y = np.asarray(y, dtype=float)
    ynorm = np.linalg.norm(y)
    xi = np.zeros((3, 3))
    ok = np.zeros(3, dtype=bool)
    for k in range(3):
        c = np.cross(np.eye(3)[k], y)
        n = np.linalg.norm(c)
        if n > 1e-12 * ynorm:
            xi[k] = c / n
            ok[k] = True
    return xi, ok


def diameter(metric: ConformalMetric, samples=128, step=None):
    """Lower bound on the h-diameter from center-aimed boundary geodesics.

    Shoots one geodesic inward from each of `samples` boundary points and
    returns the longest h-length found.
    """
    center, radius = _require_ball(metric.grid)
    best = 0.0
    for q in fibonacci_sphere(samples):
        x0 = center + radius * q
        ray = trace_geodesic(metric, x0, -q, step=step)
        best = max(best, ray.length)
    return best
