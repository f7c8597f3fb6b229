"""Catalog of closed smooth implicit surfaces and their differential data.

Every surface is the zero set of a smooth field F with F < 0 inside the
bounded component, so the inward unit normal is -grad F / |grad F|.  All
field evaluations are vectorized over a leading axis: points may be passed
as shape (3,) or (N, 3).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGradientError, DomainError, SurfaceConstructionError

# "on the surface" means |F| below this fraction of the bounding box diagonal
ON_SURFACE_TOL_FACTOR = 1e-10
GRAD_NORM_FLOOR = 1e-8


def as_points(x):
    """Return (points, single) with points shaped (N, 3)."""
    p = np.asarray(x, dtype=float)
    if p.ndim == 1:
        if p.shape != (3,):
            raise DomainError(f"expected a 3-vector, got shape {p.shape}")
        return p.reshape(1, 3), True
    if p.ndim != 2 or p.shape[1] != 3:
        raise DomainError(f"expected points of shape (N, 3), got {p.shape}")
    return p, False


class ImplicitSurface:
    """Base class: a closed smooth surface F^{-1}(0) with F < 0 inside."""

    kind = "abstract"

    def field(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    @property
    def bounding_box(self):
        return self._lo.copy(), self._hi.copy()

    @property
    def diagonal(self):
        return float(np.linalg.norm(self._hi - self._lo))

    @property
    def on_surface_tol(self):
        return ON_SURFACE_TOL_FACTOR * self.diagonal

    def params(self):
        raise NotImplementedError

    def in_domain(self, x):
        """True where x lies within the bounding box scaled 2x about its center."""
        pts, single = as_points(x)
        center = 0.5 * (self._lo + self._hi)
        half = (self._hi - self._lo)  # 2x extent means twice the half-width
        ok = np.all(np.abs(pts - center) <= half + 1e-12, axis=1)
        return bool(ok[0]) if single else ok

    def __repr__(self):
        ps = ", ".join(f"{k}={v}" for k, v in self.params().items())
        return f"{type(self).__name__}({ps})"


class Sphere(ImplicitSurface):
    """F(x) = |x - c|^2 - R^2."""

    kind = "sphere"

    def __init__(self, radius=1.0, center=(0.0, 0.0, 0.0)):
        if radius <= 0:
            raise SurfaceConstructionError("sphere radius must be positive")
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=float).reshape(3)
        self._lo = self.center - self.radius
        self._hi = self.center + self.radius

    def field(self, x):
        pts, single = as_points(x)
        d = pts - self.center
        v = np.einsum("ij,ij->i", d, d) - self.radius**2
        return float(v[0]) if single else v

    def gradient(self, x):
        pts, single = as_points(x)
        g = 2.0 * (pts - self.center)
        return g[0] if single else g

    def hessian(self, x):
        pts, single = as_points(x)
        h = np.broadcast_to(2.0 * np.eye(3), (len(pts), 3, 3)).copy()
        return h[0] if single else h

    def params(self):
        c = self.center
        return {"R": self.radius, "cx": c[0], "cy": c[1], "cz": c[2]}


class Torus(ImplicitSurface):
    """F(x) = (rho - R)^2 + z^2 - r^2 with rho = hypot(x, y); axis = z."""

    kind = "torus"

    def __init__(self, major_radius=2.0, minor_radius=1.0):
        if not 0 < minor_radius < major_radius:
            raise SurfaceConstructionError(
                "torus requires 0 < minor_radius < major_radius")
        self.major_radius = float(major_radius)
        self.minor_radius = float(minor_radius)
        s = self.major_radius + self.minor_radius
        self._lo = np.array([-s, -s, -self.minor_radius])
        self._hi = np.array([s, s, self.minor_radius])

    def _rho(self, pts):
        # floor keeps evaluations finite on the z-axis, where the field is
        # continuous but not differentiable
        return np.maximum(np.hypot(pts[:, 0], pts[:, 1]), 1e-30)

    def field(self, x):
        pts, single = as_points(x)
        u = self._rho(pts) - self.major_radius
        v = u * u + pts[:, 2] ** 2 - self.minor_radius**2
        return float(v[0]) if single else v

    def gradient(self, x):
        pts, single = as_points(x)
        rho = self._rho(pts)
        u = rho - self.major_radius
        g = np.empty_like(pts)
        g[:, 0] = 2.0 * u * pts[:, 0] / rho
        g[:, 1] = 2.0 * u * pts[:, 1] / rho
        g[:, 2] = 2.0 * pts[:, 2]
        return g[0] if single else g

    def hessian(self, x):
        pts, single = as_points(x)
        rho = self._rho(pts)
        u = rho - self.major_radius
        xx, yy = pts[:, 0], pts[:, 1]
        h = np.zeros((len(pts), 3, 3))
        h[:, 0, 0] = 2.0 * xx**2 / rho**2 + 2.0 * u * yy**2 / rho**3
        h[:, 1, 1] = 2.0 * yy**2 / rho**2 + 2.0 * u * xx**2 / rho**3
        h[:, 0, 1] = h[:, 1, 0] = 2.0 * xx * yy / rho**2 - 2.0 * u * xx * yy / rho**3
        h[:, 2, 2] = 2.0
        return h[0] if single else h

    def params(self):
        return {"R": self.major_radius, "r": self.minor_radius}


class Ellipsoid(ImplicitSurface):
    """F(x) = (x/a)^2 + (y/b)^2 + (z/c)^2 - 1 with a >= b >= c > 0."""

    kind = "ellipsoid"

    def __init__(self, a=1.3, b=1.0, c=0.8):
        if not a >= b >= c > 0:
            raise SurfaceConstructionError("ellipsoid semi-axes must satisfy a >= b >= c > 0")
        self.axes = np.array([float(a), float(b), float(c)])
        self._lo = -self.axes.copy()
        self._hi = self.axes.copy()

    def field(self, x):
        pts, single = as_points(x)
        v = np.einsum("ij,ij->i", pts / self.axes, pts / self.axes) - 1.0
        return float(v[0]) if single else v

    def gradient(self, x):
        pts, single = as_points(x)
        g = 2.0 * pts / self.axes**2
        return g[0] if single else g

    def hessian(self, x):
        pts, single = as_points(x)
        h = np.broadcast_to(np.diag(2.0 / self.axes**2), (len(pts), 3, 3)).copy()
        return h[0] if single else h

    def params(self):
        a, b, c = self.axes
        return {"a": a, "b": b, "c": c}


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float
    weight: float


class MetaballBlend(ImplicitSurface):
    """Gaussian blob blend: F(x) = iso - sum_i w_i exp(-blend |x-c_i|^2 / r_i^2).

    Inside (near the centers) the blob sum exceeds iso, so F < 0 there.
    Construction parameters must yield a connected regular level set; this is
    enforced by ``make_surface`` via a sampled gradient-norm check.
    """

    kind = "metaball"

    def __init__(self, balls=None, blend=2.0, iso=1.0):
        if balls is None:
            balls = [((-0.35, 0.0, 0.0), 0.75, 1.0), ((0.35, 0.0, 0.0), 0.75, 1.0)]
        if blend <= 0 or iso <= 0:
            raise SurfaceConstructionError("metaball blend exponent and iso level must be positive")
        parsed = []
        for center, radius, weight in balls:
            if radius <= 0 or weight <= 0:
                raise SurfaceConstructionError("metaball radii and weights must be positive")
            parsed.append(Ball(tuple(float(v) for v in center), float(radius), float(weight)))
        if not parsed:
            raise SurfaceConstructionError("metaball blend needs at least one ball")
        self.balls = tuple(parsed)
        self.blend = float(blend)
        self.iso = float(iso)
        self._centers = np.array([b.center for b in self.balls])
        self._radii = np.array([b.radius for b in self.balls])
        self._weights = np.array([b.weight for b in self.balls])
        # conservative reach of each blob: where its lone contribution drops
        # below iso / (2 n), the total field cannot reach iso
        n = len(self.balls)
        arg = np.maximum(2.0 * n * self._weights / self.iso, 1.0 + 1e-9)
        reach = self._radii * np.sqrt(np.log(arg) / self.blend) * 1.1
        self._lo = np.min(self._centers - reach[:, None], axis=0)
        self._hi = np.max(self._centers + reach[:, None], axis=0)

    def _terms(self, pts):
        d = pts[:, None, :] - self._centers[None, :, :]          # (N, B, 3)
        s2 = np.einsum("nbi,nbi->nb", d, d) / self._radii**2     # (N, B)
        return d, self._weights * np.exp(-self.blend * s2)

    def field(self, x):
        pts, single = as_points(x)
        _, t = self._terms(pts)
        v = self.iso - t.sum(axis=1)
        return float(v[0]) if single else v

    def gradient(self, x):
        pts, single = as_points(x)
        d, t = self._terms(pts)
        coeff = 2.0 * self.blend * t / self._radii**2            # (N, B)
        g = np.einsum("nb,nbi->ni", coeff, d)
        return g[0] if single else g

    def hessian(self, x):
        pts, single = as_points(x)
        d, t = self._terms(pts)
        a = 2.0 * self.blend * t / self._radii**2                # (N, B)
        h = np.einsum("nb,ij->nij", a, np.eye(3))
        h -= np.einsum("nb,nbi,nbj->nij", 2.0 * self.blend * a / self._radii**2, d, d)
        return h[0] if single else h

    def params(self):
        flat = ";".join(
            ",".join(repr(v) for v in (*b.center, b.radius, b.weight)) for b in self.balls)
        return {"balls": flat, "blend": self.blend, "iso": self.iso}


CATALOG = {
    "sphere": Sphere,
    "torus": Torus,
    "ellipsoid": Ellipsoid,
    "metaball": MetaballBlend,
}


def make_surface(kind, **params):
    """Build a catalog surface by name and validate it.

    Metaball blends additionally get a sampled regularity check: the minimum
    gradient norm over a projected surface sample must stay above 1e-4, else
    the level set is (close to) singular and construction fails.
    """
    if kind not in CATALOG:
        raise SurfaceConstructionError(
            f"unknown surface kind '{kind}'; catalog: {sorted(CATALOG)}")
    surface = CATALOG[kind](**params)
    if kind == "metaball":
        _check_metaball_regularity(surface)
    return surface


def _check_metaball_regularity(surface, n_samples=400, min_grad=1e-4):
    from .projection import project_many  # deferred: projection imports surfaces

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(20240901)))
    lo, hi = surface.bounding_box
    pts = lo + rng.random((4 * n_samples, 3)) * (hi - lo)
    res = project_many(surface, pts)
    feet = res["foot"][res["converged"] & ~res["ambiguous"]]
    if len(feet) < n_samples:
        raise SurfaceConstructionError(
            "metaball regularity check failed: projection could not produce "
            f"{n_samples} surface samples")
    gn = np.linalg.norm(surface.gradient(feet[:n_samples]), axis=1)
    if gn.min() < min_grad:
        raise SurfaceConstructionError(
            f"metaball level set is nearly singular: min |grad F| = {gn.min():.3e} "
            f"< {min_grad} over a projected sample")


def evaluate_field(surface, x):
    """Return (F(x), grad F(x), hess F(x)); x must lie within 2x the bounding box."""
    pts, single = as_points(x)
    ok = surface.in_domain(pts)
    if not np.all(ok):
        raise DomainError("point outside 2x bounding box extent")
    v = surface.field(pts)
    g = surface.gradient(pts)
    h = surface.hessian(pts)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise DomainError("field evaluation produced non-finite values")
    if single:
        return float(v[0]), g[0], h[0]
    return v, g, h


def inward_normal(surface, p):
    """Unit normal pointing into the bounded component (F < 0 side)."""
    pts, single = as_points(p)
    f = surface.field(pts)
    tol = surface.on_surface_tol
    if np.any(np.abs(f) > tol):
        worst = float(np.max(np.abs(f)))
        raise DomainError(f"point not on the surface: |F| = {worst:.3e} > {tol:.3e}")
    g = surface.gradient(pts)
    gn = np.linalg.norm(g, axis=1)
    if np.any(gn < GRAD_NORM_FLOOR):
        raise DegenerateGradientError(
            f"gradient norm {float(gn.min()):.3e} below {GRAD_NORM_FLOOR}")
    n = -g / gn[:, None]
    return n[0] if single else n


def tangent_basis(n):
    """Deterministic orthonormal (t1, t2) spanning the plane orthogonal to n."""
    nv, single = as_points(n)
    # pick the coordinate axis least aligned with n per row
    axis = np.argmin(np.abs(nv), axis=1)
    a = np.zeros_like(nv)
    a[np.arange(len(nv)), axis] = 1.0
    t1 = np.cross(nv, a)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(nv, t1)
    if single:
        return t1[0], t2[0]
    return t1, t2


def principal_curvatures(surface, p):
    """Principal curvatures (k1 >= k2) of the field level set through p,
    measured with respect to the inward normal.

    The formula applies to any regular level set of F: the shape operator is
    the tangential restriction of hess F / |grad F|.  A sphere of radius R
    yields (1/R, 1/R); saddle directions come out negative.
    """
    pts, single = as_points(p)
    g = surface.gradient(pts)
    gn = np.linalg.norm(g, axis=1)
    if np.any(gn < GRAD_NORM_FLOOR):
        raise DegenerateGradientError("degenerate gradient in curvature evaluation")
    n = -g / gn[:, None]
    t1, t2 = tangent_basis(n)
    h = surface.hessian(pts)
    a11 = np.einsum("ni,nij,nj->n", t1, h, t1) / gn
    a22 = np.einsum("ni,nij,nj->n", t2, h, t2) / gn
    a12 = np.einsum("ni,nij,nj->n", t1, h, t2) / gn
    mean = 0.5 * (a11 + a22)
    disc = np.sqrt(np.maximum(0.25 * (a11 - a22) ** 2 + a12**2, 0.0))
    k1, k2 = mean + disc, mean - disc
    if single:
        return float(k1[0]), float(k2[0])
    return k1, k2


def curvature_at_offset(k, s):
    """Principal curvature of the parallel surface at signed offset s along the
    inward normal: k' = k / (1 - s k).  Valid while s < 1/k at convex points,
    which holds whenever |s| stays below the local feature size."""
    return k / (1.0 - s * k)


def max_curvature(surface, p):
    """max(|k1|, |k2|) of the level set through p."""
    k1, k2 = principal_curvatures(surface, p)
    return np.maximum(np.abs(k1), np.abs(k2))


class SurfacePoint:
    """An on-surface sample: position, inward unit normal and feature size."""

    def __init__(self, position, normal, lfs, surface):
        self.position = np.asarray(position, dtype=float).reshape(3)
        self.normal = np.asarray(normal, dtype=float).reshape(3)
        self.lfs = float(lfs)
        self.surface = surface

    def __repr__(self):
        p = np.array2string(self.position, precision=6)
        return f"SurfacePoint({p}, lfs={self.lfs:.6g})"
