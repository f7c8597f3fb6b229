"""Offset patches, discrete geodesics on them, and the two classical probes
(geodesic/chord ratio, normal variation vs. max curvature times length).

An offset patch is the piece of the level set h = omega around an anchor
point.  Points are kept on the level set by projecting to the surface and
stepping omega along the inward normal on the patch side; for omega below the
local feature size this transport is exact, because the level set is the
parallel surface at distance omega.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError
from .feature_size import lfs, resolve_lfs_mode
from .projection import project, reproject_to_surface
from .surfaces import as_points, curvature_at_offset, inward_normal, principal_curvatures

LEVEL_TOL_FACTOR = 1e-8            # |h - omega| tolerance, times the diagonal
MOVE_TOL_FACTOR = 1e-10            # curve-shortening stop, times the diagonal
LENGTH_REL_TOL = 1e-6              # doubling the vertex count changes length less
BASE_SEGMENTS = 16                 # 17 vertices to start
MAX_SEGMENTS = 4096
LOCALITY_FACTOR = 0.1              # chord must stay below this fraction of lfs
MAX_SHORTEN_ITER = 6000


@dataclass
class OffsetPatch:
    surface: object
    omega: float
    anchor: np.ndarray
    foot: np.ndarray
    side: int                      # +1 inside, -1 outside, 0 on the surface
    valid: bool
    f_foot: float
    lfs_mode: str = "auto"
    cloud: object = field(default=None, repr=False)

    @property
    def signed_offset(self):
        # signed distance along the inward normal: positive inside
        return self.side * self.omega


def make_patch(surface, p, lfs_mode="auto", cloud=None):
    """Offset patch through p: omega = h(p), valid while omega < f(foot)."""
    r = project(surface, p)
    side = {"inside": 1, "outside": -1, "on": 0}[r.side]
    f_foot = lfs(surface, r.foot, lfs_mode, cloud)
    return OffsetPatch(
        surface=surface,
        omega=r.distance,
        anchor=np.asarray(p, dtype=float).reshape(3),
        foot=r.foot,
        side=side,
        valid=r.distance < f_foot,
        f_foot=f_foot,
        lfs_mode=lfs_mode,
        cloud=cloud,
    )


def reproject_to_level(patch, pts):
    """Send points to the patch's level set; returns (level_points, feet)."""
    p, single = as_points(pts)
    feet, ok = reproject_to_surface(patch.surface, p)
    if not np.all(ok):
        raise ConvergenceError("level-set reprojection failed")
    if patch.omega == 0.0 or patch.side == 0:
        out = feet
    else:
        out = feet + patch.signed_offset * inward_normal(patch.surface, feet)
    if single:
        return out[0], feet[0]
    return out, feet


@dataclass
class GeodesicPath:
    patch: OffsetPatch
    vertices: np.ndarray           # (m, 3) on the level set
    feet: np.ndarray               # (m, 3) closest surface points of the vertices
    length: float                  # Richardson-extrapolated arc length
    raw_length: float              # plain polyline length at the finest level
    kappa_max: float
    argmax_point: np.ndarray
    r_m: float

    @property
    def start(self):
        return self.vertices[0]

    @property
    def end(self):
        return self.vertices[-1]


def _polyline_length(v):
    return float(np.sum(np.linalg.norm(np.diff(v, axis=0), axis=1)))


def _shorten(patch, v, move_tol, max_iter=MAX_SHORTEN_ITER):
    """Midpoint averaging + level reprojection until vertices stop moving."""
    for it in range(max_iter):
        mid = 0.5 * (v[:-2] + v[2:])
        new, _ = reproject_to_level(patch, mid)
        move = float(np.max(np.linalg.norm(new - v[1:-1], axis=1)))
        v[1:-1] = new
        if move < move_tol:
            return it + 1
    raise ConvergenceError(
        f"curve shortening did not settle below {move_tol:.2e} in {max_iter} iterations")


def trace_geodesic(patch, start, end):
    """Discrete geodesic between two points of an offset patch.

    The polyline starts as the chord projected onto the level set and is
    shortened by midpoint averaging with reprojection; the vertex count
    doubles from 16 segments until one doubling changes the length by less
    than 1e-6 relative.  The reported length extrapolates the last two
    levels (inscribed polylines approach the arc like 1/n^2), and is never
    below the finest polyline, so the chord lower bound is preserved.
    """
    if not patch.valid:
        raise DomainError("offset patch is invalid: omega >= f(foot)")
    surface = patch.surface
    diag = surface.diagonal
    level_tol = LEVEL_TOL_FACTOR * diag

    a, foot_a = reproject_to_level(patch, np.asarray(start, dtype=float).reshape(3))
    b, foot_b = reproject_to_level(patch, np.asarray(end, dtype=float).reshape(3))
    for orig, snapped in ((start, a), (end, b)):
        if np.linalg.norm(np.asarray(orig, dtype=float) - snapped) > level_tol:
            raise DomainError("endpoint is not on the level set h = omega")

    chord = float(np.linalg.norm(b - a))
    f_start = lfs(surface, foot_a, patch.lfs_mode, patch.cloud)
    if chord > LOCALITY_FACTOR * f_start:
        raise DomainError(
            f"chord {chord:.3e} exceeds {LOCALITY_FACTOR} * lfs = "
            f"{LOCALITY_FACTOR * f_start:.3e}; geodesic would leave the patch")

    if chord == 0.0:
        k = _vertex_kappa_max(patch, foot_a.reshape(1, 3))[0]
        return GeodesicPath(patch, a.reshape(1, 3), foot_a.reshape(1, 3),
                            0.0, 0.0, float(k), a.copy(), 1.0 / float(k))

    move_tol = MOVE_TOL_FACTOR * diag
    n = BASE_SEGMENTS
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    v, feet = reproject_to_level(patch, a + t * (b - a))
    v[0], v[-1] = a, b
    _shorten(patch, v, move_tol)
    lengths = [(n, _polyline_length(v))]

    while True:
        n *= 2
        if n > MAX_SEGMENTS:
            raise ConvergenceError("geodesic length did not converge before MAX_SEGMENTS")
        fine = np.empty((n + 1, 3))
        fine[::2] = v
        fine[1::2], _ = reproject_to_level(patch, 0.5 * (v[:-1] + v[1:]))
        v = fine
        _shorten(patch, v, move_tol)
        lengths.append((n, _polyline_length(v)))
        l_coarse, l_fine = lengths[-2][1], lengths[-1][1]
        if abs(l_fine - l_coarse) <= LENGTH_REL_TOL * max(l_fine, 1e-300):
            break

    _, feet = reproject_to_level(patch, v)   # feet of the final vertex set
    length = max((4.0 * l_fine - l_coarse) / 3.0, l_fine)
    kappas = _vertex_kappa_max(patch, feet)
    imax = int(np.argmax(kappas))
    kappa_max = float(kappas[imax])
    return GeodesicPath(patch, v, feet, length, l_fine, kappa_max,
                        v[imax].copy(), 1.0 / kappa_max)


def _vertex_kappa_max(patch, feet):
    """max |principal curvature| of the level set at each vertex, obtained by
    transporting the surface curvatures at the feet to the offset."""
    k1, k2 = principal_curvatures(patch.surface, feet)
    s = patch.signed_offset
    k1o = curvature_at_offset(np.atleast_1d(k1), s)
    k2o = curvature_at_offset(np.atleast_1d(k2), s)
    return np.maximum(np.abs(k1o), np.abs(k2o))


def level_kappa_max(patch, x):
    """max |principal curvature| of the patch's level set at a point on it."""
    _, foot = reproject_to_level(patch, x)
    return float(_vertex_kappa_max(patch, foot.reshape(1, 3))[0])


def exponential_step(patch, start, direction, distance, substeps=64):
    """Walk approximately `distance` along the level set from start.

    Steps in the current tangent direction and reprojects, carrying the
    direction along by tangential projection; the landing error is
    O(distance * (distance/substeps)^2 * curvature^2).
    """
    y = np.asarray(start, dtype=float).reshape(3)
    n0 = inward_normal(patch.surface, reproject_to_surface(patch.surface, y.reshape(1, 3))[0])[0]
    d = np.asarray(direction, dtype=float).reshape(3)
    d = d - np.dot(d, n0) * n0
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        raise DomainError("direction is (numerically) normal to the patch")
    d /= norm
    step = distance / substeps
    for _ in range(substeps):
        y_new, foot = reproject_to_level(patch, y + step * d)
        n = inward_normal(patch.surface, foot)
        motion = y_new - y
        motion -= np.dot(motion, n) * n
        mn = np.linalg.norm(motion)
        if mn > 1e-300:
            d = motion / mn
        y = y_new
    return y


def prop1_ratio(patch, start, direction, scales):
    """Geodesic/chord ratios at a ladder of step sizes.

    For each scale D the end point sits (approximately) at geodesic distance
    D from start along `direction`; the returned ratio is the traced geodesic
    length over the Euclidean chord.  Ratios decrease toward 1 as D shrinks.
    """
    scales = [float(s) for s in scales]
    if any(s <= 0 for s in scales):
        raise DomainError("scales must be positive")
    if any(b >= a for a, b in zip(scales, scales[1:])):
        raise DomainError("scales must be strictly decreasing")
    out = []
    for delta in scales:
        end = exponential_step(patch, start, direction, delta)
        path = trace_geodesic(patch, start, end)
        chord = float(np.linalg.norm(path.end - path.start))
        out.append((delta, path.length / chord))
    return out


def angle_between(u, v):
    """Angle in [0, pi] between two unit vectors, accurate at both ends."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(2.0 * np.arctan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def prop2_check(path):
    """(angle, bound) where angle is the normal variation between the path
    endpoints and bound = kappa_max * geodesic length; angle <= bound."""
    if len(path.vertices) == 1:
        return 0.0, 0.0
    n_a = inward_normal(path.patch.surface, path.feet[0])
    n_b = inward_normal(path.patch.surface, path.feet[-1])
    return angle_between(n_a, n_b), path.kappa_max * path.length


def export_path_csv(path):
    """CSV polyline (t, x, y, z, h, kappa) with t the cumulative arc length."""
    import io

    v = path.vertices
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1) if len(v) > 1 else np.array([])
    t = np.concatenate([[0.0], np.cumsum(seg)])
    h = np.linalg.norm(v - path.feet, axis=1)
    kappa = _vertex_kappa_max(path.patch, path.feet)
    buf = io.StringIO()
    buf.write("t,x,y,z,h,kappa\n")
    for ti, (x, y, z), hi, ki in zip(t, v, h, kappa):
        buf.write(f"{ti!r},{x!r},{y!r},{z!r},{hi!r},{ki!r}\n")
    return buf.getvalue()
