"""Local feature size f(x) = d(x, M), the distance to the medial axis.

Sphere and torus have known medial axes, so f is evaluated in closed form.
For the other catalog surfaces f is estimated from a shrinking-ball medial
point cloud.  Distance to a sampled subset of M can only over-estimate f, so
numeric mode multiplies by a 0.97 safety factor; the raw estimate is exposed
for mode-consistency checks.
"""

import io
import weakref
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError, InsufficientSamplingError
from .projection import project_many
from .surfaces import SurfacePoint, as_points, inward_normal

NUMERIC_SAFETY = 0.97
DEFAULT_CONTACTS = 600
DEFAULT_DENSE = 10_000
SHRINK_MAX_ITER = 60
SHRINK_REL_TOL = 1e-6

ANALYTIC_KINDS = ("sphere", "torus")

_auto_clouds = weakref.WeakKeyDictionary()


@dataclass
class MedialEstimate:
    contact: np.ndarray
    center: np.ndarray
    radius: float
    side: int            # +1 ball grown outward, -1 grown inward
    method: str = "shrinking_ball"


class MedialCloud:
    """Sampled medial-axis point set with nearest-distance queries."""

    def __init__(self, estimates, n_contacts, seed):
        if len(estimates) < 100:
            raise InsufficientSamplingError(
                f"medial cloud has {len(estimates)} points; need at least 100")
        self.estimates = list(estimates)
        self.points = np.array([e.center for e in self.estimates])
        self.radii = np.array([e.radius for e in self.estimates])
        self.n_contacts = n_contacts
        self.seed = seed
        self.tree = cKDTree(self.points)
        nn = self.tree.query(self.points, k=2)[0][:, 1]
        self.resolution = float(np.median(nn))

    def distance(self, x):
        pts, single = as_points(x)
        d = self.tree.query(pts)[0]
        return float(d[0]) if single else d


def sample_surface_points(surface, n, rng, with_normals=False):
    """n points on the surface by rejection: uniform box draws projected down."""
    lo, hi = surface.bounding_box
    feet = []
    got = 0
    while got < n:
        draw = lo + rng.random((max(2 * (n - got), 64), 3)) * (hi - lo)
        res = project_many(surface, draw)
        ok = res["converged"] & ~res["ambiguous"]
        feet.append(res["foot"][ok])
        got += int(ok.sum())
    pts = np.vstack(feet)[:n]
    if with_normals:
        return pts, inward_normal(surface, pts)
    return pts


def _shrink_balls(surface, contacts, normals, direction, dense_tree, start_radius):
    """Classic shrinking-ball iteration, vectorized over contacts.

    The update replaces the current radius with that of the ball tangent at
    the contact passing through the nearest sample; starting from a large
    ball the radius sequence is non-increasing and never undershoots the
    medial radius (for samples lying on the surface).
    """
    dirs = direction * normals
    r = np.full(len(contacts), start_radius)
    active = np.ones(len(contacts), dtype=bool)
    for _ in range(SHRINK_MAX_ITER):
        if not active.any():
            break
        c = contacts[active] + r[active, None] * dirs[active]
        d_near, idx = dense_tree.query(c)
        q = dense_tree.data[idx]
        pq = q - contacts[active]
        # nearest sample may be the contact itself (tangency); that ball is empty
        denom = np.einsum("ij,ij->i", pq, dirs[active])
        norm2 = np.einsum("ij,ij->i", pq, pq)
        empty = (d_near >= r[active] * (1.0 - 1e-9)) | (denom <= 1e-12 * np.sqrt(norm2))
        r_new = np.where(empty, r[active], norm2 / (2.0 * np.maximum(denom, 1e-300)))
        moved = np.abs(r_new - r[active]) > SHRINK_REL_TOL * np.maximum(r_new, 1e-300)
        sub = np.zeros(active.sum(), dtype=bool)
        sub[moved & ~empty] = True
        r[active] = r_new
        new_active = active.copy()
        new_active[active] = sub
        active = new_active
    centers = contacts + r[:, None] * dirs
    return centers, r


def medial_sample(surface, n_contacts, seed, dense_n=DEFAULT_DENSE):
    """Two shrinking-ball medial estimates per sampled contact (one per side).

    Balls whose centers escape the bounding box are dropped: on that side the
    medial axis is at infinity.  Deterministic for a fixed seed.
    """
    if n_contacts < 100:
        raise InsufficientSamplingError(
            f"need at least 100 contacts, got {n_contacts}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0x6d65))))
    dense = sample_surface_points(surface, dense_n, rng)
    contacts, normals = sample_surface_points(surface, n_contacts, rng, with_normals=True)
    tree = cKDTree(dense)
    lo, hi = surface.bounding_box
    start = surface.diagonal
    out = []
    for side in (-1, 1):  # -1: outward (against the inward normal), +1: inward
        centers, radii = _shrink_balls(surface, contacts, normals, side, tree, start)
        keep = np.all((centers >= lo - 1e-12) & (centers <= hi + 1e-12), axis=1)
        keep &= radii < 0.99 * start
        for c, ctr, rad in zip(contacts[keep], centers[keep], radii[keep]):
            out.append(MedialEstimate(contact=c.copy(), center=ctr.copy(),
                                      radius=float(rad), side=side))
    return out


def build_medial_cloud(surface, n_contacts=DEFAULT_CONTACTS, seed=0, dense_n=DEFAULT_DENSE):
    return MedialCloud(medial_sample(surface, n_contacts, seed, dense_n), n_contacts, seed)


def auto_cloud(surface):
    """Deterministic default medial cloud for a surface, built once."""
    try:
        return _auto_clouds[surface]
    except KeyError:
        cloud = build_medial_cloud(surface)
        _auto_clouds[surface] = cloud
        return cloud


def _analytic_lfs(surface, pts):
    if surface.kind == "sphere":
        return np.linalg.norm(pts - surface.center, axis=1)
    if surface.kind == "torus":
        # medial axis = core circle (radius R, z=0) plus the symmetry axis
        rho = np.hypot(pts[:, 0], pts[:, 1])
        d_core = np.hypot(rho - surface.major_radius, pts[:, 2])
        return np.minimum(d_core, rho)
    raise DomainError(f"no analytic medial axis for surface kind '{surface.kind}'")


def resolve_lfs_mode(surface, mode):
    if mode == "auto":
        return "analytic" if surface.kind in ANALYTIC_KINDS else "numeric"
    if mode not in ("analytic", "numeric"):
        raise DomainError(f"unknown lfs mode '{mode}'")
    if mode == "analytic" and surface.kind not in ANALYTIC_KINDS:
        raise DomainError(f"surface kind '{surface.kind}' has no analytic medial axis")
    return mode


def lfs(surface, x, mode="auto", cloud=None):
    """Local feature size at x (any point of space, not just the surface).

    Analytic mode returns the exact distance to the known medial axis.
    Numeric mode returns 0.97 times the distance to the shrinking-ball cloud;
    the deflation keeps the estimate on the safe side of the true f, since a
    sampled subset of the medial axis can only look farther away than M.
    """
    pts, single = as_points(x)
    if not np.all(surface.in_domain(pts)):
        raise DomainError("lfs query outside 2x bounding box extent")
    mode = resolve_lfs_mode(surface, mode)
    if mode == "analytic":
        vals = _analytic_lfs(surface, pts)
    else:
        if cloud is None:
            cloud = auto_cloud(surface)
        vals = NUMERIC_SAFETY * cloud.distance(pts)
        vals = np.atleast_1d(vals)
    return float(vals[0]) if single else vals


def lfs_raw_numeric(surface, x, cloud):
    """Distance to the medial cloud without the safety factor (for
    analytic/numeric consistency checks)."""
    pts, single = as_points(x)
    d = cloud.distance(pts)
    return float(np.atleast_1d(d)[0]) if single else d


def lipschitz_residual(surface, x, y, mode="auto", cloud=None):
    """max(0, |f(x) - f(y)| - d(x, y)): zero iff the 1-Lipschitz bound holds."""
    fx = lfs(surface, x, mode, cloud)
    fy = lfs(surface, y, mode, cloud)
    d = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    return max(0.0, abs(fx - fy) - d)


def surface_point(surface, p, mode="auto", cloud=None):
    """Bundle an on-surface position with its inward normal and feature size."""
    pos = np.asarray(p, dtype=float).reshape(3)
    normal = inward_normal(surface, pos)
    return SurfacePoint(pos, normal, lfs(surface, pos, mode, cloud), surface)


def export_medial_csv(estimates):
    """CSV dump (x, y, z, radius, side) of medial estimates for inspection."""
    buf = io.StringIO()
    buf.write("x,y,z,radius,side\n")
    for e in estimates:
        c = e.center
        buf.write(f"{c[0]!r},{c[1]!r},{c[2]!r},{e.radius!r},{e.side}\n")
    return buf.getvalue()
