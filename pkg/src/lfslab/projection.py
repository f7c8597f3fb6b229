"""Closest-point projection onto a surface and the distance field h(x) = d(x, S).

The projector runs damped Newton on the constrained nearest-point conditions

    p - x = lam * grad F(p),   F(p) = 0

seeded by multi-start: eight anchors obtained by gradient descent from the
bounding-box corners, plus the direct gradient walk from the query point.
Multi-start is what lets us detect medial-axis queries: two starts converging
to feet at (numerically) the same distance but far apart mean the query has
no unique closest point.

Everything is vectorized; ``project_many`` is the workhorse behind campaigns
and traces, ``project`` is the single-point front end.
"""

import weakref
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, MedialAmbiguityError
from .surfaces import as_points, inward_normal

AMBIGUITY_TOL_FACTOR = 1e-6     # distance ties below this fraction of the diagonal
AMBIGUITY_SEPARATION = 100.0    # ... with feet farther apart than 100x the tie tol
RESIDUAL_TOL_FACTOR = 1e-12
FD_STEP_FACTOR = 1e-6
MAX_NEWTON_ITER = 100

_anchor_cache = weakref.WeakKeyDictionary()


@dataclass
class ProjectionResult:
    foot: np.ndarray
    distance: float
    side: str              # "inside" | "outside" | "on"
    iterations: int
    residual: float
    converged: bool


def _gradient_walk(surface, pts, iters, step_cap):
    """First-order level-set descent p <- p - F grad F / |grad F|^2, clamped."""
    p = pts.copy()
    for _ in range(iters):
        f = surface.field(p)
        g = surface.gradient(p)
        gn2 = np.einsum("ij,ij->i", g, g)
        scale = f / np.maximum(gn2, 1e-300)
        step = -scale[:, None] * g
        ln = np.linalg.norm(step, axis=1)
        big = ln > step_cap
        if np.any(big):
            step[big] *= (step_cap / ln[big])[:, None]
        p += step
        if np.max(np.abs(surface.field(p))) < 1e-14 * max(step_cap, 1.0):
            break
    return p


def _anchors(surface):
    """Eight on-surface seeds descended from the bounding-box corners."""
    try:
        return _anchor_cache[surface]
    except KeyError:
        pass
    lo, hi = surface.bounding_box
    corners = np.array([[a, b, c] for a in (lo[0], hi[0])
                        for b in (lo[1], hi[1]) for c in (lo[2], hi[2])])
    anchors = _gradient_walk(surface, corners, 120, 0.25 * surface.diagonal)
    _anchor_cache[surface] = anchors
    return anchors


def _newton_polish(surface, p0, x, tol, max_iter=MAX_NEWTON_ITER):
    """Damped Newton on the KKT system for all rows at once.

    Returns (p, residual, iterations, active_mask_history_count).  Rows whose
    residual cannot be driven below tol stay marked unconverged.
    """
    p = p0.copy()
    g = surface.gradient(p)
    gn2 = np.einsum("ij,ij->i", g, g)
    lam = np.einsum("ij,ij->i", p - x, g) / np.maximum(gn2, 1e-300)

    def residual(p, lam, x):
        f = surface.field(p)
        g = surface.gradient(p)
        gref = np.maximum(np.linalg.norm(g, axis=1), 1e-12)
        r_pos = p - x - lam[:, None] * g
        return np.linalg.norm(r_pos, axis=1) + np.abs(f) / gref

    res = residual(p, lam, x)
    iters = np.zeros(len(p), dtype=int)
    n = len(p)
    eye = np.eye(3)
    for it in range(max_iter):
        active = res > tol
        if not np.any(active):
            break
        pa, la = p[active], lam[active]
        xa = x[active]
        f = surface.field(pa)
        g = surface.gradient(pa)
        h = surface.hessian(pa)
        jac = np.zeros((len(pa), 4, 4))
        jac[:, :3, :3] = eye[None] - la[:, None, None] * h
        jac[:, :3, 3] = -g
        jac[:, 3, :3] = g
        # tiny Tikhonov keeps rows solvable at focal points; damping does the rest
        jac[:, range(4), range(4)] += 1e-14 * (1.0 + np.abs(la))[:, None]
        rhs = np.empty((len(pa), 4))
        rhs[:, :3] = -(pa - xa - la[:, None] * g)
        rhs[:, 3] = -f
        try:
            step = np.linalg.solve(jac, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            # normal equations fallback for the rare singular row
            jt = jac.transpose(0, 2, 1)
            step = np.linalg.solve(jt @ jac + 1e-12 * np.eye(4)[None],
                                   np.einsum("nij,nj->ni", jt, rhs)[..., None])[..., 0]
        step = np.nan_to_num(step, nan=0.0, posinf=0.0, neginf=0.0)

        base = res[active]
        alpha = np.ones(len(pa))
        best_p, best_l, best_r = pa.copy(), la.copy(), base.copy()
        improved = np.zeros(len(pa), dtype=bool)
        for _ in range(9):
            trial_p = pa + alpha[:, None] * step[:, :3]
            trial_l = la + alpha * step[:, 3]
            trial_r = residual(trial_p, trial_l, xa)
            better = trial_r < best_r
            best_p[better] = trial_p[better]
            best_l[better] = trial_l[better]
            best_r[better] = trial_r[better]
            improved |= better
            alpha *= 0.5
            if np.all(improved):
                break
        p[active], lam[active] = best_p, best_l
        res[active] = best_r
        iters[active] += 1
    return p, res, iters


def project_many(surface, xs, newton_iter=MAX_NEWTON_ITER):
    """Project a batch of query points; returns a dict of per-query arrays.

    Keys: foot (N,3), distance, side (+1 outside / -1 inside / 0 on), converged,
    ambiguous, iterations, residual.  No exceptions are raised for individual
    failures; callers decide how to treat them.
    """
    pts, _ = as_points(xs)
    if not np.all(surface.in_domain(pts)):
        raise DomainError("projection query outside 2x bounding box extent")
    n = len(pts)
    diag = surface.diagonal
    tol = RESIDUAL_TOL_FACTOR * diag
    amb_tol = AMBIGUITY_TOL_FACTOR * diag

    anchors = _anchors(surface)               # (8, 3)
    k = len(anchors) + 1
    starts = np.empty((n, k, 3))
    starts[:, :-1, :] = anchors[None, :, :]
    starts[:, -1, :] = _gradient_walk(surface, pts.copy(), 60, 0.25 * diag)

    flat = starts.reshape(n * k, 3)
    xrep = np.repeat(pts, k, axis=0)
    feet, res, iters = _newton_polish(surface, flat, xrep, tol, newton_iter)

    fval = surface.field(feet)
    valid = (res <= tol) & (np.abs(fval) <= surface.on_surface_tol)
    dist = np.linalg.norm(xrep - feet, axis=1)
    dist_m = np.where(valid, dist, np.inf).reshape(n, k)
    feet = feet.reshape(n, k, 3)
    res = res.reshape(n, k)
    iters = iters.reshape(n, k)

    best = np.argmin(dist_m, axis=1)
    rows = np.arange(n)
    best_d = dist_m[rows, best]
    converged = np.isfinite(best_d)

    # ambiguity: a competing valid foot at (numerically) the same distance but
    # a genuinely different location
    near = dist_m <= (best_d[:, None] + amb_tol)
    sep = np.linalg.norm(feet - feet[rows, best][:, None, :], axis=2)
    ambiguous = np.any(near & (sep > AMBIGUITY_SEPARATION * amb_tol), axis=1) & converged

    out_foot = feet[rows, best]
    f_query = surface.field(pts)
    tol_on = surface.on_surface_tol
    side = np.where(f_query > tol_on, 1, np.where(f_query < -tol_on, -1, 0)).astype(np.int8)
    return {
        "foot": out_foot,
        "distance": np.where(converged, best_d, np.nan),
        "side": side,
        "converged": converged,
        "ambiguous": ambiguous,
        "iterations": iters[rows, best],
        "residual": res[rows, best],
    }


_SIDE_NAME = {1: "outside", -1: "inside", 0: "on"}


def project(surface, x):
    """Closest point of x on the surface.

    Raises MedialAmbiguityError when two starts find equally near feet far
    apart (x is numerically on the medial axis) and ConvergenceError when no
    start reaches the residual target.
    """
    res = project_many(surface, np.asarray(x, dtype=float).reshape(1, 3))
    if res["ambiguous"][0]:
        raise MedialAmbiguityError(
            f"point {np.asarray(x)} has no unique closest point (medial axis)")
    if not res["converged"][0]:
        raise ConvergenceError(f"projection did not converge for {np.asarray(x)}")
    return ProjectionResult(
        foot=res["foot"][0],
        distance=float(res["distance"][0]),
        side=_SIDE_NAME[int(res["side"][0])],
        iterations=int(res["iterations"][0]),
        residual=float(res["residual"][0]),
        converged=True,
    )


def reproject_to_surface(surface, pts, newton_iter=40):
    """Fast single-start projection for points already near the surface.

    Used by geodesic tracing and pair sampling where the foot is known to be
    unique; skips multi-start and ambiguity detection.  Returns (feet, ok).
    """
    p, _ = as_points(pts)
    diag = surface.diagonal
    seeds = _gradient_walk(surface, p.copy(), 25, 0.25 * diag)
    feet, res, _ = _newton_polish(surface, seeds, p, RESIDUAL_TOL_FACTOR * diag, newton_iter)
    ok = (res <= RESIDUAL_TOL_FACTOR * diag) & (np.abs(surface.field(feet)) <= surface.on_surface_tol)
    return feet, ok


def distance_to_surface(surface, xs):
    """h(x) = d(x, S) for a batch of points (full multi-start projection)."""
    res = project_many(surface, xs)
    if np.any(~res["converged"]):
        raise ConvergenceError("distance evaluation failed to converge")
    return res["distance"]


def extended_normal(surface, x):
    """Normal extended off the surface: the inward normal at the closest point."""
    r = project(surface, x)
    return inward_normal(surface, r.foot)


def gradient_identity_residual(surface, x):
    """Check that the unit gradient of h matches (x - foot)/h at x.

    The distance field is differentiated by central differences with step
    1e-6 * diagonal; the step stays below the distance to the medial axis
    because the precondition requires 0 < h(x) < f(foot).  Returns
    | ghat - (x - foot)/h |, which the contract bounds by 1e-5.
    """
    from .feature_size import lfs  # deferred to avoid an import cycle

    x = np.asarray(x, dtype=float).reshape(3)
    r = project(surface, x)
    h0 = r.distance
    f_foot = lfs(surface, r.foot)
    if not 0.0 < h0 < f_foot:
        raise DomainError(
            f"gradient identity needs 0 < h < f(foot); got h={h0:.3e}, f={f_foot:.3e}")
    step = FD_STEP_FACTOR * surface.diagonal
    shifts = np.vstack([x + step * e for e in np.eye(3)] +
                       [x - step * e for e in np.eye(3)])
    h = distance_to_surface(surface, shifts)
    ghat = (h[:3] - h[3:]) / (2.0 * step)
    gn = np.linalg.norm(ghat)
    if gn == 0.0:
        raise DomainError("finite-difference gradient vanished")
    direction = (x - r.foot) / h0
    return float(np.linalg.norm(ghat / gn - direction))
