"""Concave envelopes of sampled value functions on simplex faces.

The central object is the upper concave envelope Cav(v) of a non-revealing
value v, computed from a finite sample grid on a face of the belief
simplex.  Everything downstream consumes the envelope in one of three
forms: pointwise evaluation (hull interpolation = min over supporting
facet planes), optimal splits of a belief into hull vertices of the active
facet, and the restricted superdifferential at a point, described as an
H-polyhedron of chart gradients.

Gradients of v itself are probed through clarke_gradient, which collects
limit gradients along sampled directions and reports their convex hull.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .games import (
    GameError,
    SimplexChart,
    gradient_from_actions,
    KinkDetected,
    nr_values_on_points,
)

GRID_RES_1D = 1e-3
GRID_RES_MULTI = 2e-2


class EnvelopeError(Exception):
    """Bad grid data or an envelope computation that cannot proceed."""


class AllProbesKinked(EnvelopeError):
    """Every gradient probe hit a non-smooth point; no limit gradients found."""


def composition_grid(n_coords, resolution):
    """Uniform barycentric grid on the (n_coords-1)-simplex.

    Rows are all compositions of round(1/resolution) steps, in
    lexicographic order; all simplex vertices are included.
    """
    if n_coords < 1:
        raise EnvelopeError("need at least one coordinate")
    if n_coords == 1:
        return np.ones((1, 1))
    m = int(round(1.0 / resolution))
    if m < 1:
        raise EnvelopeError(f"resolution {resolution} coarser than the simplex")
    out = []

    def rec(prefix, remaining, parts):
        if parts == 1:
            out.append(prefix + [remaining])
            return
        for i in range(remaining + 1):
            rec(prefix + [i], remaining - i, parts - 1)

    rec([], m, n_coords)
    return np.asarray(out, dtype=float) / m


@dataclass(frozen=True)
class ValueGrid:
    """Sampled values on a face of the belief simplex.

    face holds the ambient state indices the face spans; points are
    face-local beliefs (N, len(face)); values is the sampled function.
    """

    face: tuple
    n_states: int
    points: np.ndarray
    values: np.ndarray
    resolution: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != len(self.face):
            raise EnvelopeError("points must be (N, len(face))")
        if vals.shape != (pts.shape[0],):
            raise EnvelopeError("values length does not match points")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(vals)):
            raise EnvelopeError("grid contains non-finite data")
        if np.min(pts) < -1e-12 or np.max(np.abs(pts.sum(axis=1) - 1.0)) > 1e-9:
            raise EnvelopeError("grid points must be face-local beliefs")
        for k, idx in enumerate(self.face):
            if not 0 <= idx < self.n_states:
                raise EnvelopeError(f"face index {idx} out of range")
        pts = pts.copy()
        vals = vals.copy()
        pts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return len(self.face) - 1

    @property
    def value_scale(self):
        return max(1.0, float(np.max(np.abs(self.values))))

    def embed(self, face_points=None):
        """Map face-local beliefs to full ambient beliefs (zeros elsewhere)."""
        pts = self.points if face_points is None else np.atleast_2d(face_points)
        full = np.zeros((pts.shape[0], self.n_states))
        full[:, list(self.face)] = pts
        return full

    def vertex_rows(self):
        """Row indices of the face's corner points e_k (present by contract)."""
        rows = []
        for k in range(len(self.face)):
            hit = np.flatnonzero(np.abs(self.points[:, k] - 1.0) < 1e-12)
            if hit.size == 0:
                raise EnvelopeError("grid is missing a face vertex")
            rows.append(int(hit[0]))
        return rows


def default_resolution(face_size):
    return GRID_RES_1D if face_size <= 2 else GRID_RES_MULTI


def sample_value(family, face=None, resolution=None):
    """Sample the non-revealing value of a family on a face of its simplex."""
    if face is None:
        face = tuple(range(family.n_states))
    face = tuple(int(k) for k in face)
    if resolution is None:
        resolution = default_resolution(len(face))
    pts = composition_grid(len(face), resolution)
    grid = ValueGrid(face=face, n_states=family.n_states, points=pts,
                     values=np.zeros(pts.shape[0]), resolution=resolution)
    vals = nr_values_on_points(family, grid.embed())
    return ValueGrid(face=face, n_states=family.n_states, points=pts,
                     values=vals, resolution=resolution)


@dataclass(frozen=True)
class Facet:
    """One supporting affine piece psi: value psi . q at face-local q."""

    psi: np.ndarray
    vertex_rows: tuple


@dataclass(frozen=True)
class ConcaveEnvelope:
    grid: ValueGrid
    facets: tuple
    vertex_rows: tuple

    @property
    def psi_matrix(self):
        return np.stack([f.psi for f in self.facets])

    @property
    def vertex_points(self):
        return self.grid.points[list(self.vertex_rows)]

    @property
    def vertex_values(self):
        return self.grid.values[list(self.vertex_rows)]

    def eval(self, q_face):
        return float(self.eval_batch(np.atleast_2d(np.asarray(q_face, dtype=float)))[0])

    def eval_batch(self, q_faces):
        q = np.atleast_2d(np.asarray(q_faces, dtype=float))
        if q.shape[1] != len(self.grid.face):
            raise EnvelopeError("query has wrong number of face coordinates")
        return np.min(q @ self.psi_matrix.T, axis=1)

    def active_facet(self, q_face, tol=1e-9):
        """Index of the first facet attaining the envelope at q (tie -> lowest)."""
        vals = self.psi_matrix @ np.asarray(q_face, dtype=float)
        return int(np.argmin(vals)), float(np.min(vals))

    def active_facets(self, q_face, tol=None):
        vals = self.psi_matrix @ np.asarray(q_face, dtype=float)
        lo = float(np.min(vals))
        if tol is None:
            tol = 1e-9 * self.grid.value_scale
        return [i for i in range(len(self.facets)) if vals[i] <= lo + tol]


def concavify(grid):
    """Upper concave envelope of a sampled grid.

    1-D faces use a monotone-chain upper hull; 2-D and 3-D faces lift to
    chart coordinates and take the upper facets of a convex hull; an exact
    affine sample short-circuits to a single facet.  Faces of dimension
    above 3 are not supported here (see eval_cav_lp).
    """
    dim = grid.dim
    if dim == 0:
        facet = Facet(psi=np.array([grid.values[0]]), vertex_rows=(0,))
        return ConcaveEnvelope(grid=grid, facets=(facet,), vertex_rows=(0,))
    if dim == 1:
        return _concavify_1d(grid)
    if dim > 3:
        raise EnvelopeError(
            "exact envelopes are built for faces of dimension <= 3; "
            "use eval_cav_lp for higher-dimensional queries"
        )
    affine = _try_affine(grid)
    if affine is not None:
        return affine
    return _concavify_hull(grid)


def _concavify_1d(grid):
    order = np.argsort(grid.points[:, 0], kind="stable")
    xs = grid.points[order, 0]
    vs = grid.values[order]
    # collapse duplicate x to the max value (upper envelope of the sample)
    keep = []
    i = 0
    while i < len(xs):
        j = i
        best = i
        while j < len(xs) and xs[j] - xs[i] < 1e-15:
            if vs[j] > vs[best]:
                best = j
            j += 1
        keep.append(best)
        i = j
    xs_k = xs[keep]
    vs_k = vs[keep]
    stack = []
    for idx in range(len(xs_k)):
        while len(stack) >= 2:
            a, b = stack[-2], stack[-1]
            cross = (xs_k[b] - xs_k[a]) * (vs_k[idx] - vs_k[a]) - \
                    (vs_k[b] - vs_k[a]) * (xs_k[idx] - xs_k[a])
            if cross >= 0.0:
                stack.pop()
            else:
                break
        stack.append(idx)
    hull_rows = [int(order[keep[s]]) for s in stack]
    facets = []
    for a, b in zip(hull_rows[:-1], hull_rows[1:]):
        xa, va = grid.points[a, 0], grid.values[a]
        xb, vb = grid.points[b, 0], grid.values[b]
        slope = (vb - va) / (xb - xa)
        # psi over face coords (q, 1-q): psi[0] = value at q=1, psi[1] at q=0
        psi = np.array([va + slope * (1.0 - xa), va + slope * (0.0 - xa)])
        facets.append(Facet(psi=psi, vertex_rows=(a, b)))
    return ConcaveEnvelope(grid=grid, facets=tuple(facets),
                           vertex_rows=tuple(sorted(set(hull_rows))))


def _face_chart_psi(c0, g, f):
    """Affine a(x) = c0 + g.x on the drop-last chart, as psi over face coords."""
    psi = np.full(f, c0)
    psi[: f - 1] += g
    return psi


def _try_affine(grid, tol_factor=1e-11):
    f = len(grid.face)
    x = grid.points[:, : f - 1]
    design = np.hstack([np.ones((grid.n_points, 1)), x])
    coef, *_ = np.linalg.lstsq(design, grid.values, rcond=None)
    resid = design @ coef - grid.values
    if np.max(np.abs(resid)) > tol_factor * grid.value_scale:
        return None
    psi = _face_chart_psi(coef[0], coef[1:], f)
    vert_rows = grid.vertex_rows()
    facet = Facet(psi=psi, vertex_rows=tuple(vert_rows))
    return ConcaveEnvelope(grid=grid, facets=(facet,),
                           vertex_rows=tuple(sorted(set(vert_rows))))


def _concavify_hull(grid):
    f = len(grid.face)
    x = grid.points[:, : f - 1]
    lifted = np.hstack([x, grid.values[:, None]])
    try:
        hull = ConvexHull(lifted)
    except QhullError as exc:
        raise EnvelopeError(f"convex hull failed on the lifted grid: {exc}") from exc
    facets = []
    vert_rows = set()
    for eq, simplex in zip(hull.equations, hull.simplices):
        normal_v = eq[-2]
        if normal_v <= 1e-12:
            continue
        # points on the facet satisfy a_x . x + a_v v + b = 0
        a_x = eq[:-2]
        b = eq[-1]
        g = -a_x / normal_v
        c0 = -b / normal_v
        psi = _face_chart_psi(c0, g, f)
        rows = tuple(sorted(int(r) for r in simplex))
        facets.append(Facet(psi=psi, vertex_rows=rows))
        vert_rows.update(rows)
    if not facets:
        raise EnvelopeError("no upper facets found (degenerate lifted hull)")
    return ConcaveEnvelope(grid=grid, facets=tuple(facets),
                           vertex_rows=tuple(sorted(vert_rows)))


def eval_cav(envelope, q_face):
    """Envelope value by hull interpolation (min over supporting facets)."""
    q = np.asarray(q_face, dtype=float).ravel()
    if q.shape != (len(envelope.grid.face),):
        raise EnvelopeError("query has wrong number of face coordinates")
    if np.min(q) < -1e-9 or abs(float(np.sum(q)) - 1.0) > 1e-9:
        raise EnvelopeError(f"query {q} is not a face-local belief")
    return envelope.eval(np.clip(q, 0.0, None) / np.sum(np.clip(q, 0.0, None)))


def eval_cav_lp(grid, q_face):
    """Envelope value at one point by LP over the sample (any dimension)."""
    q = np.asarray(q_face, dtype=float).ravel()
    n = grid.n_points
    a_eq = np.vstack([grid.points.T, np.ones((1, n))])
    b_eq = np.concatenate([q, [1.0]])
    res = linprog(-grid.values, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0.0, None)] * n, method="highs")
    if not res.success:
        raise EnvelopeError(f"envelope LP failed at {q}: {res.message}")
    return -float(res.fun)


@dataclass(frozen=True)
class SplitScheme:
    """A finite splitting of a belief: weights alphas on posteriors.

    posteriors are face-local rows; sum_i alphas_i posteriors_i equals the
    barycenter.
    """

    face: tuple
    n_states: int
    alphas: np.ndarray
    posteriors: np.ndarray
    barycenter: np.ndarray

    @property
    def n_atoms(self):
        return len(self.alphas)

    def embed_posteriors(self):
        full = np.zeros((self.n_atoms, self.n_states))
        full[:, list(self.face)] = self.posteriors
        return full

    def validate(self, tol=1e-10):
        a = self.alphas
        if np.min(a) <= 0:
            raise EnvelopeError("split weights must be strictly positive")
        if abs(float(np.sum(a)) - 1.0) > 1e-12:
            raise EnvelopeError("split weights must sum to 1")
        recon = a @ self.posteriors
        err = float(np.max(np.abs(recon - self.barycenter)))
        if err > tol:
            raise EnvelopeError(f"split barycenter off by {err}")
        return True


def optimal_split(envelope, q_face, value_fn=None, tol=1e-6):
    """A Cav-achieving split of q into hull vertices of an active facet.

    When the envelope already touches the sampled value at q (within tol,
    scaled by value magnitude) the degenerate single-atom split is
    returned; value_fn, if given, supplies the exact v(q) for that test
    (otherwise the grid is consulted only if q is a grid point).
    """
    grid = envelope.grid
    q = np.asarray(q_face, dtype=float).ravel()
    scale = grid.value_scale
    cav_q = envelope.eval(q)
    v_q = None
    if value_fn is not None:
        v_q = float(value_fn(q))
    else:
        hit = np.flatnonzero(np.max(np.abs(grid.points - q), axis=1) < 1e-12)
        if hit.size:
            v_q = float(grid.values[hit[0]])
    if v_q is not None and cav_q - v_q <= tol * scale:
        return SplitScheme(face=grid.face, n_states=grid.n_states,
                           alphas=np.array([1.0]), posteriors=q[None, :].copy(),
                           barycenter=q.copy())
    # Near-collinear hull stretches make the active facet ambiguous, so try
    # every facet that is active within tolerance and keep the first whose
    # barycentric weights come out nonnegative.
    rhs = np.concatenate([q[:-1], [1.0]])
    alphas = None
    pts = None
    for fi in envelope.active_facets(q):
        facet = envelope.facets[fi]
        rows = list(facet.vertex_rows)
        cand_pts = grid.points[rows]
        mat = np.vstack([cand_pts.T[:-1], np.ones(len(rows))])
        if mat.shape[0] == mat.shape[1]:
            try:
                cand = np.linalg.solve(mat, rhs)
            except np.linalg.LinAlgError:
                cand, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
        else:
            cand, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
        alphas = cand
        pts = cand_pts
        if np.min(cand) >= -1e-7:
            break
    if alphas is None or np.min(alphas) < -1e-7:
        raise EnvelopeError(
            f"no active facet contains the query point (weights {alphas})"
        )
    alphas = np.clip(alphas, 0.0, None)
    keep = alphas > 1e-12
    alphas = alphas[keep]
    pts = pts[keep]
    alphas = alphas / np.sum(alphas)
    scheme = SplitScheme(face=grid.face, n_states=grid.n_states,
                         alphas=alphas, posteriors=pts.copy(),
                         barycenter=q.copy())
    scheme.validate()
    return scheme


@dataclass(frozen=True)
class Superdifferential:
    """H-polyhedron {g : rows . g <= rhs} of restricted supergradients.

    Chart gradients g such that cav(q) + g.(x_w - x_q) >= cav(w) for every
    hull vertex w of the envelope; since the envelope is piecewise linear
    this finite system is equivalent to the same inequality over the whole
    face.
    """

    rows: np.ndarray
    rhs: np.ndarray
    point: np.ndarray

    def residual(self, g):
        g = np.atleast_1d(np.asarray(g, dtype=float))
        if self.rows.shape[0] == 0:
            return 0.0
        return float(np.max(self.rows @ g - self.rhs))

    def contains(self, g, tol=1e-6):
        return self.residual(g) <= tol

    def interval(self):
        """(lower, upper) bounds for 1-D faces; infinities when unbounded."""
        if self.rows.shape[1] != 1:
            raise EnvelopeError("interval() is only defined on 1-D faces")
        lo, hi = -np.inf, np.inf
        for a, b in zip(self.rows[:, 0], self.rhs):
            if a > 1e-15:
                hi = min(hi, b / a)
            elif a < -1e-15:
                lo = max(lo, b / a)
            elif b < -1e-12:
                raise EnvelopeError("empty superdifferential (inconsistent rows)")
        return lo, hi


def restricted_superdifferential(envelope, q_face):
    grid = envelope.grid
    q = np.asarray(q_face, dtype=float).ravel()
    cav_q = envelope.eval(q)
    dim = grid.dim
    xq = q[:dim]
    rows = []
    rhs = []
    for r in envelope.vertex_rows:
        xw = grid.points[r, :dim]
        rows.append(xq - xw)
        rhs.append(cav_q - grid.values[r])
    return Superdifferential(rows=np.asarray(rows, dtype=float),
                             rhs=np.asarray(rhs, dtype=float), point=q.copy())


@dataclass(frozen=True)
class ClarkeGradientSample:
    """Limit gradients of the extended value near a point, one per direction.

    hull membership is measured in sup norm through a small LP (exact
    interval arithmetic on 1-D charts).
    """

    point: np.ndarray
    gradients: np.ndarray
    directions: np.ndarray
    failed_directions: int

    @property
    def n_gradients(self):
        return self.gradients.shape[0]

    def hull_interval(self):
        if self.gradients.shape[1] != 1:
            raise EnvelopeError("hull_interval() is only defined on 1-D charts")
        return float(np.min(self.gradients)), float(np.max(self.gradients))

    def hull_distance(self, g):
        g = np.atleast_1d(np.asarray(g, dtype=float))
        pts = self.gradients
        if pts.shape[1] == 1:
            lo, hi = self.hull_interval()
            return float(max(0.0, lo - g[0], g[0] - hi))
        n, d = pts.shape
        # min eps s.t. |pts^T mu - g|_inf <= eps, mu in simplex
        c = np.zeros(n + 1)
        c[n] = 1.0
        a_ub = np.vstack([
            np.hstack([pts.T, -np.ones((d, 1))]),
            np.hstack([-pts.T, -np.ones((d, 1))]),
        ])
        b_ub = np.concatenate([g, -g])
        a_eq = np.zeros((1, n + 1))
        a_eq[0, :n] = 1.0
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                      bounds=[(0.0, None)] * n + [(0.0, None)], method="highs")
        if not res.success:
            raise EnvelopeError(f"hull distance LP failed: {res.message}")
        return float(res.x[n])

    def contains(self, g, tol=1e-3):
        return self.hull_distance(g) <= tol


def clarke_gradient(family, point, n_dirs=64, step_min=1e-6, step_max=1e-2,
                    n_steps=9, seed=2024, fd_tol=1e-3):
    """Sampled limit gradients of the extended non-revealing value.

    Probes each direction at geometrically shrinking offsets, keeping the
    gradient from the smallest smooth offset; raises AllProbesKinked when
    no direction yields any smooth probe.
    """
    chart = SimplexChart(family.n_states)
    x0 = chart.from_point(point)
    dim = chart.dim
    if dim == 0:
        raise EnvelopeError("a single-state family has no chart directions")
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((n_dirs, dim))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        dirs = raw / norms
    steps = np.geomspace(step_min, step_max, n_steps)
    grads = []
    used = []
    failed = 0
    for u in dirs:
        found = None
        for h in steps:
            x = x0 + h * u
            try:
                g, _ = gradient_from_actions(family, chart.to_point(x),
                                             chart=chart, fd_tol=fd_tol)
            except KinkDetected:
                continue
            found = g
            break
        if found is None:
            failed += 1
        else:
            grads.append(found)
            used.append(u)
    if not grads:
        raise AllProbesKinked(
            f"no smooth probe found around {np.asarray(point)} "
            f"({failed} directions, steps {step_min}..{step_max})"
        )
    return ClarkeGradientSample(point=np.asarray(point, dtype=float),
                                gradients=np.asarray(grads),
                                directions=np.asarray(used),
                                failed_directions=failed)


def grid_table(grid, envelope=None, labels=None):
    """(header, rows) pairs for CSV export of a grid and its envelope."""
    f = len(grid.face)
    if labels is None:
        labels = [f"p_{k}" for k in grid.face]
    header = list(labels) + ["value"]
    cav = None
    if envelope is not None:
        header.append("cav_value")
        cav = envelope.eval_batch(grid.points)
    rows = []
    for i in range(grid.n_points):
        row = [float(grid.points[i, j]) for j in range(f)] + [float(grid.values[i])]
        if cav is not None:
            row.append(float(cav[i]))
        rows.append(row)
    return header, rows
