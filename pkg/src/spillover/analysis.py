"""Certification of non-revealing equilibrium payoffs and the payoff interval.

A JointScenario couples two stage-game families through a joint prior over
state pairs.  The informed player faces both uninformed opponents at once,
so revealing information in one interaction leaks it into the other.  The
analysis here answers the static questions: does a family admit the NR
property at its marginal prior, is the set of non-revealing equilibrium
payoffs NR(p) nonempty, does a supplied payoff pair belong to the joint
set, and what is the interval of candidate equilibrium payoffs
[Cav(h)(p0), Cav(v_A)(p0_A) + Cav(v_B)(p0_B)] with h = v_A + v_B on the
support face.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from .games import (
    GameError,
    GameFamily,
    KinkDetected,
    SimplexChart,
    as_belief,
    gradient_from_actions,
    nr_value,
    nr_values_on_points,
)
from .envelope import (
    AllProbesKinked,
    ClarkeGradientSample,
    ConcaveEnvelope,
    EnvelopeError,
    SplitScheme,
    ValueGrid,
    clarke_gradient,
    composition_grid,
    concavify,
    default_resolution,
    eval_cav,
    eval_cav_lp,
    optimal_split,
    restricted_superdifferential,
    sample_value,
)

_LP_OPTS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass(frozen=True)
class JointScenario:
    """Two families tied together by a joint prior over state pairs.

    options carries analysis defaults from a scenario file (grid
    resolution, tolerance, horizons, seeds); code paths read it through
    callers, never implicitly.
    """

    name: str
    family_a: GameFamily
    family_b: GameFamily
    prior: np.ndarray
    description: str = ""
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.prior, dtype=float)
        ka, kb = self.family_a.n_states, self.family_b.n_states
        if p.shape != (ka, kb):
            raise GameError(
                f"prior shape {p.shape} does not match state counts ({ka}, {kb})"
            )
        if np.min(p) < -1e-12:
            raise GameError("prior has negative entries")
        total = float(np.sum(p))
        if abs(total - 1.0) > 1e-9:
            raise GameError(f"prior sums to {total}, not 1")
        p = np.clip(p, 0.0, None) / np.sum(np.clip(p, 0.0, None))
        p.flags.writeable = False
        object.__setattr__(self, "prior", p)

    @property
    def marginal_a(self):
        return self.prior.sum(axis=1)

    @property
    def marginal_b(self):
        return self.prior.sum(axis=0)

    @property
    def support_pairs(self):
        ka, kb = self.prior.shape
        return tuple((ia, ib) for ia in range(ka) for ib in range(kb)
                     if self.prior[ia, ib] > 1e-12)

    @property
    def prior_on_support(self):
        return np.array([self.prior[ia, ib] for ia, ib in self.support_pairs])

    def support_is_rectangle(self):
        pairs = set(self.support_pairs)
        rows = sorted({ia for ia, _ in pairs})
        cols = sorted({ib for _, ib in pairs})
        return all((ia, ib) in pairs for ia in rows for ib in cols)

    def face_marginal_maps(self, face_pairs=None):
        """Matrices sending face-local beliefs to full marginal beliefs."""
        pairs = self.support_pairs if face_pairs is None else tuple(face_pairs)
        ka, kb = self.prior.shape
        ma = np.zeros((len(pairs), ka))
        mb = np.zeros((len(pairs), kb))
        for r, (ia, ib) in enumerate(pairs):
            ma[r, ia] = 1.0
            mb[r, ib] = 1.0
        return ma, mb

    def h_values(self, face_points, face_pairs=None):
        """h(q) = v_A(q_A) + v_B(q_B) for face-local beliefs q."""
        pts = np.atleast_2d(np.asarray(face_points, dtype=float))
        ma, mb = self.face_marginal_maps(face_pairs)
        va = nr_values_on_points(self.family_a, pts @ ma)
        vb = nr_values_on_points(self.family_b, pts @ mb)
        return va + vb

    def sum_family(self, face_pairs=None):
        """The combined family A (+) B on the given state pairs.

        Informed actions are pairs (row in A, row in B); uninformed
        columns are pairs (col in A, col in B); payoffs add.
        """
        pairs = self.support_pairs if face_pairs is None else tuple(face_pairs)
        fa, fb = self.family_a, self.family_b
        states = tuple(f"{fa.states[ia]}+{fb.states[ib]}" for ia, ib in pairs)
        rows = tuple(f"{ra}&{rb}" for ra in fa.rows for rb in fb.rows)
        cols = tuple(f"{ca}&{cb}" for ca in fa.cols for cb in fb.cols)
        mats = np.zeros((len(pairs), len(rows), len(cols)))
        for s, (ia, ib) in enumerate(pairs):
            block = fa.matrices[ia][:, None, :, None] + fb.matrices[ib][None, :, None, :]
            mats[s] = block.reshape(len(rows), len(cols))
        return GameFamily(states=states, rows=rows, cols=cols, matrices=mats)


def sum_value_grid(scenario, resolution=None, extra_points=None):
    """Sampled h = v_A + v_B on the support face of the joint prior."""
    pairs = scenario.support_pairs
    f = len(pairs)
    if resolution is None:
        resolution = default_resolution(f)
    pts = composition_grid(f, resolution)
    if extra_points is not None and len(extra_points):
        extra = np.atleast_2d(np.asarray(extra_points, dtype=float))
        pts = np.vstack([pts, extra])
    vals = scenario.h_values(pts)
    n_joint = scenario.family_a.n_states * scenario.family_b.n_states
    face = tuple(ia * scenario.family_b.n_states + ib for ia, ib in pairs)
    return ValueGrid(face=face, n_states=n_joint, points=pts, values=vals,
                     resolution=resolution)


def _append_new_points(base, candidates, tol=1e-12):
    """base with the candidate rows that duplicate nothing appended."""
    out = base
    for q in candidates:
        if np.min(np.max(np.abs(out - q[None, :]), axis=1)) < tol:
            continue
        out = np.vstack([out, q[None, :]])
    return out


def nr_envelope(family, extra_points=None, resolution=None, refine=True):
    """Envelope of the non-revealing value with optional touch refinement.

    Adds the supplied points to the sample grid, then sharpens the hull
    vertices of facets active at those points by locally maximizing
    v - psi.q; the refined touch points make facet slopes agree with the
    value's gradients to refinement precision instead of grid resolution.
    """
    if resolution is None:
        resolution = default_resolution(family.n_states)
    face = tuple(range(family.n_states))
    pts = composition_grid(family.n_states, resolution)
    extras = []
    if extra_points is not None:
        for p in np.atleast_2d(np.asarray(extra_points, dtype=float)):
            extras.append(p)
    if extras:
        pts = np.vstack([pts] + [e[None, :] for e in extras])
    grid = ValueGrid(face=face, n_states=family.n_states, points=pts,
                     values=nr_values_on_points(family, pts), resolution=resolution)
    env = concavify(grid)
    if not refine or extra_points is None:
        return env
    new_points = []
    for p in np.atleast_2d(np.asarray(extra_points, dtype=float)):
        for fi in env.active_facets(p):
            facet = env.facets[fi]
            for row in facet.vertex_rows:
                refined = _refine_touch(family, facet.psi, grid.points[row],
                                        resolution)
                if refined is not None:
                    new_points.append(refined)
    if not new_points:
        return env
    combined = _append_new_points(pts, new_points)
    grid2 = ValueGrid(face=face, n_states=family.n_states, points=combined,
                      values=nr_values_on_points(family, combined),
                      resolution=resolution)
    return concavify(grid2)


def _refine_touch(family, psi, vertex, resolution):
    """Locally maximize v(q) - psi.q around a hull vertex.

    Returns a sharper touch point, or None when the vertex already is one
    (to working precision) or the search leaves the simplex.
    """
    k = family.n_states
    psi = np.asarray(psi, dtype=float)

    def gap(q):
        return nr_value(family, q) - float(psi @ q)

    if k == 2:
        x = float(vertex[0])
        lo, hi = max(0.0, x - resolution), min(1.0, x + resolution)
        for _ in range(3):
            xs = np.linspace(lo, hi, 81)
            pts = np.stack([xs, 1.0 - xs], axis=1)
            gaps = nr_values_on_points(family, pts) - pts @ psi
            j = int(np.argmax(gaps))
            width = (hi - lo) / 80.0
            lo, hi = max(0.0, xs[j] - width), min(1.0, xs[j] + width)
            best_x = xs[j]
        refined = np.array([best_x, 1.0 - best_x])
    else:
        x0 = vertex[:-1]

        def neg_gap(x):
            q = np.concatenate([x, [1.0 - float(np.sum(x))]])
            return -gap(q)

        res = minimize(neg_gap, x0, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 400})
        x = res.x
        q = np.concatenate([x, [1.0 - float(np.sum(x))]])
        if np.min(q) < -1e-9:
            return None
        refined = np.clip(q, 0.0, None)
        refined = refined / np.sum(refined)
    if np.max(np.abs(refined - vertex)) < 1e-12:
        return None
    if gap(refined) < gap(np.asarray(vertex, dtype=float)):
        return None
    return refined


@dataclass(frozen=True)
class NrCertificate:
    """A pair (p_star, phi) witnessing the NR property at a prior."""

    p_star: np.ndarray
    phi: np.ndarray
    diagnostics: dict

    def to_record(self):
        return {
            "p_star": [float(x) for x in self.p_star],
            "phi": [float(x) for x in self.phi],
            "residuals": {k: float(v) for k, v in self.diagnostics.items()},
        }


@dataclass(frozen=True)
class CandidateReport:
    point: np.ndarray
    phi: np.ndarray
    label: str
    residuals: dict
    passed: bool
    note: str = ""

    def to_record(self):
        return {
            "label": self.label,
            "point": [float(x) for x in self.point],
            "phi": [float(x) for x in self.phi],
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "passed": bool(self.passed),
            "note": self.note,
        }


CERTIFICATE = "certificate"
NOT_FOUND = "not_found"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class NrPropertyResult:
    status: str
    certificate: NrCertificate | None
    attempts: tuple

    @property
    def found(self):
        return self.status == CERTIFICATE

    def to_record(self):
        return {
            "status": self.status,
            "certificate": self.certificate.to_record() if self.certificate else None,
            "attempts": [a.to_record() for a in self.attempts],
        }

    def render_text(self):
        lines = [f"NR property: {self.status}"]
        if self.certificate is not None:
            c = self.certificate
            lines.append(f"  p_star = {np.round(c.p_star, 10).tolist()}")
            lines.append(f"  phi    = {np.round(c.phi, 10).tolist()}")
            for k, v in c.diagnostics.items():
                lines.append(f"  {k}: {v:.3e}")
        else:
            for a in self.attempts:
                res = ", ".join(f"{k}={v:.3e}" for k, v in a.residuals.items())
                note = f" ({a.note})" if a.note else ""
                lines.append(f"  candidate {a.label}: {res}{note}")
        return "\n".join(lines)


def _tangent_affine(chart, point, value, grad):
    """The affine function through (point, value) with chart gradient grad.

    Returned as the vector of its values at the simplex vertices.
    """
    k = chart.n_states
    x0 = chart.from_point(point)
    phi = np.zeros(k)
    for j in range(k):
        xj = np.zeros(k - 1)
        if j < k - 1:
            xj[j] = 1.0
        phi[j] = value + float(np.dot(grad, xj - x0))
    return phi


def check_nr_property(family, prior, chart=None, envelope=None, resolution=None,
                      refine=True, cond1_tol=1e-5, cond2_tol=1e-3,
                      cond3_tol=1e-6, clarke_kwargs=None):
    """Search for an NR certificate (p_star, phi) at the given prior.

    Candidates follow the supporting-hyperplane construction: hull
    vertices of envelope facets active at the prior paired with the
    facet's affine representative, preceded by the exact tangent at the
    prior whenever Cav(v) = v there.  Each candidate is checked for
    (1) the value/Cav/phi equalities at p_star and the prior, (2) phi S
    inside the hull of sampled limit gradients of v at p_star, and
    (3) phi S inside the restricted superdifferential of Cav at p_star.
    """
    prior = as_belief(prior)
    k = family.n_states
    if chart is None:
        chart = SimplexChart(k)
    scale = family.payoff_scale
    if envelope is None:
        envelope = nr_envelope(family, extra_points=[prior],
                               resolution=resolution, refine=refine)
    env = envelope
    cav_prior = env.eval(prior)
    v_prior = nr_value(family, prior)
    candidates = []
    if cav_prior - v_prior <= cond1_tol * scale:
        try:
            grad, _ = gradient_from_actions(family, prior, chart=chart)
            phi = _tangent_affine(chart, prior, v_prior, grad)
            candidates.append((prior, phi, "tangent-at-prior"))
        except KinkDetected:
            pass
    for fi in env.active_facets(prior):
        facet = env.facets[fi]
        for row in facet.vertex_rows:
            candidates.append((env.grid.points[row], facet.psi.copy(),
                               f"facet{fi}-row{row}"))
    seen = set()
    unique = []
    for point, phi, label in candidates:
        key = (tuple(np.round(point, 11)), tuple(np.round(phi, 11)))
        if key in seen:
            continue
        seen.add(key)
        unique.append((point, phi, label))
    attempts = []
    saw_inconclusive = False
    ckw = dict(clarke_kwargs or {})
    for point, phi, label in unique:
        residuals = {}
        note = ""
        phi_s = phi @ chart.linear_part
        v_pt = nr_value(family, point)
        cav_pt = env.eval(point)
        residuals["cond1"] = max(
            abs(cav_pt - v_pt),
            abs(v_pt - float(phi @ point)),
            abs(cav_prior - float(phi @ prior)),
        )
        cond2_ok = False
        if residuals["cond1"] <= cond1_tol * scale:
            try:
                clarke = _clarke_with_quotients(family, point, chart, ckw)
                residuals["cond2"] = clarke.hull_distance(phi_s)
                cond2_ok = residuals["cond2"] <= cond2_tol
            except AllProbesKinked:
                residuals["cond2"] = float("nan")
                note = "all gradient probes kinked"
                saw_inconclusive = True
        else:
            residuals["cond2"] = float("nan")
            note = "condition (1) failed, (2) skipped"
        sd = restricted_superdifferential(env, point)
        residuals["cond3"] = max(0.0, sd.residual(phi_s))
        passed = (residuals["cond1"] <= cond1_tol * scale and cond2_ok
                  and residuals["cond3"] <= cond3_tol)
        attempts.append(CandidateReport(point=np.asarray(point, dtype=float),
                                        phi=np.asarray(phi, dtype=float),
                                        label=label, residuals=residuals,
                                        passed=passed, note=note))
        if passed:
            cert = NrCertificate(p_star=np.asarray(point, dtype=float),
                                 phi=np.asarray(phi, dtype=float),
                                 diagnostics=dict(residuals))
            return NrPropertyResult(status=CERTIFICATE, certificate=cert,
                                    attempts=tuple(attempts))
    status = INCONCLUSIVE if saw_inconclusive else NOT_FOUND
    return NrPropertyResult(status=status, certificate=None,
                            attempts=tuple(attempts))


def _clarke_with_quotients(family, point, chart, clarke_kwargs):
    """Clarke samples, widened on 1-D charts by exact one-sided quotients."""
    sample = clarke_gradient(family, point, **clarke_kwargs)
    if chart.dim != 1:
        return sample
    x0 = chart.from_point(point)[0]
    v0 = nr_value(family, chart.to_point([x0]))
    quotients = []
    for h in (1e-6, 1e-7):
        right = (nr_value(family, chart.to_point([x0 + h])) - v0) / h
        left = (v0 - nr_value(family, chart.to_point([x0 - h]))) / h
        quotients.append([right])
        quotients.append([left])
    grads = np.vstack([sample.gradients, np.asarray(quotients)])
    return ClarkeGradientSample(point=sample.point, gradients=grads,
                                directions=sample.directions,
                                failed_directions=sample.failed_directions)


def check_locally_nonrevealing(family, prior, envelope=None, resolution=None,
                               margin=1e-6, tol=1e-6):
    """An optimal split with an interior atom, or None when none exists.

    Considers facet-vertex splits of the envelope only.  When Cav(v)
    already equals v at the prior the trivial one-atom split qualifies if
    the prior itself is interior.
    """
    prior = as_belief(prior)
    if envelope is None:
        envelope = concavify(sample_value(family, resolution=resolution))
    env = envelope
    scale = family.payoff_scale
    cav_p = env.eval(prior)
    v_p = nr_value(family, prior)
    if cav_p - v_p <= tol * scale:
        if np.min(prior) >= margin:
            return SplitScheme(face=env.grid.face, n_states=family.n_states,
                               alphas=np.array([1.0]),
                               posteriors=prior[None, :].copy(),
                               barycenter=prior.copy())
        return None
    for fi in env.active_facets(prior):
        facet = env.facets[fi]
        rows = list(facet.vertex_rows)
        pts = env.grid.points[rows]
        mat = np.vstack([pts.T[:-1], np.ones(len(rows))])
        rhs = np.concatenate([prior[:-1], [1.0]])
        try:
            if mat.shape[0] == mat.shape[1]:
                alphas = np.linalg.solve(mat, rhs)
            else:
                alphas, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
        except np.linalg.LinAlgError:
            continue
        if np.max(np.abs(pts.T @ alphas - prior)) > 1e-8:
            continue
        if np.min(alphas) < -1e-9:
            continue
        alphas = np.clip(alphas, 0.0, None)
        keep = alphas > 1e-12
        alphas = alphas[keep] / np.sum(alphas[keep])
        pts = pts[keep]
        if pts.shape[0] == 0:
            continue
        if not any(np.min(pts[i]) >= margin for i in range(pts.shape[0])):
            continue
        scheme = SplitScheme(face=env.grid.face, n_states=family.n_states,
                             alphas=alphas, posteriors=pts.copy(),
                             barycenter=prior.copy())
        scheme.validate(tol=1e-7)
        return scheme
    return None


@dataclass(frozen=True)
class NrPayoffResult:
    """Outcome of the NR payoff feasibility program.

    status "found" carries phi and the mixing weights over pure action
    cells realizing it; "empty" carries the infeasibility certificate
    (nonnegative grid weights plus multipliers whose combination exceeds
    every pure cell's payoff by `gap`).
    """

    status: str
    prior: np.ndarray
    cav_at_prior: float
    phi: np.ndarray | None = None
    weights: np.ndarray | None = None
    violation: float = 0.0
    certificate: dict | None = None

    @property
    def found(self):
        return self.status == "found"

    def to_record(self):
        rec = {
            "status": self.status,
            "prior": [float(x) for x in self.prior],
            "cav_at_prior": float(self.cav_at_prior),
            "violation": float(self.violation),
        }
        if self.phi is not None:
            rec["phi"] = [float(x) for x in self.phi]
        if self.weights is not None:
            rec["weights"] = [[float(x) for x in row] for row in self.weights]
        if self.certificate is not None:
            rec["certificate"] = {
                "gap": float(self.certificate["gap"]),
                "equality_multiplier": float(self.certificate["equality_multiplier"]),
                "offset_multiplier": float(self.certificate["offset_multiplier"]),
                "n_grid_weights": len(self.certificate["grid_weights"]),
            }
        return rec

    def render_text(self):
        if self.found:
            return (f"NR payoff found: phi = {np.round(self.phi, 10).tolist()} "
                    f"(cav at prior {self.cav_at_prior:.10g})")
        return (f"NR payoff set empty: best total violation "
                f"{self.violation:.3e}, certificate gap "
                f"{self.certificate['gap']:.3e}")


def find_nr_payoff(family, prior, envelope=None, resolution=None,
                   value_tol=1e-6, eq_tol=1e-7):
    """Feasibility of phi in F with phi.q >= v(q) and phi.p0 = Cav(v)(p0).

    phi ranges over convex combinations of per-state pure payoff vectors
    (weights lambda on action cells), so membership in F holds by
    construction.  The domination constraint is imposed on the value grid
    with a finer post-check; the Cav equality is two-sided at eq_tol.
    Infeasibility is certified through the dual of a violation-minimizing
    program.
    """
    prior = as_belief(prior)
    if envelope is None:
        envelope = concavify(sample_value(family, resolution=resolution))
    env = envelope
    grid = env.grid
    if len(grid.face) != family.n_states:
        raise GameError("find_nr_payoff needs a full-simplex envelope")
    cav0 = env.eval(prior)
    k = family.n_states
    m, n = family.n_rows, family.n_cols
    vecs = family.matrices.reshape(k, m * n)
    scale = family.payoff_scale

    def grid_rows(points, values, slack_factor):
        # The LP normally gets half the tolerance the post-check
        # enforces, so a constraint saturated between grid points still
        # clears the finer check (curvature dips stay inside the spare
        # half); the full-slack retry handles marginal instances.
        g = points @ vecs
        return -g, -(values - slack_factor * value_tol * scale)

    prior_row = prior @ vecs
    refinements = []

    def run_main(slack_factor):
        a_rows, b_rows = grid_rows(grid.points, grid.values, slack_factor)
        extra_a = [grid_rows(p, v, slack_factor)[0] for p, v in refinements]
        extra_b = [grid_rows(p, v, slack_factor)[1] for p, v in refinements]
        for _ in range(4):
            a_ub = np.vstack([a_rows] + extra_a
                             + [prior_row[None, :], -prior_row[None, :]])
            b_ub = np.concatenate([
                b_rows,
                *extra_b,
                [cav0 + eq_tol * scale, -(cav0 - eq_tol * scale)],
            ])
            res = linprog(np.zeros(m * n), A_ub=a_ub, b_ub=b_ub,
                          A_eq=np.ones((1, m * n)), b_eq=[1.0],
                          bounds=[(0.0, None)] * (m * n), method="highs",
                          options=dict(_LP_OPTS))
            if not res.success:
                return None
            lam = np.clip(res.x, 0.0, None)
            lam = lam / np.sum(lam)
            phi = np.asarray(vecs @ lam, dtype=float)
            fine = _fine_check(family, phi, grid, value_tol * scale)
            if fine is None:
                return NrPayoffResult(status="found", prior=prior,
                                      cav_at_prior=cav0, phi=phi,
                                      weights=lam.reshape(m, n))
            pts, vals = fine
            refinements.append((pts, vals))
            ea, eb = grid_rows(pts, vals, slack_factor)
            extra_a.append(ea)
            extra_b.append(eb)
        raise GameError("NR payoff post-check kept failing after refinements")

    found = run_main(0.5)
    if found is not None:
        return found
    extra = None
    if refinements:
        extra = (np.vstack([p for p, _ in refinements]),
                 np.concatenate([v for _, v in refinements]))
    empty = _empty_with_certificate(family, prior, env, cav0,
                                    value_tol * scale, extra=extra,
                                    marginal_ok=True)
    if empty is not None:
        return empty
    # Marginal instance: feasible at full slack but not at half slack.
    found = run_main(1.0)
    if found is not None:
        return found
    raise GameError("NR payoff program is numerically marginal at this prior")


def _fine_check(family, phi, grid, tol):
    """None when phi dominates v on a 10x finer grid, else the violations."""
    if grid.resolution is None:
        return None
    res = grid.resolution / 10.0
    pts = composition_grid(len(grid.face), res)
    vals = nr_values_on_points(family, pts)
    gap = pts @ phi - vals
    bad = np.flatnonzero(gap < -tol)
    if bad.size == 0:
        return None
    worst = bad[np.argsort(gap[bad])][:100]
    return pts[worst], vals[worst]


def _empty_with_certificate(family, prior, env, cav0, tol_abs,
                            extra=None, marginal_ok=False):
    grid = env.grid
    k = family.n_states
    m, n = family.n_rows, family.n_cols
    nn = m * n
    vecs = family.matrices.reshape(k, nn)
    pts = grid.points
    vals = grid.values
    if extra is not None:
        pts = np.vstack([pts, extra[0]])
        vals = np.concatenate([vals, extra[1]])
    g = pts @ vecs
    n_grid = pts.shape[0]
    prior_row = prior @ vecs
    # variables: lambda (nn), slack s (n_grid), e+ and e- for the equality
    n_var = nn + n_grid + 2
    c = np.zeros(n_var)
    c[nn:] = 1.0
    a_ub = np.zeros((n_grid, n_var))
    a_ub[:, :nn] = -g
    a_ub[:, nn:nn + n_grid] = -np.eye(n_grid)
    b_ub = -(vals - tol_abs)
    a_eq = np.zeros((2, n_var))
    a_eq[0, :nn] = 1.0
    a_eq[1, :nn] = prior_row
    a_eq[1, nn + n_grid] = 1.0
    a_eq[1, nn + n_grid + 1] = -1.0
    b_eq = np.array([1.0, cav0])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0.0, None)] * n_var, method="highs",
                  options=dict(_LP_OPTS))
    if not res.success:
        raise GameError(f"violation LP failed: {res.message}")
    gap = float(res.fun)
    if gap <= 1e-9:
        if marginal_ok:
            return None
        raise GameError(
            "violation LP reports near-feasibility; the main program should "
            "have succeeded"
        )
    y = np.asarray(res.ineqlin.marginals)
    w = np.clip(-y, 0.0, None)
    mu = float(res.eqlin.marginals[0])
    nu = float(res.eqlin.marginals[1])
    weights = {int(i): float(w[i]) for i in np.flatnonzero(w > 1e-12)}
    certificate = {
        "grid_weights": weights,
        "grid_points": {int(i): pts[int(i)].tolist() for i in weights},
        "grid_values": {int(i): float(vals[int(i)]) for i in weights},
        "equality_multiplier": nu,
        "offset_multiplier": mu,
        "gap": gap,
    }
    return NrPayoffResult(status="empty", prior=prior, cav_at_prior=cav0,
                          violation=gap, certificate=certificate)


def verify_empty_certificate(family, result, envelope=None, value_tol=1e-6):
    """Check the dual certificate of an Empty result against the primal data.

    The certificate asserts that the nonnegative combination of the
    stored domination rows plus the Cav equality admits no lambda: the
    combination applied to every pure action cell stays below the
    combined right hand side by the reported gap (up to LP tolerance).
    When the envelope is given, the recorded Cav value at the prior is
    cross-checked against it as well.
    """
    if result.found:
        raise GameError("certificate verification needs an empty result")
    k = family.n_states
    vecs = family.matrices.reshape(k, -1)
    cert = result.certificate
    idx = sorted(cert["grid_weights"])
    nu = cert["equality_multiplier"]
    mu = cert["offset_multiplier"]
    combo = nu * (result.prior @ vecs) + mu
    rhs = nu * result.cav_at_prior + mu
    if idx:
        w = np.array([cert["grid_weights"][i] for i in idx])
        pts = np.array([cert["grid_points"][i] for i in idx])
        vals = np.array([cert["grid_values"][i] for i in idx])
        combo = combo + w @ (pts @ vecs)
        rhs = rhs + float(w @ (vals - value_tol * family.payoff_scale))
    lhs_max = float(np.max(combo))
    out = {"cell_max": lhs_max, "rhs_combination": float(rhs),
           "implied_gap": float(rhs) - lhs_max,
           "reported_gap": cert["gap"]}
    if envelope is not None:
        out["cav_mismatch"] = abs(envelope.eval(result.prior)
                                  - result.cav_at_prior)
    return out


@dataclass(frozen=True)
class MembershipReport:
    passed: bool
    conditions: dict

    def to_record(self):
        return {
            "passed": bool(self.passed),
            "conditions": {
                name: {
                    "passed": bool(ok),
                    "residual": float(resid),
                    "worst_point": None if worst is None else
                        [float(x) for x in worst],
                }
                for name, (ok, resid, worst) in self.conditions.items()
            },
        }

    def render_text(self):
        lines = [f"joint NR membership: {'member' if self.passed else 'not a member'}"]
        for name, (ok, resid, worst) in self.conditions.items():
            extra = "" if worst is None else f" at {np.round(worst, 6).tolist()}"
            lines.append(f"  {name}: {'ok' if ok else 'FAIL'} "
                         f"(residual {resid:.3e}){extra}")
        return "\n".join(lines)


def _payoff_set_distance(family, phi, tol=1e-7):
    """Sup-norm distance from phi to F = co{per-state pure payoff vectors}."""
    k = family.n_states
    vecs = family.matrices.reshape(k, -1)
    nn = vecs.shape[1]
    c = np.zeros(nn + 1)
    c[nn] = 1.0
    a_ub = np.vstack([
        np.hstack([vecs, -np.ones((k, 1))]),
        np.hstack([-vecs, -np.ones((k, 1))]),
    ])
    b_ub = np.concatenate([phi, -np.asarray(phi)])
    a_eq = np.zeros((1, nn + 1))
    a_eq[0, :nn] = 1.0
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                  bounds=[(0.0, None)] * nn + [(0.0, None)], method="highs",
                  options=dict(_LP_OPTS))
    if not res.success:
        raise GameError(f"payoff-set membership LP failed: {res.message}")
    return float(res.fun)


def joint_nr_membership(scenario, phi_a, phi_b, envelopes=None, resolution=None,
                        value_tol=1e-6, member_tol=1e-7):
    """Check whether (phi_A, phi_B) lies in the joint NR payoff set.

    Conditions: feasibility of each phi in its family's payoff body F,
    player-1 individual rationality of the summed payoff against h on the
    support face, and individual rationality of players 2 and 3 against
    the marginal envelopes.
    """
    phi_a = np.asarray(phi_a, dtype=float)
    phi_b = np.asarray(phi_b, dtype=float)
    fa, fb = scenario.family_a, scenario.family_b
    if phi_a.shape != (fa.n_states,) or phi_b.shape != (fb.n_states,):
        raise GameError("payoff vector dimensions do not match the families")
    if envelopes is None:
        env_a = concavify(sample_value(fa))
        env_b = concavify(sample_value(fb))
    else:
        env_a, env_b = envelopes
    conditions = {}
    da = _payoff_set_distance(fa, phi_a, member_tol)
    conditions["feasibility_a"] = (da <= member_tol, da, None)
    db = _payoff_set_distance(fb, phi_b, member_tol)
    conditions["feasibility_b"] = (db <= member_tol, db, None)
    pairs = scenario.support_pairs
    f = len(pairs)
    res = default_resolution(f) if resolution is None else resolution
    pts = composition_grid(f, res)
    hvals = scenario.h_values(pts)
    phi_sum = np.array([phi_a[ia] + phi_b[ib] for ia, ib in pairs])
    gaps = pts @ phi_sum - hvals
    worst_i = int(np.argmin(gaps))
    viol = max(0.0, -float(gaps[worst_i]))
    conditions["player1_ir"] = (viol <= value_tol, viol, pts[worst_i])
    ra = float(phi_a @ scenario.marginal_a - eval_cav(env_a, scenario.marginal_a))
    conditions["uninformed_ir_a"] = (ra <= value_tol, max(0.0, ra), None)
    rb = float(phi_b @ scenario.marginal_b - eval_cav(env_b, scenario.marginal_b))
    conditions["uninformed_ir_b"] = (rb <= value_tol, max(0.0, rb), None)
    passed = all(ok for ok, _, _ in conditions.values())
    return MembershipReport(passed=passed, conditions=conditions)


@dataclass(frozen=True)
class PayoffInterval:
    """Candidate equilibrium payoff interval [lower, upper] for player 1."""

    lower: float
    upper: float

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, x, tol=1e-9):
        return self.lower - tol <= x <= self.upper + tol

    def validate(self, tol=1e-6):
        if self.lower > self.upper + tol:
            raise GameError(
                f"interval ends out of order: {self.lower} > {self.upper}"
            )
        return True

    def to_record(self):
        return {"lower": float(self.lower), "upper": float(self.upper)}


def compute_interval(scenario, envelopes=None, resolution=None):
    """The interval [Cav(h)(p0), Cav(v_A)(p0_A) + Cav(v_B)(p0_B)].

    The lower end concavifies h on the support face; when the support is
    a rectangle the grid is enriched with products of the marginal
    optimal-split atoms, which pins the product-prior degeneracy exactly.
    """
    fa, fb = scenario.family_a, scenario.family_b
    if envelopes is None:
        env_a = concavify(sample_value(fa))
        env_b = concavify(sample_value(fb))
    else:
        env_a, env_b = envelopes
    p0a, p0b = scenario.marginal_a, scenario.marginal_b
    upper = eval_cav(env_a, p0a) + eval_cav(env_b, p0b)
    pairs = scenario.support_pairs
    if len(pairs) == 1:
        ia, ib = pairs[0]
        ea = np.zeros(fa.n_states)
        ea[ia] = 1.0
        eb = np.zeros(fb.n_states)
        eb[ib] = 1.0
        lower = nr_value(fa, ea) + nr_value(fb, eb)
        return PayoffInterval(lower=lower, upper=upper)
    extras = product_split_points(scenario, env_a, env_b)
    prior_face = scenario.prior_on_support
    extras.append(prior_face)
    grid = sum_value_grid(scenario, resolution=resolution, extra_points=extras)
    if grid.dim <= 3:
        env_h = concavify(grid)
        lower = env_h.eval(prior_face)
    else:
        lower = eval_cav_lp(grid, prior_face)
    return PayoffInterval(lower=lower, upper=upper)


def product_split_points(scenario, env_a, env_b):
    """Face points q_i (x) r_j from the marginal optimal splits, when valid."""
    if not scenario.support_is_rectangle():
        return []
    fa, fb = scenario.family_a, scenario.family_b
    try:
        split_a = optimal_split(env_a, scenario.marginal_a,
                                value_fn=lambda q: nr_value(fa, q))
        split_b = optimal_split(env_b, scenario.marginal_b,
                                value_fn=lambda q: nr_value(fb, q))
    except EnvelopeError:
        return []
    pairs = scenario.support_pairs
    out = []
    for qa in split_a.posteriors:
        for rb in split_b.posteriors:
            joint = np.array([qa[ia] * rb[ib] for ia, ib in pairs])
            total = float(np.sum(joint))
            if abs(total - 1.0) > 1e-9:
                continue
            out.append(joint / total)
    return out


def constrained_nr_value(family, belief, cav_bound, resolution=1e-3,
                         refine=True):
    """max sigma.M(p).tau over mixed pairs subject to the payoff cap.

    Grid search over the product of mixed-action simplices (the cap makes
    the feasible set non-convex); one local refinement pass tightens the
    optimum to about resolution/100 when both action sets are binary.
    Returns -inf when no grid point satisfies the cap.
    """
    avg = family.average_matrix(belief)
    m, n = avg.shape
    res_m = resolution if m <= 2 else max(resolution, 1e-2)
    res_n = resolution if n <= 2 else max(resolution, 1e-2)
    sigmas = composition_grid(m, res_m)
    taus = composition_grid(n, res_n)
    best, arg = _grid_bilinear_max(avg, sigmas, taus, cav_bound)
    if arg is None:
        return float("-inf")
    if refine and m == 2 and n == 2:
        s0 = sigmas[arg[0], 0]
        t0 = taus[arg[1], 0]
        s_lo, s_hi = max(0.0, s0 - res_m), min(1.0, s0 + res_m)
        t_lo, t_hi = max(0.0, t0 - res_n), min(1.0, t0 + res_n)
        ss = np.linspace(s_lo, s_hi, 201)
        tt = np.linspace(t_lo, t_hi, 201)
        sig2 = np.stack([ss, 1.0 - ss], axis=1)
        tau2 = np.stack([tt, 1.0 - tt], axis=1)
        best2, arg2 = _grid_bilinear_max(avg, sig2, tau2, cav_bound)
        if arg2 is not None and best2 > best:
            best = best2
    return float(best)


def _grid_bilinear_max(avg, sigmas, taus, cap, block=1024):
    best = float("-inf")
    arg = None
    right = taus @ avg.T
    for start in range(0, sigmas.shape[0], block):
        chunk = sigmas[start:start + block]
        vals = chunk @ right.T
        mask = vals <= cap + 1e-9
        if not np.any(mask):
            continue
        masked = np.where(mask, vals, -np.inf)
        i, j = np.unravel_index(int(np.argmax(masked)), masked.shape)
        if masked[i, j] > best:
            best = float(masked[i, j])
            arg = (start + int(i), int(j))
    return best, arg
