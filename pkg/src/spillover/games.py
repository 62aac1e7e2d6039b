"""Stage games with an informed row player.

A family is a finite collection of payoff matrices M^k, one per state k,
all sharing the same action sets.  The uninformed column player knows the
belief p over states but not the state, so the relevant one-shot object is
the averaged game sum_k p_k M^k.  Its value as a function of p is the
non-revealing value; it extends to the whole affine hull of the simplex by
the same min-max formula, and that extension is what gradient probes see.

Beliefs are plain numpy vectors.  The chart used for gradients drops the
last coordinate: T(x) = (x_1, ..., x_{K-1}, 1 - sum x_i), so for two states
S x = (x, -x) and the chart coordinate is the probability of the first
state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

DUALITY_TOL = 1e-9
BELIEF_TOL = 1e-9


class GameError(Exception):
    """Invalid game data or a failed numerical contract."""


class KinkDetected(GameError):
    """A gradient was requested at a point where the value is not smooth.

    Carries the LP gradient and the finite-difference estimate that
    disagreed with it.
    """

    def __init__(self, message, lp_gradient=None, fd_gradient=None):
        super().__init__(message)
        self.lp_gradient = lp_gradient
        self.fd_gradient = fd_gradient


def as_belief(weights, tol=BELIEF_TOL):
    """Validate and return a probability vector as a float array."""
    p = np.asarray(weights, dtype=float).ravel()
    if p.size == 0:
        raise GameError("empty belief")
    if not np.all(np.isfinite(p)):
        raise GameError("belief has non-finite entries")
    if np.min(p) < -tol:
        raise GameError(f"belief has negative entry {np.min(p)}")
    s = float(np.sum(p))
    if abs(s - 1.0) > tol:
        raise GameError(f"belief sums to {s}, not 1")
    p = np.clip(p, 0.0, None)
    return p / np.sum(p)


def as_affine_point(coords):
    """A point of the affine hull of the simplex: coordinates sum to 1.

    Entries may be negative; this is the domain of the extended value.
    """
    q = np.asarray(coords, dtype=float).ravel()
    if not np.all(np.isfinite(q)):
        raise GameError("affine point has non-finite entries")
    if abs(float(np.sum(q)) - 1.0) > 1e-7:
        raise GameError(f"affine point sums to {np.sum(q)}, not 1")
    return q


def support(p, tol=1e-12):
    return tuple(int(k) for k in np.flatnonzero(np.asarray(p) > tol))


@dataclass(frozen=True)
class GameFamily:
    """One per-state matrix family for the informed player (row maximizer)."""

    states: tuple
    rows: tuple
    cols: tuple
    matrices: np.ndarray  # shape (n_states, n_rows, n_cols)

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim != 3:
            raise GameError("matrices must have shape (states, rows, cols)")
        if m.shape != (len(self.states), len(self.rows), len(self.cols)):
            raise GameError(
                f"matrix block {m.shape} does not match labels "
                f"({len(self.states)}, {len(self.rows)}, {len(self.cols)})"
            )
        if not np.all(np.isfinite(m)):
            raise GameError("matrices contain non-finite payoffs")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrices", m)

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_rows(self):
        return len(self.rows)

    @property
    def n_cols(self):
        return len(self.cols)

    @property
    def payoff_scale(self):
        return max(1.0, float(np.max(np.abs(self.matrices))))

    def average_matrix(self, point):
        """Belief-averaged matrix sum_k p_k M^k.

        Accepts any point of the affine hull, including points outside the
        simplex; the averaged matrix is affine in the point either way.
        """
        q = as_affine_point(point)
        if q.size != self.n_states:
            raise GameError(
                f"point has {q.size} coordinates, family has {self.n_states} states"
            )
        return np.tensordot(q, self.matrices, axes=(0, 0))

    def payoff_vector(self, row_strategy, col_strategy):
        """Per-state expected payoffs (sigma^T M^k tau)_k for a mixed pair."""
        sigma = np.asarray(row_strategy, dtype=float)
        tau = np.asarray(col_strategy, dtype=float)
        if sigma.shape != (self.n_rows,) or tau.shape != (self.n_cols,):
            raise GameError("strategy shapes do not match the action sets")
        return np.einsum("i,kij,j->k", sigma, self.matrices, tau)


class SimplexChart:
    """Drop-last-coordinate chart of the belief simplex's affine hull.

    to_point(x) = (x_1, ..., x_{K-1}, 1 - sum x_i); the linear part S has
    columns e_i - e_K and full column rank.  Membership conditions of the
    form phi S in (sub/super)differential are invariant under the choice of
    chart; gradient coordinates themselves are chart-dependent.
    """

    def __init__(self, n_states):
        if n_states < 1:
            raise GameError("chart needs at least one state")
        self.n_states = int(n_states)
        s = np.zeros((self.n_states, self.n_states - 1))
        for i in range(self.n_states - 1):
            s[i, i] = 1.0
            s[self.n_states - 1, i] = -1.0
        s.flags.writeable = False
        self.linear_part = s

    @property
    def dim(self):
        return self.n_states - 1

    def to_point(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise GameError(f"chart point must have {self.dim} coordinates")
        return np.concatenate([x, [1.0 - float(np.sum(x))]])

    def from_point(self, point):
        q = as_affine_point(point)
        if q.size != self.n_states:
            raise GameError("point dimension does not match chart")
        return q[: self.dim].copy()

    def contains(self, x, tol=1e-12):
        """Whether to_point(x) lands inside the simplex."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= -tol) and np.sum(x) <= 1.0 + tol)


@dataclass(frozen=True)
class GameSolution:
    value: float
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    duality_gap: float


_LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


def _linprog(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs", options=dict(_LP_OPTIONS))
    if not res.success:
        raise GameError(f"LP failed: {res.message}")
    return res


def _row_value_lp(matrix):
    """max_t, sigma in simplex, (sigma M)_j >= t for all j."""
    m, n = matrix.shape
    c = np.zeros(m + 1)
    c[m] = -1.0
    a_ub = np.hstack([-matrix.T, np.ones((n, 1))])
    b_ub = np.zeros(n)
    a_eq = np.zeros((1, m + 1))
    a_eq[0, :m] = 1.0
    bounds = [(0.0, None)] * m + [(None, None)]
    res = _linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds)
    return res.x[:m], float(res.x[m])


def _col_value_lp(matrix):
    """min_u, tau in simplex, (M tau)_i <= u for all i."""
    m, n = matrix.shape
    c = np.zeros(n + 1)
    c[n] = 1.0
    a_ub = np.hstack([matrix, -np.ones((m, 1))])
    b_ub = np.zeros(m)
    a_eq = np.zeros((1, n + 1))
    a_eq[0, :n] = 1.0
    bounds = [(0.0, None)] * n + [(None, None)]
    res = _linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds)
    return res.x[:n], float(res.x[n])


def _lex_min_on_optimal_face(matrix, value, maximizer, slack):
    """Lexicographically smallest strategy on the optimal face.

    Sequentially minimizes each coordinate subject to staying optimal (up
    to `slack`) and to the coordinates already pinned; minima that come
    out at solver-noise level are pinned to exact zero.  Deterministic by
    construction, independent of solver pivoting.
    """
    if maximizer:
        m, n = matrix.shape
        base_ub = -matrix.T
        base_b = np.full(n, -(value - slack))
        size = m
    else:
        m, n = matrix.shape
        base_ub = matrix
        base_b = np.full(m, value + slack)
        size = n
    a_eq = np.ones((1, size))
    bounds = [[0.0, None] for _ in range(size)]
    out = np.zeros(size)
    for i in range(size):
        c = np.zeros(size)
        c[i] = 1.0
        res = _linprog(c, A_ub=base_ub, b_ub=base_b, A_eq=a_eq, b_eq=[1.0],
                       bounds=[tuple(b) for b in bounds])
        vi = max(0.0, float(res.x[i]))
        if vi < 1e-7:
            vi = 0.0
            bounds[i] = [0.0, 1e-7]
        else:
            bounds[i] = [0.0, vi + 1e-7]
        out[i] = vi
    total = float(np.sum(out))
    if abs(total - 1.0) > 1e-6:
        raise GameError(f"lexicographic refinement drifted off the simplex ({total})")
    return _snap_strategy(out / total)


def _snap_strategy(s, eps=2e-7):
    """Zero out sub-eps weights (solver noise) and renormalize."""
    out = np.asarray(s, dtype=float).copy()
    out[out < eps] = 0.0
    total = float(np.sum(out))
    if total <= 0.0:
        raise GameError("strategy collapsed to zero while snapping")
    return out / total


def _equalize_minimizer(matrix, value, y, scale, bind_tol):
    """Refine a near-optimal minimizer strategy to machine accuracy.

    Solves the equalization system on the detected support and binding
    rows (least-norm correction anchored at y) and returns (strategy,
    value) only when the polished point verifies: nonnegative, on the
    simplex, and guaranteeing at most the polished value on every row.
    Returns None when the detected sets do not admit such a point, e.g.
    when bind_tol mislabels a row.
    """
    rows_val = matrix @ y
    binding = np.where(rows_val >= rows_val.max() - bind_tol * scale)[0]
    support = np.where(y > 1e-12)[0]
    if support.size == 0:
        return None
    a = np.zeros((binding.size + 1, support.size + 1))
    a[:-1, :-1] = matrix[np.ix_(binding, support)]
    a[:-1, -1] = -1.0
    a[-1, :-1] = 1.0
    b = np.concatenate([value - rows_val[binding], [1.0 - y.sum()]])
    delta, *_ = np.linalg.lstsq(a, b, rcond=None)
    if float(np.max(np.abs(a @ delta - b))) > 1e-10 * scale:
        return None
    out = y.copy()
    out[support] += delta[:-1]
    v = float(value + delta[-1])
    if float(out.min()) < -1e-11:
        return None
    out = np.clip(out, 0.0, None)
    total = float(out.sum())
    if abs(total - 1.0) > 1e-9:
        return None
    out = out / total
    if float(np.max(matrix @ out)) > v + 1e-10 * scale:
        return None
    return out, v


def _polished_col(matrix, value, tau, scale):
    """Column-strategy polish against a trusted (closed-form) value."""
    for tol in (1e-6, 1e-4, 1e-8):
        got = _equalize_minimizer(matrix, value, tau, scale, tol)
        if got is not None and abs(got[1] - value) <= 1e-9 * scale:
            return got[0]
    return tau


def _polish_solution(matrix, value, sigma, tau, scale):
    """Equalization polish of both LP strategies; keeps what verifies."""
    v_row = None
    for tol in (1e-6, 1e-4, 1e-8):
        got = _equalize_minimizer(-matrix.T, -value, sigma, scale, tol)
        if got is not None:
            sigma, v_row = got[0], -got[1]
            break
    v_col = None
    for tol in (1e-6, 1e-4, 1e-8):
        got = _equalize_minimizer(matrix, value, tau, scale, tol)
        if got is not None:
            tau, v_col = got
            break
    if (v_row is not None and v_col is not None
            and abs(v_row - v_col) <= 1e-9 * scale):
        value = 0.5 * (v_row + v_col)
    return sigma, tau, value


def _row_mix_interval(m, value, slack):
    """Feasible s for sigma = (s, 1-s) optimal in a 2-column-player game.

    Constraints s*(m0j - m1j) >= value - m1j per column; returns the
    lexicographically smallest feasible s (clipped to [0, 1]).
    """
    lo, hi = 0.0, 1.0
    for j in range(m.shape[1]):
        coef = m[0, j] - m[1, j]
        rhs = value - m[1, j]
        if coef > 0:
            lo = max(lo, (rhs - slack) / coef)
        elif coef < 0:
            hi = min(hi, (rhs - slack) / coef)
        elif rhs > slack:
            raise GameError("closed-form row interval is empty")
    if lo > hi + 1e-12:
        raise GameError("closed-form row interval is empty")
    return min(max(lo, 0.0), 1.0)


def solve_matrix_game(matrix, lex=True, method="auto"):
    """Exact value and optimal strategies of a zero-sum matrix game.

    The LP route solves both the row (maximizer) and column (minimizer)
    programs and checks that the two values agree within 1e-9 relative to
    payoff scale.  Games with two rows (or two columns, by transposition)
    take a closed-form route instead: the piecewise-linear maximin value
    plus interval arithmetic for the mixing weight.  With lex=True the
    returned strategies are the lexicographically smallest optimal ones,
    making every downstream certificate reproducible across runs and
    platforms.  method="lp" forces the LP route (used by the dual-route
    property tests).
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise GameError("matrix must be 2-d and non-empty")
    if not np.all(np.isfinite(m)):
        raise GameError("matrix has non-finite entries")
    if method not in ("auto", "lp"):
        raise GameError(f"unknown method {method!r}")
    scale = max(1.0, float(np.max(np.abs(m))))
    slack = 1e-10 * scale
    r, c = m.shape
    if method == "auto" and r != 2 and c == 2:
        flipped = solve_matrix_game(-m.T, lex=lex, method=method)
        return GameSolution(value=-flipped.value,
                            row_strategy=flipped.col_strategy,
                            col_strategy=flipped.row_strategy,
                            duality_gap=flipped.duality_gap)
    if method == "auto" and r == 2:
        value = game_value(m)
        s = _row_mix_interval(m, value, slack)
        sigma = np.array([s, 1.0 - s])
        if c == 2:
            t = _row_mix_interval(-m.T, -value, slack)
            tau = np.array([t, 1.0 - t])
        elif lex:
            tau = _lex_min_on_optimal_face(m, value, False, slack)
            tau = _polished_col(m, value, tau, scale)
        else:
            tau, _ = _col_value_lp(m)
            tau = np.clip(tau, 0.0, None)
            tau = tau / np.sum(tau)
            tau = _polished_col(m, value, tau, scale)
        return GameSolution(value=value, row_strategy=sigma, col_strategy=tau,
                            duality_gap=0.0)
    if method == "auto" and (r == 1 or c == 1):
        value = game_value(m)
        sigma = np.zeros(r)
        tau = np.zeros(c)
        sigma[int(np.argmax(np.min(m, axis=1)))] = 1.0
        tau[int(np.argmin(np.max(m, axis=0)))] = 1.0
        return GameSolution(value=value, row_strategy=sigma, col_strategy=tau,
                            duality_gap=0.0)
    sigma, row_val = _row_value_lp(m)
    tau, col_val = _col_value_lp(m)
    gap = abs(row_val - col_val)
    if gap > DUALITY_TOL * scale:
        raise GameError(f"primal/dual values disagree by {gap}")
    value = 0.5 * (row_val + col_val)
    if lex:
        sigma = _lex_min_on_optimal_face(m, value, True, slack)
        tau = _lex_min_on_optimal_face(m, value, False, slack)
    else:
        sigma = np.clip(sigma, 0.0, None)
        sigma = sigma / np.sum(sigma)
        tau = np.clip(tau, 0.0, None)
        tau = tau / np.sum(tau)
    sigma, tau, value = _polish_solution(m, value, sigma, tau, scale)
    return GameSolution(value=value, row_strategy=sigma, col_strategy=tau,
                        duality_gap=gap)


def game_value(matrix):
    """Value of a zero-sum matrix game, fast closed forms where available.

    1xN / Mx1 by enumeration, 2x2 by the saddle/mixed formula, 2xN by the
    piecewise-linear maximin over the row-mix parameter, Mx2 by transposing,
    everything else through the LP.  Cross-checked against the LP route in
    the property suites.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise GameError("matrix must be 2-d and non-empty")
    r, c = m.shape
    if r == 1:
        return float(np.min(m[0]))
    if c == 1:
        return float(np.max(m[:, 0]))
    if r == 2 and c == 2:
        return _value_2x2(m)
    if r == 2:
        return _value_2xn(m)
    if c == 2:
        return -_value_2xn(-m.T)
    return _row_value_lp(m)[1]


def _value_2x2(m):
    a, b = m[0, 0], m[0, 1]
    c, d = m[1, 0], m[1, 1]
    # saddle point check: a pure entry that is max of its column, min of its row
    row_mins = (min(a, b), min(c, d))
    col_maxs = (max(a, c), max(b, d))
    saddle = max(row_mins)
    if saddle == min(col_maxs) or (a + d - b - c) == 0.0:
        return float(saddle)
    return float((a * d - b * c) / (a + d - b - c))


def _value_2xn(m):
    """max over s in [0,1] of min_j (s m0j + (1-s) m1j)."""
    top, bot = m[0], m[1]
    candidates = [0.0, 1.0]
    n = m.shape[1]
    for j in range(n):
        for k in range(j + 1, n):
            denom = (top[j] - bot[j]) - (top[k] - bot[k])
            if denom != 0.0:
                s = (bot[k] - bot[j]) / denom
                if 0.0 < s < 1.0:
                    candidates.append(s)
    best = -np.inf
    for s in candidates:
        lines = s * top + (1.0 - s) * bot
        val = float(np.min(lines))
        if val > best:
            best = val
    return best


def nr_value(family, point):
    """Non-revealing value: value of the belief-averaged game at `point`.

    Defined by the same min-max formula on the whole affine hull, so points
    outside the simplex are legal inputs and nothing is clipped.
    """
    return game_value(family.average_matrix(point))


def nr_values_on_points(family, points):
    """Vectorized nr_value over an (N, K) array of affine points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    mats = np.tensordot(pts, family.matrices, axes=(1, 0))
    r, c = family.n_rows, family.n_cols
    if r == 2 and c == 2:
        return _values_2x2_batch(mats)
    return np.array([game_value(mats[i]) for i in range(mats.shape[0])])


def _values_2x2_batch(mats):
    a = mats[:, 0, 0]
    b = mats[:, 0, 1]
    c = mats[:, 1, 0]
    d = mats[:, 1, 1]
    row_min = np.maximum(np.minimum(a, b), np.minimum(c, d))
    col_max = np.minimum(np.maximum(a, c), np.maximum(b, d))
    saddle = row_min == col_max
    denom = a + d - b - c
    safe = np.where(denom == 0.0, 1.0, denom)
    mixed = (a * d - b * c) / safe
    return np.where(saddle | (denom == 0.0), row_min, mixed)


def gradient_from_actions(family, point, chart=None, fd_step=1e-5, fd_tol=1e-3):
    """Chart gradient of the extended non-revealing value at a smooth point.

    By the envelope argument the gradient is the per-state payoff vector of
    any optimal pair, pushed through the chart's linear part.  The LP-based
    candidate is checked a posteriori against central finite differences;
    disagreement beyond fd_tol (sup norm) raises KinkDetected rather than
    returning a wrong certificate.

    Returns (gradient, (row_strategy, col_strategy)).
    """
    if chart is None:
        chart = SimplexChart(family.n_states)
    q = as_affine_point(point)
    if q.size != family.n_states:
        raise GameError("point dimension does not match the family")
    sol = solve_matrix_game(family.average_matrix(q))
    payoff_vec = family.payoff_vector(sol.row_strategy, sol.col_strategy)
    grad = payoff_vec @ chart.linear_part
    x0 = chart.from_point(q)
    fd = np.zeros(chart.dim)
    for i in range(chart.dim):
        xp = x0.copy()
        xp[i] += fd_step
        xm = x0.copy()
        xm[i] -= fd_step
        vp = nr_value(family, chart.to_point(xp))
        vm = nr_value(family, chart.to_point(xm))
        fd[i] = (vp - vm) / (2.0 * fd_step)
    err = float(np.max(np.abs(grad - fd))) if chart.dim else 0.0
    if err > fd_tol:
        raise KinkDetected(
            f"value not differentiable at {q} (LP gradient {grad}, "
            f"finite differences {fd}, gap {err})",
            lp_gradient=grad, fd_gradient=fd,
        )
    return grad, (sol.row_strategy, sol.col_strategy)
