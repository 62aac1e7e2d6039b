"""Executable strategies for the repeated game with information spillover.

Strategies are immutable policy objects; each episode instantiates
sessions that hold the mutable per-episode state (signal outcomes,
tracker averages, trigger flags).  Sessions are driven by the simulator
through two calls per stage: a rule query and an observation callback.

The informed player's stage rule is a matrix with one row per joint
state in the prior's support and one column per joint informed action
(row pairs of the two component games, row-major).  Uninformed rules are
plain distributions over own columns.  All rules are reconstructible
from the public history, which is what makes the punishment automata and
the decentralized sum-game tracker well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .games import GameError, GameFamily, nr_value, solve_matrix_game
from .envelope import concavify, optimal_split, sample_value
from .analysis import (
    JointScenario,
    find_nr_payoff,
    joint_nr_membership,
    product_split_points,
    sum_value_grid,
)

_LP_OPTS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


class SynthesisError(GameError):
    pass


class NotEnoughSignals(SynthesisError):
    pass


class PreconditionViolated(SynthesisError):
    pass


class MembershipFailed(SynthesisError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def splitting_signal(prior, split, signal_actions):
    """Per-state stage-1 lottery implementing a split of the prior.

    signal_actions maps atom index -> pure action index, injectively.
    Returns a row-stochastic matrix (n_states, n_actions) with
    sigma^k(action_i) = alpha_i * p_i^k / prior^k.  Observing action_i
    moves the Bayes posterior to the atom p_i exactly.
    """
    prior = np.asarray(prior, dtype=float)
    alphas = np.asarray(split.alphas, dtype=float)
    posts = np.atleast_2d(np.asarray(split.posteriors, dtype=float))
    n_atoms = alphas.shape[0]
    signal_actions = [int(a) for a in signal_actions]
    if len(signal_actions) < n_atoms:
        raise NotEnoughSignals(
            f"split has {n_atoms} atoms but only {len(signal_actions)} "
            "signal actions are available"
        )
    if len(set(signal_actions[:n_atoms])) < n_atoms:
        raise SynthesisError("signal actions must be distinct")
    n_actions = max(signal_actions[:n_atoms]) + 1
    if np.max(np.abs(posts.T @ alphas - prior)) > 1e-9:
        raise SynthesisError("split barycenter does not match the prior")
    rule = np.zeros((prior.shape[0], n_actions))
    for k in range(prior.shape[0]):
        if prior[k] <= 0.0:
            rule[k, signal_actions[0]] = 1.0
            continue
        for i in range(n_atoms):
            rule[k, signal_actions[i]] = alphas[i] * posts[i, k] / prior[k]
        total = rule[k].sum()
        if abs(total - 1.0) > 1e-9:
            raise SynthesisError(f"state {k} lottery sums to {total}")
    return rule


def frequency_sequence(weights, horizon):
    """Deterministic schedule whose empirical frequencies track weights.

    Greedy largest-deficit rule: stage t picks the cell maximizing
    t*w_c - count_c, first listed on ties.  Cells with zero weight are
    never scheduled.  The sup-norm frequency error is at most
    (number of active cells)/t at every stage t.
    """
    w = np.asarray(weights, dtype=float).ravel()
    if np.min(w) < -1e-12 or abs(w.sum() - 1.0) > 1e-9:
        raise SynthesisError("weights must form a probability vector")
    active = np.flatnonzero(w > 1e-15)
    wa = w[active]
    counts = np.zeros(active.shape[0])
    out = np.empty(int(horizon), dtype=np.int64)
    for t in range(1, int(horizon) + 1):
        c = int(np.argmax(t * wa - counts))
        counts[c] += 1.0
        out[t - 1] = active[c]
    return out


def _trim_weights(family, phi, value_tol=1e-7):
    """Sparse cell weights realizing phi, biased toward cells near phi.

    Solves min sum_c d_c lambda_c with d_c the sup distance from the
    cell's payoff vector to phi, subject to the weights reproducing phi.
    A basic optimal solution has at most n_states + 1 active cells, which
    keeps the deterministic path's payoff error small.
    """
    k = family.n_states
    vecs = family.matrices.reshape(k, -1)
    d = np.max(np.abs(vecs - np.asarray(phi, dtype=float)[:, None]), axis=0)
    a_eq = np.vstack([vecs, np.ones((1, vecs.shape[1]))])
    b_eq = np.concatenate([phi, [1.0]])
    res = linprog(d, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0.0, None)] * vecs.shape[1], method="highs",
                  options=dict(_LP_OPTS))
    if not res.success:
        raise SynthesisError(f"weight trimming LP failed: {res.message}")
    lam = np.clip(res.x, 0.0, None)
    lam[lam < 1e-12] = 0.0
    lam = lam / lam.sum()
    realized = vecs @ lam
    if np.max(np.abs(realized - phi)) > value_tol * max(family.payoff_scale, 1.0):
        raise SynthesisError("trimmed weights fail to reproduce phi")
    return lam.reshape(family.n_rows, family.n_cols)


@dataclass(frozen=True)
class EquilibriumProfile:
    """A triple of strategies plus the payoffs it declares."""

    scenario: JointScenario
    informed: object
    uninformed_a: object
    uninformed_b: object
    declared_per_state: np.ndarray
    declared_uninformed: dict
    provenance: str
    params: dict = field(default_factory=dict)

    @property
    def declared_ex_ante(self):
        return float(self.declared_per_state @ self.scenario.prior_on_support)

    def sessions(self):
        ctx = ProfileContext(self.scenario)
        return (self.informed.session(ctx), self.uninformed_a.session(ctx),
                self.uninformed_b.session(ctx))

    def to_record(self):
        return {
            "provenance": self.provenance,
            "declared_per_state": [float(x) for x in self.declared_per_state],
            "declared_uninformed": {k: float(v) for k, v in
                                    self.declared_uninformed.items()},
            "declared_ex_ante": self.declared_ex_ante,
            "params": _jsonable(self.params),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


class ProfileContext:
    """Shared per-episode geometry: support face, action spaces, payoffs."""

    def __init__(self, scenario):
        self.scenario = scenario
        self.pairs = scenario.support_pairs
        self.n_face = len(self.pairs)
        fa, fb = scenario.family_a, scenario.family_b
        self.ma, self.na = fa.n_rows, fa.n_cols
        self.mb, self.nb = fb.n_rows, fb.n_cols
        self.n_joint_rows = self.ma * self.mb
        self.ka_of_face = np.array([ia for ia, _ in self.pairs])
        self.kb_of_face = np.array([ib for _, ib in self.pairs])


def joint_row(ia, ib, mb):
    return ia * mb + ib


def split_joint_row(a, mb):
    return a // mb, a % mb


def _rows_outer(rule_a, rule_b):
    """Row-major product of two row lotteries (per face state)."""
    return (rule_a[:, :, None] * rule_b[:, None, :]).reshape(rule_a.shape[0], -1)


class _PointMassRows:
    """Stage rules for a deterministic, state-independent action path."""

    def __init__(self, ctx, path_a_rows, path_b_rows):
        self.ctx = ctx
        self.path_a = path_a_rows
        self.path_b = path_b_rows
        self._cache = {}

    def matrix(self, t):
        ia = int(self.path_a[t - 1])
        ib = int(self.path_b[t - 1])
        a = joint_row(ia, ib, self.ctx.mb)
        mat = self._cache.get(a)
        if mat is None:
            mat = np.zeros((self.ctx.n_face, self.ctx.n_joint_rows))
            mat[:, a] = 1.0
            mat.flags.writeable = False
            self._cache[a] = mat
        return mat


class AmComponentInformed:
    """Aumann-Maschler informed play for one component family.

    Stage 1 signals the optimal split of the prior using own rows as the
    signal alphabet; afterwards plays the lexicographic row optimum of
    the averaged game at the realized posterior, i.i.d.
    """

    memory_class = "stationary-after-stage-1"

    def __init__(self, family, prior, envelope=None, resolution=None):
        self.family = family
        self.prior = np.asarray(prior, dtype=float)
        if envelope is None:
            envelope = concavify(sample_value(family, resolution=resolution))
        self.envelope = envelope
        split = optimal_split(envelope, self.prior,
                              value_fn=lambda q: nr_value(family, q))
        self.split = split
        n_atoms = split.alphas.shape[0]
        self.signal_actions = list(range(n_atoms))
        if n_atoms > family.n_rows:
            raise NotEnoughSignals(
                f"{n_atoms} atoms exceed {family.n_rows} informed rows"
            )
        self.trivial = n_atoms == 1
        self.atom_rows = []
        self._atom_rules = []
        for atom in split.posteriors:
            row = _flattest_optimal_row(family.average_matrix(atom))
            self.atom_rows.append(row)
            full = np.tile(row, (family.n_states, 1))
            full.setflags(write=False)
            self._atom_rules.append(full)
        # Signal with each atom's own optimal row when those are distinct
        # pure actions: the signaling stage then costs nothing on path.
        pure = []
        for row in self.atom_rows:
            j = int(np.argmax(row))
            others = np.delete(row, j)
            if abs(row[j] - 1.0) <= 1e-12 and (others.size == 0
                                               or np.max(others) <= 1e-12):
                pure.append(j)
            else:
                pure = None
                break
        if pure is not None and len(set(pure)) == n_atoms:
            self.signal_actions = pure
        if self.trivial:
            self.signal_rule = None
        else:
            self.signal_rule = _pad_columns(
                splitting_signal(self.prior, split, self.signal_actions),
                family.n_rows)

    def stage_rule(self, atom_index, t):
        """Row lottery (n_states, n_rows) for the given stage.

        Returned arrays are stable objects so samplers can cache them.
        """
        if not self.trivial and t == 1:
            return self.signal_rule, True
        idx = 0 if self.trivial else atom_index
        return self._atom_rules[idx], False

    def atom_from_signal(self, action):
        if self.trivial:
            return 0
        try:
            return self.signal_actions.index(int(action))
        except ValueError:
            return 0


def _flattest_optimal_row(matrix):
    """Optimal row mixture minimizing the maximum column payoff.

    Among minimax-optimal mixtures this picks the most equalizing one,
    so realized stage payoffs hug the game value instead of paying a
    spread the column player controls.
    """
    matrix = np.asarray(matrix, dtype=float)
    sol = solve_matrix_game(matrix)
    m, n = matrix.shape
    scale = max(1.0, np.max(np.abs(matrix)))
    # variables: sigma (m), u
    c = np.zeros(m + 1)
    c[-1] = 1.0
    a_ub = np.zeros((2 * n, m + 1))
    a_ub[:n, :m] = matrix.T
    a_ub[:n, -1] = -1.0
    a_ub[n:, :m] = -matrix.T
    b_ub = np.concatenate([np.zeros(n),
                           np.full(n, -(sol.value - 1e-11 * scale))])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub,
                  A_eq=np.concatenate([np.ones(m), [0.0]])[None, :],
                  b_eq=[1.0], bounds=[(0.0, None)] * m + [(None, None)],
                  method="highs", options=dict(_LP_OPTS))
    if not res.success:
        return sol.row_strategy
    sigma = np.clip(res.x[:m], 0.0, None)
    sigma[sigma < 1e-9] = 0.0
    sigma = sigma / sigma.sum()
    if np.min(sigma @ matrix) < sol.value - 1e-9 * scale:
        return sol.row_strategy
    return sigma


def _pad_columns(mat, n_cols):
    if mat.shape[1] == n_cols:
        return mat
    out = np.zeros((mat.shape[0], n_cols))
    out[:, :mat.shape[1]] = mat
    return out


def aumann_maschler_informed(family, prior, envelope=None, resolution=None):
    return AmComponentInformed(family, prior, envelope=envelope,
                               resolution=resolution)


class TrackerCore:
    """Blackwell tracker state for one family and target vector phi.

    Keeps the per-state running average of the column's payoff vector; on
    excess, plays the column optimum of the game averaged by the
    normalized positive part of (average - phi).
    """

    def __init__(self, family, phi, response_cache, default_probs):
        self.family = family
        self.phi = np.asarray(phi, dtype=float)
        self.vecs = np.ascontiguousarray(
            np.moveaxis(family.matrices, 0, -1))
        self.cache = response_cache
        self.default = default_probs
        self.g = np.zeros(family.n_states)
        self.count = 0

    def probs(self):
        excess = self.g - self.phi
        if self.count == 0 or np.max(excess) <= 1e-12:
            return self.default
        lam = np.clip(excess, 0.0, None)
        lam = lam / lam.sum()
        key = tuple(np.round(lam / 1e-3).astype(np.int64))
        probs = self.cache.get(key)
        if probs is None:
            sol = solve_matrix_game(self.family.average_matrix(lam))
            probs = sol.col_strategy
            self.cache[key] = probs
        return probs

    def observe(self, row, col):
        self.count += 1
        self.g += (self.vecs[row, col] - self.g) / self.count


class BlackwellUninformed:
    """Uninformed tracker strategy for one component family."""

    memory_class = "blackwell-tracker"

    def __init__(self, family, phi, component, resolution=None,
                 precondition_tol=1e-9):
        self.family = family
        self.phi = np.asarray(phi, dtype=float)
        self.component = component
        grid = sample_value(family, resolution=resolution)
        gaps = grid.points @ self.phi - grid.values
        worst = float(np.min(gaps))
        if worst < -precondition_tol * max(family.payoff_scale, 1.0) - 1e-12:
            q = grid.points[int(np.argmin(gaps))]
            raise PreconditionViolated(
                f"phi fails dominance by {-worst:.3e} at {q.tolist()}"
            )
        uniform = np.full(family.n_states, 1.0 / family.n_states)
        self.default = solve_matrix_game(
            family.average_matrix(uniform)).col_strategy
        self.cache = {}

    def session(self, ctx):
        return _TrackerSession(self, ctx)


class _TrackerSession:
    def __init__(self, strategy, ctx):
        self.ctx = ctx
        self.component = strategy.component
        self.core = TrackerCore(strategy.family, strategy.phi,
                                strategy.cache, strategy.default)

    def stage_probs(self, t):
        return self.core.probs()

    def observe(self, t, a, ja, jb):
        ia, ib = split_joint_row(a, self.ctx.mb)
        if self.component == "a":
            self.core.observe(ia, ja)
        else:
            self.core.observe(ib, jb)


class SumTrackerStrategy:
    """Decentralized tracker for the sum game on the support face.

    Both uninformed players run an identical tracker over joint face
    states; separability of the sum game lets each sample only its own
    coordinate of the product response.
    """

    memory_class = "blackwell-tracker"

    def __init__(self, scenario, phi_face, component):
        self.scenario = scenario
        self.phi_face = np.asarray(phi_face, dtype=float)
        self.component = component
        self.sum_family = scenario.sum_family()
        fa, fb = scenario.family_a, scenario.family_b
        uniform_a = np.full(fa.n_states, 1.0 / fa.n_states)
        uniform_b = np.full(fb.n_states, 1.0 / fb.n_states)
        self.default_a = solve_matrix_game(fa.average_matrix(uniform_a)).col_strategy
        self.default_b = solve_matrix_game(fb.average_matrix(uniform_b)).col_strategy
        self.cache = {}

    def session(self, ctx):
        return _SumTrackerSession(self, ctx)


class _SumTrackerSession:
    def __init__(self, strategy, ctx):
        self.strategy = strategy
        self.ctx = ctx
        st = strategy
        self.vecs = np.ascontiguousarray(
            np.moveaxis(st.sum_family.matrices, 0, -1))
        self.g = np.zeros(ctx.n_face)
        self.count = 0

    def _responses(self):
        st = self.strategy
        excess = self.g - st.phi_face
        if self.count == 0 or np.max(excess) <= 1e-12:
            return st.default_a, st.default_b
        lam = np.clip(excess, 0.0, None)
        lam = lam / lam.sum()
        key = tuple(np.round(lam / 1e-3).astype(np.int64))
        pair = st.cache.get(key)
        if pair is None:
            sc = st.scenario
            lam_a = np.zeros(sc.family_a.n_states)
            lam_b = np.zeros(sc.family_b.n_states)
            np.add.at(lam_a, self.ctx.ka_of_face, lam)
            np.add.at(lam_b, self.ctx.kb_of_face, lam)
            ta = solve_matrix_game(sc.family_a.average_matrix(lam_a)).col_strategy
            tb = solve_matrix_game(sc.family_b.average_matrix(lam_b)).col_strategy
            pair = (ta, tb)
            st.cache[key] = pair
        return pair

    def stage_probs(self, t):
        ta, tb = self._responses()
        return ta if self.strategy.component == "a" else tb

    def observe(self, t, a, ja, jb):
        col = ja * self.ctx.nb + jb
        self.count += 1
        self.g += (self.vecs[a, col] - self.g) / self.count


class StationaryInformed:
    """State-conditional i.i.d. joint-row play from a fixed rule matrix."""

    memory_class = "stationary-after-stage-1"

    def __init__(self, rule, state_dependent=None):
        self.rule = np.asarray(rule, dtype=float)
        if state_dependent is None:
            state_dependent = bool(np.max(np.abs(self.rule - self.rule[0])) > 0.0)
        self.state_dependent = state_dependent

    def session(self, ctx):
        return _StationaryInformedSession(self, ctx)


class _StationaryInformedSession:
    def __init__(self, strategy, ctx):
        if strategy.rule.shape != (ctx.n_face, ctx.n_joint_rows):
            raise SynthesisError(
                f"rule shape {strategy.rule.shape} does not match "
                f"({ctx.n_face}, {ctx.n_joint_rows})"
            )
        self.rule = strategy.rule
        self.dep = strategy.state_dependent

    def stage(self, t):
        return self.rule, self.dep

    def observe(self, t, a, ja, jb):
        pass


class StationaryUninformed:
    """Fixed mixed column, played i.i.d."""

    memory_class = "stationary-after-stage-1"

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def session(self, ctx):
        return _StationaryUninformedSession(self.probs)


class _StationaryUninformedSession:
    def __init__(self, probs):
        self.probs = probs

    def stage_probs(self, t):
        return self.probs

    def observe(self, t, a, ja, jb):
        pass


class _GrowingSchedule:
    """Greedy largest-deficit schedule, extended lazily.

    The greedy rule is horizon-free, so prefixes are stable under
    extension and all sessions can share one growing path.  Built from
    an (m, n) weight matrix; pair(t) gives the scheduled (row, col).
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 2:
            raise SynthesisError("schedule weights must be a cell matrix")
        self.n_cols = w.shape[1]
        flat = w.ravel()
        self.active = np.flatnonzero(flat > 1e-15)
        self.wa = flat[self.active]
        self.counts = np.zeros(self.active.shape[0])
        self.path = []
        self.pairs = []

    def _extend(self, t):
        while len(self.path) < t:
            step = len(self.path) + 1
            c = int(np.argmax(step * self.wa - self.counts))
            self.counts[c] += 1.0
            cell = int(self.active[c])
            self.path.append(cell)
            self.pairs.append((cell // self.n_cols, cell % self.n_cols))

    def cell(self, t):
        if len(self.path) < t:
            self._extend(t)
        return self.path[t - 1]

    def pair(self, t):
        if len(self.pairs) < t:
            self._extend(t)
        return self.pairs[t - 1]


PATH = "path"
PUNISH_INFORMED = "punish-informed"
PUNISH_A = "punish-uninformed-a"
PUNISH_B = "punish-uninformed-b"


class _TriggerState:
    """Public grim-trigger automaton shared (by replication) across sessions.

    First deviation wins, informed checked before player 2 before
    player 3; once a punishment is running only the still-scheduled
    components are monitored, and punish-informed is absorbing.
    """

    def __init__(self):
        self.mode = PATH
        self.trigger_stage = None

    def update(self, t, a, ja, jb, sched_a, sched_b, mb):
        ia, ib = split_joint_row(a, mb)
        ia_t, ja_t = sched_a(t)
        ib_t, jb_t = sched_b(t)
        if self.mode == PATH:
            if ia != ia_t or ib != ib_t:
                self._trip(PUNISH_INFORMED, t)
            elif ja != ja_t:
                self._trip(PUNISH_A, t)
            elif jb != jb_t:
                self._trip(PUNISH_B, t)
        elif self.mode == PUNISH_A:
            if ib != ib_t:
                self._trip(PUNISH_INFORMED, t)
        elif self.mode == PUNISH_B:
            if ia != ia_t:
                self._trip(PUNISH_INFORMED, t)

    def _trip(self, mode, t):
        self.mode = mode
        self.trigger_stage = t


class NrInformedStrategy:
    """On-path frequency play, switching to component punishment on demand."""

    memory_class = "automaton-with-punishment"

    def __init__(self, scenario, sched_a, sched_b, am_a, am_b):
        self.scenario = scenario
        self.sched_a = sched_a
        self.sched_b = sched_b
        self.am_a = am_a
        self.am_b = am_b

    def session(self, ctx):
        return _NrInformedSession(self, ctx)


class _NrInformedSession:
    def __init__(self, strategy, ctx):
        self.s = strategy
        self.ctx = ctx
        self.trigger = _TriggerState()
        self.atom = 0
        self._path_rules = _PointMassRows(
            ctx,
            _SchedRows(strategy.sched_a, ctx.na),
            _SchedRows(strategy.sched_b, ctx.nb),
        )
        self._cache = {}

    def _sched(self, which):
        sched = self.s.sched_a if which == "a" else self.s.sched_b
        return sched.pair

    def stage(self, t):
        mode = self.trigger.mode
        if mode in (PATH, PUNISH_INFORMED):
            return self._path_rules.matrix(t), False
        t_local = t - self.trigger.trigger_stage
        if mode == PUNISH_A:
            am, lift, other_row = (self.s.am_a, self.ctx.ka_of_face,
                                   self._sched("b")(t)[0])
            comp_rule, dep = am.stage_rule(self.atom, t_local)
            rows_a = comp_rule[lift]
            rows_b = _one_hot_rows(self.ctx.n_face, self.ctx.mb, other_row)
            return _rows_outer(rows_a, rows_b), dep
        am, lift, other_row = (self.s.am_b, self.ctx.kb_of_face,
                               self._sched("a")(t)[0])
        comp_rule, dep = am.stage_rule(self.atom, t_local)
        rows_b = comp_rule[lift]
        rows_a = _one_hot_rows(self.ctx.n_face, self.ctx.ma, other_row)
        return _rows_outer(rows_a, rows_b), dep

    def observe(self, t, a, ja, jb):
        mode_before = self.trigger.mode
        ia, ib = split_joint_row(a, self.ctx.mb)
        if mode_before in (PUNISH_A, PUNISH_B):
            t_local = t - self.trigger.trigger_stage
            if t_local == 1:
                am = self.s.am_a if mode_before == PUNISH_A else self.s.am_b
                own = ia if mode_before == PUNISH_A else ib
                self.atom = am.atom_from_signal(own)
        self.trigger.update(t, a, ja, jb, self._sched("a"), self._sched("b"),
                            self.ctx.mb)


class _SchedRows:
    def __init__(self, sched, n_cols):
        self.sched = sched
        self.n_cols = n_cols

    def __getitem__(self, t_minus_1):
        return self.sched.pair(t_minus_1 + 1)[0]


def _one_hot_rows(n_face, width, index):
    rows = np.zeros((n_face, width))
    rows[:, int(index)] = 1.0
    return rows


class NrUninformedStrategy:
    """On-path column play; on informed deviation, the sum-game tracker."""

    memory_class = "automaton-with-punishment"

    def __init__(self, scenario, component, sched_a, sched_b, tracker):
        self.scenario = scenario
        self.component = component
        self.sched_a = sched_a
        self.sched_b = sched_b
        self.tracker = tracker

    def session(self, ctx):
        return _NrUninformedSession(self, ctx)


class _NrUninformedSession:
    def __init__(self, strategy, ctx):
        self.s = strategy
        self.ctx = ctx
        self.trigger = _TriggerState()
        self.tracker_session = None
        self._one_hots = {}

    def _own_col(self, t):
        if self.s.component == "a":
            return self.s.sched_a.pair(t)[1]
        return self.s.sched_b.pair(t)[1]

    def _probs_for(self, col, width):
        probs = self._one_hots.get(col)
        if probs is None:
            probs = np.zeros(width)
            probs[col] = 1.0
            self._one_hots[col] = probs
        return probs

    def stage_probs(self, t):
        if self.trigger.mode == PUNISH_INFORMED:
            return self.tracker_session.stage_probs(t)
        width = self.ctx.na if self.s.component == "a" else self.ctx.nb
        return self._probs_for(self._own_col(t), width)

    def observe(self, t, a, ja, jb):
        if self.trigger.mode == PUNISH_INFORMED:
            self.tracker_session.observe(t, a, ja, jb)
            return
        self.trigger.update(t, a, ja, jb, self.s.sched_a.pair,
                            self.s.sched_b.pair, self.ctx.mb)
        if self.trigger.mode == PUNISH_INFORMED:
            self.tracker_session = self.s.tracker.session(self.ctx)


def nr_equilibrium_profile(scenario, phi_a=None, phi_b=None, envelopes=None,
                           resolution=None):
    """Punishment-backed profile realizing a joint NR payoff pair.

    When phi vectors are omitted they come from find_nr_payoff on each
    family.  Cell weights realizing each phi are re-solved for sparse
    support so the deterministic path's per-state payoff error stays
    proportional to the few active cells.
    """
    fa, fb = scenario.family_a, scenario.family_b
    if envelopes is None:
        env_a = concavify(sample_value(fa, resolution=resolution))
        env_b = concavify(sample_value(fb, resolution=resolution))
    else:
        env_a, env_b = envelopes
    if phi_a is None:
        found = find_nr_payoff(fa, scenario.marginal_a, envelope=env_a)
        if not found.found:
            raise MembershipFailed("NR payoff set of family A is empty")
        phi_a = found.phi
    if phi_b is None:
        found = find_nr_payoff(fb, scenario.marginal_b, envelope=env_b)
        if not found.found:
            raise MembershipFailed("NR payoff set of family B is empty")
        phi_b = found.phi
    phi_a = np.asarray(phi_a, dtype=float)
    phi_b = np.asarray(phi_b, dtype=float)
    report = joint_nr_membership(scenario, phi_a, phi_b,
                                 envelopes=(env_a, env_b))
    if not report.passed:
        raise MembershipFailed(
            "joint NR membership failed:\n" + report.render_text(), report)
    weights_a = _trim_weights(fa, phi_a)
    weights_b = _trim_weights(fb, phi_b)
    sched_a = _GrowingSchedule(weights_a)
    sched_b = _GrowingSchedule(weights_b)
    am_a = AmComponentInformed(fa, scenario.marginal_a, envelope=env_a)
    am_b = AmComponentInformed(fb, scenario.marginal_b, envelope=env_b)
    phi_face = np.array([phi_a[ia] + phi_b[ib]
                         for ia, ib in scenario.support_pairs])
    tracker = SumTrackerStrategy(scenario, phi_face, "a")
    tracker_b = SumTrackerStrategy(scenario, phi_face, "b")
    informed = NrInformedStrategy(scenario, sched_a, sched_b, am_a, am_b)
    un_a = NrUninformedStrategy(scenario, "a", sched_a, sched_b, tracker)
    un_b = NrUninformedStrategy(scenario, "b", sched_a, sched_b, tracker_b)
    return EquilibriumProfile(
        scenario=scenario, informed=informed, uninformed_a=un_a,
        uninformed_b=un_b, declared_per_state=phi_face,
        declared_uninformed={"a": float(phi_a @ scenario.marginal_a),
                             "b": float(phi_b @ scenario.marginal_b)},
        provenance="upper-end NR profile",
        params={"phi_a": phi_a, "phi_b": phi_b,
                "weights_a": weights_a, "weights_b": weights_b},
    )


class LowerEndInformed:
    """AM play on the sum game over the support face."""

    memory_class = "stationary-after-stage-1"

    def __init__(self, am):
        self.am = am

    def session(self, ctx):
        return _LowerEndInformedSession(self, ctx)


class _LowerEndInformedSession:
    def __init__(self, strategy, ctx):
        self.am = strategy.am
        self.atom = 0

    def stage(self, t):
        return self.am.stage_rule(self.atom, t)

    def observe(self, t, a, ja, jb):
        if t == 1:
            self.atom = self.am.atom_from_signal(a)


def lower_end_profile(scenario, envelopes=None, resolution=None):
    """Profile targeting the lower interval end Cav(h)(p0).

    The informed player signals the optimal split of h's envelope on the
    support face and then plays the sum game's stage optimum at the
    realized posterior; both uninformed players run the decentralized
    sum-game tracker against the envelope's active facet at the prior.
    """
    fa, fb = scenario.family_a, scenario.family_b
    if envelopes is None:
        env_a = concavify(sample_value(fa))
        env_b = concavify(sample_value(fb))
    else:
        env_a, env_b = envelopes
    extras = product_split_points(scenario, env_a, env_b)
    prior_face = scenario.prior_on_support
    extras.append(prior_face)
    grid = sum_value_grid(scenario, resolution=resolution, extra_points=extras)
    env_h = concavify(grid)
    sum_family = scenario.sum_family()
    am = AmComponentInformed(sum_family, prior_face, envelope=env_h)
    psi = env_h.facets[env_h.active_facet(prior_face)[0]].psi
    worst = float(np.min(grid.points @ psi - grid.values))
    if worst < -1e-7 * max(sum_family.payoff_scale, 1.0):
        raise PreconditionViolated(
            f"facet target fails dominance over h by {-worst:.3e}")
    informed = LowerEndInformed(am)
    un_a = SumTrackerStrategy(scenario, psi, "a")
    un_b = SumTrackerStrategy(scenario, psi, "b")
    cav_h = env_h.eval(prior_face)
    return EquilibriumProfile(
        scenario=scenario, informed=informed, uninformed_a=un_a,
        uninformed_b=un_b, declared_per_state=np.asarray(psi, dtype=float),
        declared_uninformed={"a": float("nan"), "b": float("nan")},
        provenance="lower-end profile",
        params={"cav_h": cav_h,
                "split_alphas": am.split.alphas,
                "split_posteriors": am.split.posteriors},
    )


class StandardPairInformed:
    """AM signaling in one component, myopic stage optima in the other."""

    memory_class = "stationary-after-stage-1"

    def __init__(self, scenario, component, am, other_rows_by_atom,
                 other_prior_row):
        self.scenario = scenario
        self.component = component
        self.am = am
        self.other_rows_by_atom = other_rows_by_atom
        self.other_prior_row = other_prior_row

    def session(self, ctx):
        return _StandardPairInformedSession(self, ctx)


class _StandardPairInformedSession:
    def __init__(self, strategy, ctx):
        self.s = strategy
        self.ctx = ctx
        self.atom = 0
        self._stationary = {}

    def stage(self, t):
        s, ctx = self.s, self.ctx
        comp_is_a = s.component == "a"
        if t == 1:
            comp_rule, dep = s.am.stage_rule(0, 1)
            lift = ctx.ka_of_face if comp_is_a else ctx.kb_of_face
            comp_rows = comp_rule[lift]
            other_width = ctx.mb if comp_is_a else ctx.ma
            other_rows = np.broadcast_to(s.other_prior_row,
                                         (ctx.n_face, other_width))
            rows_a = comp_rows if comp_is_a else other_rows
            rows_b = other_rows if comp_is_a else comp_rows
            return _rows_outer(rows_a, rows_b), dep
        mat = self._stationary.get(self.atom)
        if mat is None:
            comp_row = s.am.atom_rows[self.atom]
            other_row = s.other_rows_by_atom[self.atom]
            row_a = comp_row if comp_is_a else other_row
            row_b = other_row if comp_is_a else comp_row
            joint = (row_a[:, None] * row_b[None, :]).ravel()
            mat = np.broadcast_to(joint, (ctx.n_face, joint.shape[0])).copy()
            self._stationary[self.atom] = mat
        return mat, False

    def observe(self, t, a, ja, jb):
        if t == 1:
            ia, ib = split_joint_row(a, self.ctx.mb)
            own = ia if self.s.component == "a" else ib
            self.atom = self.s.am.atom_from_signal(own)


class MyopicUninformed:
    """Column optimum of one family at the public posterior's atom."""

    memory_class = "stationary-after-stage-1"

    def __init__(self, scenario, component, signal_component, am,
                 prior_probs, atom_probs):
        self.scenario = scenario
        self.component = component
        self.signal_component = signal_component
        self.am = am
        self.prior_probs = prior_probs
        self.atom_probs = atom_probs

    def session(self, ctx):
        return _MyopicUninformedSession(self, ctx)


class _MyopicUninformedSession:
    def __init__(self, strategy, ctx):
        self.s = strategy
        self.ctx = ctx
        self.atom = 0

    def stage_probs(self, t):
        if t == 1:
            return self.s.prior_probs
        return self.s.atom_probs[self.atom]

    def observe(self, t, a, ja, jb):
        if t == 1:
            ia, ib = split_joint_row(a, self.ctx.mb)
            own = ia if self.s.signal_component == "a" else ib
            self.atom = self.s.am.atom_from_signal(own)


def standard_optimal_pair(scenario, component="b", envelopes=None,
                          resolution=None):
    """Classical optimal pair in one component game.

    The named component pairs the AM signaling construction with the
    Blackwell tracker for a supergradient of Cav(v) at the marginal
    prior; the other component is played myopically at the public
    posterior by both sides.  Declared per-state payoffs are the tracker
    targets plus the conditional expectations of the myopic component.
    """
    fa, fb = scenario.family_a, scenario.family_b
    if envelopes is None:
        env_a = concavify(sample_value(fa, resolution=resolution))
        env_b = concavify(sample_value(fb, resolution=resolution))
    else:
        env_a, env_b = envelopes
    comp_is_a = component == "a"
    comp_fam, comp_env = (fa, env_a) if comp_is_a else (fb, env_b)
    comp_prior = scenario.marginal_a if comp_is_a else scenario.marginal_b
    other_fam = fb if comp_is_a else fa
    am = AmComponentInformed(comp_fam, comp_prior, envelope=comp_env)
    pairs = scenario.support_pairs
    prior_face = scenario.prior_on_support
    atoms = am.split.posteriors
    other_rows, other_cols = [], []
    for i, atom in enumerate(atoms):
        face_post = _face_posterior(prior_face, pairs, atom,
                                    "a" if comp_is_a else "b")
        marg_other = _face_marginal(face_post, pairs, "b" if comp_is_a else "a",
                                    other_fam.n_states)
        sol_other = solve_matrix_game(other_fam.average_matrix(marg_other))
        other_rows.append(sol_other.row_strategy)
        other_cols.append(sol_other.col_strategy)
    other_prior = scenario.marginal_b if comp_is_a else scenario.marginal_a
    sol_other_prior = solve_matrix_game(other_fam.average_matrix(other_prior))
    informed = StandardPairInformed(scenario, component, am, other_rows,
                                    sol_other_prior.row_strategy)
    facet_i, _ = comp_env.active_facet(comp_prior)
    comp_phi = comp_env.facets[facet_i].psi
    un_comp = BlackwellUninformed(comp_fam, comp_phi, component,
                                  resolution=resolution)
    un_other = MyopicUninformed(scenario,
                                "b" if comp_is_a else "a", component, am,
                                sol_other_prior.col_strategy, other_cols)
    un_a = un_comp if comp_is_a else un_other
    un_b = un_other if comp_is_a else un_comp
    declared = np.zeros(len(pairs))
    comp_states = [ia if comp_is_a else ib for ia, ib in pairs]
    other_states = [ib if comp_is_a else ia for ia, ib in pairs]
    for s, (kc, ko) in enumerate(zip(comp_states, other_states)):
        pk = comp_prior[kc]
        declared[s] += comp_phi[kc]
        for i, atom in enumerate(atoms):
            w = am.split.alphas[i] * atom[kc] / pk if pk > 0 else 0.0
            pay_o = other_rows[i] @ other_fam.matrices[ko] @ other_cols[i]
            declared[s] += w * pay_o
    return EquilibriumProfile(
        scenario=scenario, informed=informed,
        uninformed_a=un_a, uninformed_b=un_b,
        declared_per_state=declared,
        declared_uninformed={"a": float("nan"), "b": float("nan")},
        provenance="standard-optimal pair",
        params={"component": component,
                "split_alphas": am.split.alphas,
                "split_posteriors": am.split.posteriors},
    )


def _face_posterior(prior_face, pairs, comp_atom, comp):
    """Bayes update of the face prior given the component posterior."""
    comp_states = [ia if comp == "a" else ib for ia, ib in pairs]
    comp_prior = np.zeros(max(comp_states) + 1)
    for s, kc in enumerate(comp_states):
        comp_prior[kc] += prior_face[s]
    post = np.array([prior_face[s] * (comp_atom[kc] / comp_prior[kc]
                                      if comp_prior[kc] > 0 else 0.0)
                     for s, kc in enumerate(comp_states)])
    total = post.sum()
    return post / total if total > 0 else prior_face


def _face_marginal(face_belief, pairs, comp, n_states):
    out = np.zeros(n_states)
    for s, (ia, ib) in enumerate(pairs):
        out[ia if comp == "a" else ib] += face_belief[s]
    return out


class JclInformed:
    memory_class = "automaton-with-punishment"

    def __init__(self, protocol, low, high):
        self.protocol = protocol
        self.low = low
        self.high = high

    def session(self, ctx):
        return _JclInformedSession(self, ctx)


class JclUninformed:
    memory_class = "automaton-with-punishment"

    def __init__(self, protocol, component, low, high):
        self.protocol = protocol
        self.component = component
        self.low = low
        self.high = high

    def session(self, ctx):
        return _JclUninformedSession(self, ctx)


class _JclState:
    """Bit accumulation and profile selection, identical for all players."""

    def __init__(self, protocol):
        self.protocol = protocol
        self.r = 0.0
        self.selected = None

    def feed(self, t, a, ja, mb):
        p = self.protocol
        if t > p.n_stages or self.selected is not None:
            return
        ia, _ = split_joint_row(a, mb)
        bit = (ia + ja) % 2
        self.r += bit * 2.0 ** (-t)
        if t == p.n_stages:
            self.selected = "high" if self.r < p.w_dyadic else "low"


@dataclass(frozen=True)
class JclProtocol:
    weight: float
    n_stages: int

    @property
    def w_dyadic(self):
        scale = 2 ** self.n_stages
        return round(self.weight * scale) / scale


class _JclInformedSession:
    def __init__(self, strategy, ctx):
        self.s = strategy
        self.ctx = ctx
        self.state = _JclState(strategy.protocol)
        self.inner = None
        lottery = np.zeros(ctx.n_joint_rows)
        lottery[joint_row(0, 0, ctx.mb)] = 0.5
        lottery[joint_row(1, 0, ctx.mb)] = 0.5
        self._lottery = np.broadcast_to(lottery,
                                        (ctx.n_face, ctx.n_joint_rows)).copy()

    def stage(self, t):
        n = self.s.protocol.n_stages
        if t <= n:
            return self._lottery, False
        if self.inner is None:
            picked = self.s.high if self.state.selected == "high" else self.s.low
            self.inner = picked.session(self.ctx)
        return self.inner.stage(t - n)

    def observe(self, t, a, ja, jb):
        n = self.s.protocol.n_stages
        if t <= n:
            self.state.feed(t, a, ja, self.ctx.mb)
        else:
            self.inner.observe(t - n, a, ja, jb)


class _JclUninformedSession:
    def __init__(self, strategy, ctx):
        self.s = strategy
        self.ctx = ctx
        self.state = _JclState(strategy.protocol)
        self.inner = None
        if strategy.component == "a":
            probs = np.zeros(ctx.na)
            probs[0] = 0.5
            probs[1] = 0.5
        else:
            probs = np.zeros(ctx.nb)
            probs[0] = 1.0
        self._lottery = probs

    def stage_probs(self, t):
        n = self.s.protocol.n_stages
        if t <= n:
            return self._lottery
        if self.inner is None:
            picked = self.s.high if self.state.selected == "high" else self.s.low
            self.inner = picked.session(self.ctx)
        return self.inner.stage_probs(t - n)

    def observe(self, t, a, ja, jb):
        n = self.s.protocol.n_stages
        if t <= n:
            self.state.feed(t, a, ja, self.ctx.mb)
        else:
            self.inner.observe(t - n, a, ja, jb)


def jcl_profile(e_low, e_high, weight, n_lottery_stages=10):
    """Mix two profiles through a jointly controlled lottery.

    Players 1 and 2 emit one unbiased public bit per stage for
    n_lottery_stages stages (parity of two uniform binary choices); the
    resulting dyadic draw selects e_high with probability equal to the
    n-bit rounding of weight.  Neither player can bias the draw.
    """
    if e_low.scenario is not e_high.scenario:
        if e_low.scenario.name != e_high.scenario.name:
            raise SynthesisError("profiles must target the same scenario")
    scenario = e_low.scenario
    if scenario.family_a.n_rows < 2:
        raise SynthesisError("lottery needs two informed rows in family A")
    if scenario.family_a.n_cols < 2:
        raise SynthesisError("lottery needs two columns for player 2")
    if not 0.0 <= weight <= 1.0:
        raise SynthesisError("weight must lie in [0, 1]")
    protocol = JclProtocol(weight=float(weight),
                           n_stages=int(n_lottery_stages))
    w = protocol.w_dyadic
    declared = (w * e_high.declared_per_state
                + (1.0 - w) * e_low.declared_per_state)
    return EquilibriumProfile(
        scenario=scenario,
        informed=JclInformed(protocol, e_low.informed, e_high.informed),
        uninformed_a=JclUninformed(protocol, "a", e_low.uninformed_a,
                                   e_high.uninformed_a),
        uninformed_b=JclUninformed(protocol, "b", e_low.uninformed_b,
                                   e_high.uninformed_b),
        declared_per_state=declared,
        declared_uninformed={"a": float("nan"), "b": float("nan")},
        provenance="JCL mixture",
        params={"weight": float(weight), "w_dyadic": w,
                "n_lottery_stages": int(n_lottery_stages),
                "low": e_low.provenance, "high": e_high.provenance},
    )
