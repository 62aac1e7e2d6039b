"""Episode execution, posterior tracking, and equilibrium diagnostics.

run_episode drives one play of the repeated game from a profile's
sessions.  Posteriors are computed analytically from the informed
session's declared stage rule, never estimated from samples, so the
martingale checks are exact.  Each episode derives four RNG streams from
its root seed by fixed labels (state draw, then one per player); adding
diagnostics or recording never perturbs play.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .games import GameError
from .envelope import eval_cav
from .strategies import EquilibriumProfile, ProfileContext, split_joint_row


class SimulationError(GameError):
    pass


class ZeroProbabilityObservation(SimulationError):
    pass


def posterior_update(belief, rule_matrix, observed):
    """Bayes update of a face belief given the informed stage rule.

    rule_matrix has one row per face state; observed is the realized
    joint informed action (column index).
    """
    p = np.asarray(belief, dtype=float)
    lik = rule_matrix[:, int(observed)]
    post = p * lik
    total = post.sum()
    if total <= 0.0:
        raise ZeroProbabilityObservation(
            f"action {observed} has zero probability under the current belief"
        )
    return post / total


@dataclass(frozen=True)
class Trace:
    """Full record of one episode."""

    seed: int
    horizon: int
    state_index: int
    state_pair: tuple
    actions: np.ndarray
    payoffs: np.ndarray
    posteriors: np.ndarray

    @property
    def average_payoffs(self):
        return self.payoffs.mean(axis=0)

    @property
    def average_total(self):
        return float(self.payoffs.sum(axis=1).mean())

    def running_averages(self):
        t = np.arange(1, self.horizon + 1)[:, None]
        return np.cumsum(self.payoffs, axis=0) / t

    @property
    def final_posterior(self):
        return self.posteriors[-1]


def _draw_index(u, probs):
    c = 0.0
    for i in range(probs.shape[0] - 1):
        c += probs[i]
        if u < c:
            return i
    return probs.shape[0] - 1


class _CumulativeCache:
    """Cumulative sums keyed by array identity (sessions reuse rule objects).

    Entries hold a strong reference to the keyed array, so an id() can
    never be recycled into a stale hit while it is cached.
    """

    def __init__(self):
        self._store = {}

    def get(self, arr):
        key = id(arr)
        hit = self._store.get(key)
        if hit is not None and hit[0] is arr:
            return hit[1]
        if len(self._store) > 4096:
            self._store.clear()
        cum = np.cumsum(arr, axis=-1)
        self._store[key] = (arr, cum)
        return cum


def run_episode(scenario, profile, horizon, seed):
    """Play one episode; fully deterministic given the seed."""
    if horizon < 1:
        raise SimulationError("horizon must be at least 1")
    ctx = ProfileContext(scenario)
    informed = profile.informed.session(ctx)
    un_a = profile.uninformed_a.session(ctx)
    un_b = profile.uninformed_b.session(ctx)
    root = np.random.SeedSequence(int(seed))
    s_state, s_inf, s_a, s_b = [np.random.default_rng(s)
                                for s in root.spawn(4)]
    p0 = scenario.prior_on_support
    state = _draw_index(float(s_state.random()), p0)
    pair = ctx.pairs[state]
    pay_a = scenario.family_a.matrices[ctx.ka_of_face]
    pay_b = scenario.family_b.matrices[ctx.kb_of_face]
    u_inf = s_inf.random(horizon)
    u_a = s_a.random(horizon)
    u_b = s_b.random(horizon)
    mb = ctx.mb
    cache = _CumulativeCache()
    actions = np.empty((horizon, 3), dtype=np.int64)
    payoffs = np.empty((horizon, 2))
    posteriors = np.empty((horizon + 1, ctx.n_face))
    p = p0.copy()
    posteriors[0] = p
    searchsorted = np.searchsorted
    for t in range(1, horizon + 1):
        mat, dep = informed.stage(t)
        cum = cache.get(mat)[state]
        a = int(searchsorted(cum, u_inf[t - 1], side="right"))
        if a >= mat.shape[1]:
            a = mat.shape[1] - 1
        pa = un_a.stage_probs(t)
        ja = int(searchsorted(cache.get(pa), u_a[t - 1], side="right"))
        if ja >= pa.shape[0]:
            ja = pa.shape[0] - 1
        pb = un_b.stage_probs(t)
        jb = int(searchsorted(cache.get(pb), u_b[t - 1], side="right"))
        if jb >= pb.shape[0]:
            jb = pb.shape[0] - 1
        if dep:
            p = posterior_update(p, mat, a)
        posteriors[t] = p
        ia, ib = a // mb, a % mb
        actions[t - 1, 0] = a
        actions[t - 1, 1] = ja
        actions[t - 1, 2] = jb
        payoffs[t - 1, 0] = pay_a[state, ia, ja]
        payoffs[t - 1, 1] = pay_b[state, ib, jb]
        informed.observe(t, a, ja, jb)
        un_a.observe(t, a, ja, jb)
        un_b.observe(t, a, ja, jb)
    return Trace(seed=int(seed), horizon=int(horizon), state_index=state,
                 state_pair=pair, actions=actions, payoffs=payoffs,
                 posteriors=posteriors)


@dataclass(frozen=True)
class Ensemble:
    scenario: object
    profile: EquilibriumProfile
    horizon: int
    traces: tuple

    def state_indices(self):
        return np.array([tr.state_index for tr in self.traces])

    def episode_averages(self):
        """(n_traces, 2) average payoff per game."""
        return np.array([tr.average_payoffs for tr in self.traces])

    def ex_ante_mean(self, component=None):
        avgs = self.episode_averages()
        if component == "a":
            vals = avgs[:, 0]
        elif component == "b":
            vals = avgs[:, 1]
        else:
            vals = avgs.sum(axis=1)
        return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))

    def per_state_means(self, component=None):
        avgs = self.episode_averages()
        if component == "a":
            vals = avgs[:, 0]
        elif component == "b":
            vals = avgs[:, 1]
        else:
            vals = avgs.sum(axis=1)
        states = self.state_indices()
        out = {}
        for s in sorted(set(states.tolist())):
            sel = vals[states == s]
            out[s] = (float(sel.mean()),
                      float(sel.std(ddof=1) / np.sqrt(len(sel)))
                      if len(sel) > 1 else float("inf"))
        return out


def run_ensemble(scenario, profile, horizon, seeds):
    traces = tuple(run_episode(scenario, profile, horizon, s) for s in seeds)
    return Ensemble(scenario=scenario, profile=profile, horizon=int(horizon),
                    traces=traces)


def _replay_sessions(scenario, profile, prefix):
    ctx = ProfileContext(scenario)
    informed = profile.informed.session(ctx)
    un_a = profile.uninformed_a.session(ctx)
    un_b = profile.uninformed_b.session(ctx)
    for t, (a, ja, jb) in enumerate(prefix, start=1):
        informed.stage(t)
        un_a.stage_probs(t)
        un_b.stage_probs(t)
        informed.observe(t, a, ja, jb)
        un_a.observe(t, a, ja, jb)
        un_b.observe(t, a, ja, jb)
    return ctx, informed, un_a, un_b


def _cav_at(envelope, q):
    """Envelope value with exact lookup at hull vertices.

    Snapping to stored vertex values keeps analytically exact residuals
    (dyadic splits) free of facet-interpolation dust.
    """
    q = np.asarray(q, dtype=float)
    pts = envelope.vertex_points
    hit = np.flatnonzero(np.max(np.abs(pts - q[None, :]), axis=1) == 0.0)
    if hit.size:
        return float(envelope.vertex_values[hit[0]])
    return eval_cav(envelope, q)


@dataclass(frozen=True)
class NodeCheck:
    stage: int
    prefix: tuple
    reach: float
    one_step_residual: float
    cav_residual_a: float
    cav_residual_b: float


@dataclass(frozen=True)
class DiagnosticsReport:
    nodes: tuple
    max_one_step_residual: float
    stage1_cav_residual_a: float
    stage1_cav_residual_b: float
    jensen: dict
    product_deviation_max: float
    product_deviation_final_mean: float

    def to_record(self):
        return {
            "max_one_step_residual": float(self.max_one_step_residual),
            "stage1_cav_residual_a": float(self.stage1_cav_residual_a),
            "stage1_cav_residual_b": float(self.stage1_cav_residual_b),
            "jensen": {k: float(v) for k, v in self.jensen.items()},
            "product_deviation_max": float(self.product_deviation_max),
            "product_deviation_final_mean":
                float(self.product_deviation_final_mean),
            "n_nodes": len(self.nodes),
        }

    def render_text(self):
        lines = ["martingale diagnostics"]
        lines.append(f"  one-step residual (max over {len(self.nodes)} nodes): "
                     f"{self.max_one_step_residual:.3e}")
        lines.append(f"  stage-1 Cav residual, family A: "
                     f"{self.stage1_cav_residual_a:.12g}")
        lines.append(f"  stage-1 Cav residual, family B: "
                     f"{self.stage1_cav_residual_b:.12g}")
        for k, v in self.jensen.items():
            lines.append(f"  Jensen margin {k}: {v:.3e}")
        lines.append(f"  product deviation: max {self.product_deviation_max:.3e}"
                     f", final mean {self.product_deviation_final_mean:.3e}")
        return "\n".join(lines)


def _face_marginals(scenario, face_belief):
    ma, mb_ = None, None
    pairs = scenario.support_pairs
    ka = scenario.family_a.n_states
    kb = scenario.family_b.n_states
    ma = np.zeros(ka)
    mb_ = np.zeros(kb)
    for s, (ia, ib) in enumerate(pairs):
        ma[ia] += face_belief[s]
        mb_[ib] += face_belief[s]
    return ma, mb_


def _product_deviation(scenario, face_belief):
    pairs = scenario.support_pairs
    ka = scenario.family_a.n_states
    kb = scenario.family_b.n_states
    joint = np.zeros((ka, kb))
    for s, (ia, ib) in enumerate(pairs):
        joint[ia, ib] = face_belief[s]
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    return float(np.abs(joint - np.outer(pa, pb)).sum())


def martingale_diagnostics(ensemble, envelopes, depth=3):
    """Analytic martingale checks plus ensemble-level aggregates.

    Expands the informed rule's one-step distribution on every history
    prefix up to the given depth (uninformed actions fixed at their
    modal choices), checking E[p_next | h] = p exactly and recording the
    per-component Cav supermartingale residuals.  Ensemble aggregates
    check the Jensen direction at the final stage and the product-form
    deviation of the posterior path.
    """
    scenario = ensemble.scenario
    profile = ensemble.profile
    env_a, env_b = envelopes
    nodes = []

    def expand(prefix, belief, reach, stage):
        ctx, informed, un_a, un_b = _replay_sessions(scenario, profile, prefix)
        mat, dep = informed.stage(stage)
        pa = un_a.stage_probs(stage)
        pb = un_b.stage_probs(stage)
        ja = int(np.argmax(pa))
        jb = int(np.argmax(pb))
        action_probs = belief @ mat
        support = np.flatnonzero(action_probs > 1e-15)
        posts = []
        for a in support:
            posts.append(posterior_update(belief, mat, a) if dep else belief)
        mean_post = sum(action_probs[a] * q
                        for a, q in zip(support, posts))
        one_step = float(np.max(np.abs(mean_post - belief)))
        marg_a, marg_b = _face_marginals(scenario, belief)
        cav_a_now = _cav_at(env_a, marg_a)
        cav_b_now = _cav_at(env_b, marg_b)
        exp_a = 0.0
        exp_b = 0.0
        for a, q in zip(support, posts):
            qa, qb = _face_marginals(scenario, q)
            exp_a += action_probs[a] * _cav_at(env_a, qa)
            exp_b += action_probs[a] * _cav_at(env_b, qb)
        nodes.append(NodeCheck(
            stage=stage, prefix=tuple(prefix), reach=reach,
            one_step_residual=one_step,
            cav_residual_a=cav_a_now - exp_a,
            cav_residual_b=cav_b_now - exp_b,
        ))
        if stage < depth:
            for a, q in zip(support, posts):
                expand(prefix + [(int(a), ja, jb)], q,
                       reach * float(action_probs[a]), stage + 1)

    expand([], scenario.prior_on_support, 1.0, 1)
    root = nodes[0]
    final_cav_a = []
    final_cav_b = []
    prod_max = 0.0
    prod_final = []
    for tr in ensemble.traces:
        qa, qb = _face_marginals(scenario, tr.final_posterior)
        final_cav_a.append(_cav_at(env_a, qa))
        final_cav_b.append(_cav_at(env_b, qb))
        sample = tr.posteriors[:: max(1, tr.horizon // 64)]
        devs = [_product_deviation(scenario, q) for q in sample]
        prod_max = max(prod_max, max(devs))
        prod_final.append(_product_deviation(scenario, tr.final_posterior))
    p0a, p0b = _face_marginals(scenario, scenario.prior_on_support)
    jensen = {
        "a": float(np.mean(final_cav_a) - _cav_at(env_a, p0a)),
        "b": float(np.mean(final_cav_b) - _cav_at(env_b, p0b)),
    }
    return DiagnosticsReport(
        nodes=tuple(nodes),
        max_one_step_residual=max(n.one_step_residual for n in nodes),
        stage1_cav_residual_a=root.cav_residual_a,
        stage1_cav_residual_b=root.cav_residual_b,
        jensen=jensen,
        product_deviation_max=prod_max,
        product_deviation_final_mean=float(np.mean(prod_final)),
    )


class OneShotInformed:
    """Play the base informed strategy except for one forced stage."""

    def __init__(self, base, stage, action):
        self.base = base
        self.stage_index = int(stage)
        self.action = int(action)

    def session(self, ctx):
        return _OneShotInformedSession(self, ctx)


class _OneShotInformedSession:
    def __init__(self, strategy, ctx):
        self.s = strategy
        self.ctx = ctx
        self.inner = strategy.base.session(ctx)
        forced = np.zeros((ctx.n_face, ctx.n_joint_rows))
        forced[:, strategy.action] = 1.0
        self._forced = forced

    def stage(self, t):
        if t == self.s.stage_index:
            self.inner.stage(t)
            return self._forced, False
        return self.inner.stage(t)

    def observe(self, t, a, ja, jb):
        self.inner.observe(t, a, ja, jb)


class OneShotUninformed:
    def __init__(self, base, stage, action, width):
        self.base = base
        self.stage_index = int(stage)
        self.action = int(action)
        self.width = int(width)

    def session(self, ctx):
        return _OneShotUninformedSession(self, ctx)


class _OneShotUninformedSession:
    def __init__(self, strategy, ctx):
        self.s = strategy
        self.inner = strategy.base.session(ctx)
        forced = np.zeros(strategy.width)
        forced[strategy.action] = 1.0
        self._forced = forced

    def stage_probs(self, t):
        if t == self.s.stage_index:
            self.inner.stage_probs(t)
            return self._forced
        return self.inner.stage_probs(t)

    def observe(self, t, a, ja, jb):
        self.inner.observe(t, a, ja, jb)


class _InformedReplica:
    """Local copy of an informed session, advanced by public observations."""

    def __init__(self, strategy, ctx):
        self.session = strategy.session(ctx)
        self._last = (None, None)

    def rule(self, t):
        if self._last[0] != t:
            self._last = (t, self.session.stage(t))
        return self._last[1]

    def observe(self, t, a, ja, jb):
        self.rule(t)
        self.session.observe(t, a, ja, jb)


class _UninformedReplica:
    def __init__(self, strategy, ctx):
        self.session = strategy.session(ctx)
        self._last = (None, None)

    def probs(self, t):
        if self._last[0] != t:
            self._last = (t, self.session.stage_probs(t))
        return self._last[1]

    def observe(self, t, a, ja, jb):
        self.probs(t)
        self.session.observe(t, a, ja, jb)


class MyopicInformedDeviation:
    """Stage best response against the co-players' declared strategies.

    Replicates both uninformed sessions to read off their current mixed
    columns, then plays the per-state joint row maximizing the current
    stage payoff.  This is the classic fully revealing myopic deviation.
    """

    def __init__(self, scenario, profile):
        self.scenario = scenario
        self.profile = profile

    def session(self, ctx):
        return _MyopicInformedSession(self, ctx)


class _MyopicInformedSession:
    def __init__(self, strategy, ctx):
        self.ctx = ctx
        self.rep_a = _UninformedReplica(strategy.profile.uninformed_a, ctx)
        self.rep_b = _UninformedReplica(strategy.profile.uninformed_b, ctx)
        sc = ctx.scenario
        self.pay_a = sc.family_a.matrices[ctx.ka_of_face]
        self.pay_b = sc.family_b.matrices[ctx.kb_of_face]

    def stage(self, t):
        pa = self.rep_a.probs(t)
        pb = self.rep_b.probs(t)
        ga = self.pay_a @ pa
        gb = self.pay_b @ pb
        joint = ga[:, :, None] + gb[:, None, :]
        flat = joint.reshape(self.ctx.n_face, -1)
        rule = np.zeros_like(flat)
        rule[np.arange(self.ctx.n_face), np.argmax(flat, axis=1)] = 1.0
        return rule, True

    def observe(self, t, a, ja, jb):
        self.rep_a.observe(t, a, ja, jb)
        self.rep_b.observe(t, a, ja, jb)


class MyopicUninformedDeviation:
    """Column optimum of one family at the running public posterior.

    Replicates the profile's informed session to recover the declared
    stage rule, so the posterior is the same analytic Bayes update that
    an outside observer of the play would hold.
    """

    def __init__(self, scenario, profile, component):
        from .games import solve_matrix_game
        self.scenario = scenario
        self.profile = profile
        self.component = component
        self.family = (scenario.family_a if component == "a"
                       else scenario.family_b)
        self.solve = solve_matrix_game
        self._cache = {}

    def session(self, ctx):
        return _MyopicUninformedDevSession(self, ctx)


class _MyopicUninformedDevSession:
    def __init__(self, strategy, ctx):
        self.s = strategy
        self.ctx = ctx
        self.rep = _InformedReplica(strategy.profile.informed, ctx)
        self.belief = ctx.scenario.prior_on_support.copy()

    def stage_probs(self, t):
        self.rep.rule(t)
        marg_a, marg_b = _face_marginals(self.ctx.scenario, self.belief)
        marg = marg_a if self.s.component == "a" else marg_b
        key = tuple(np.round(marg, 9))
        probs = self.s._cache.get(key)
        if probs is None:
            probs = self.s.solve(self.s.family.average_matrix(marg)).col_strategy
            self.s._cache[key] = probs
        return probs

    def observe(self, t, a, ja, jb):
        mat, dep = self.rep.rule(t)
        if dep:
            try:
                self.belief = posterior_update(self.belief, mat, a)
            except ZeroProbabilityObservation:
                pass
        self.rep.observe(t, a, ja, jb)


@dataclass(frozen=True)
class DeviationCheckRow:
    horizon: int
    role: str
    deviation: str
    condition: str
    baseline: float
    deviated: float
    gain: float
    stderr: float
    epsilon: float
    passed: bool


@dataclass(frozen=True)
class DeviationTable:
    rows: tuple

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def render_text(self):
        lines = ["epsilon-equilibrium battery (battery-limited check, not a "
                 "proof of equilibrium)"]
        for r in self.rows:
            lines.append(
                f"  T={r.horizon} {r.role} `{r.deviation}` {r.condition}: "
                f"gain {r.gain:+.5f} (se {r.stderr:.5f}, eps {r.epsilon:.5f}) "
                f"{'ok' if r.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_records(self):
        return [r.__dict__ for r in self.rows]


def _swap(profile, role, strategy):
    kwargs = dict(
        scenario=profile.scenario, informed=profile.informed,
        uninformed_a=profile.uninformed_a, uninformed_b=profile.uninformed_b,
        declared_per_state=profile.declared_per_state,
        declared_uninformed=profile.declared_uninformed,
        provenance=profile.provenance, params=profile.params,
    )
    kwargs[role] = strategy
    return EquilibriumProfile(**kwargs)


def default_deviation_battery(scenario, profile):
    """Stationary, myopic, null, and depth-limited one-shot deviations."""
    from .strategies import StationaryInformed, StationaryUninformed
    ctx = ProfileContext(scenario)
    battery = []
    for a in range(ctx.n_joint_rows):
        rule = np.zeros((ctx.n_face, ctx.n_joint_rows))
        rule[:, a] = 1.0
        ia, ib = split_joint_row(a, ctx.mb)
        battery.append(("informed", f"constant-row-({ia},{ib})",
                        StationaryInformed(rule, state_dependent=False)))
    battery.append(("informed", "myopic-stage-optimal",
                    MyopicInformedDeviation(scenario, profile)))
    battery.append(("informed", "one-shot-stage2-row0",
                    OneShotInformed(profile.informed, 2, 0)))
    battery.append(("informed", "null", profile.informed))
    for j in range(ctx.na):
        probs = np.zeros(ctx.na)
        probs[j] = 1.0
        battery.append(("uninformed_a", f"constant-col-{j}",
                        StationaryUninformed(probs)))
    battery.append(("uninformed_a", "myopic-col-optimal",
                    MyopicUninformedDeviation(scenario, profile, "a")))
    battery.append(("uninformed_a", "one-shot-stage2-col0",
                    OneShotUninformed(profile.uninformed_a, 2, 0, ctx.na)))
    battery.append(("uninformed_a", "null", profile.uninformed_a))
    for j in range(ctx.nb):
        probs = np.zeros(ctx.nb)
        probs[j] = 1.0
        battery.append(("uninformed_b", f"constant-col-{j}",
                        StationaryUninformed(probs)))
    battery.append(("uninformed_b", "myopic-col-optimal",
                    MyopicUninformedDeviation(scenario, profile, "b")))
    battery.append(("uninformed_b", "one-shot-stage2-col0",
                    OneShotUninformed(profile.uninformed_b, 2, 0, ctx.nb)))
    battery.append(("uninformed_b", "null", profile.uninformed_b))
    return battery


def epsilon_equilibrium_check(scenario, profile, deviations=None,
                              horizons=(10000,), n_seeds=30, epsilon_fn=None,
                              seed_base=77000):
    """Paired-seed deviation gains against the profile's punishments.

    The informed player's gain is checked per state on the prior's
    support (total payoff across both games); uninformed gains are
    ex-ante in their own game, with the sign convention that they pay
    the informed player.  The verdict is battery-limited: it can refute
    but never certify equilibrium.
    """
    if deviations is None:
        deviations = default_deviation_battery(scenario, profile)
    if epsilon_fn is None:
        epsilon_fn = lambda horizon: 5.0 / np.sqrt(horizon)
    rows = []
    for horizon in horizons:
        eps = float(epsilon_fn(horizon))
        seeds = [seed_base + i for i in range(n_seeds)]
        base = run_ensemble(scenario, profile, horizon, seeds)
        base_avgs = base.episode_averages()
        base_states = base.state_indices()
        for role, name, strategy in deviations:
            dev_profile = _swap(profile, role, strategy)
            dev = run_ensemble(scenario, dev_profile, horizon, seeds)
            dev_avgs = dev.episode_averages()
            if role == "informed":
                gains = dev_avgs.sum(axis=1) - base_avgs.sum(axis=1)
                for s in sorted(set(base_states.tolist())):
                    sel = gains[base_states == s]
                    mean = float(sel.mean())
                    se = (float(sel.std(ddof=1) / np.sqrt(len(sel)))
                          if len(sel) > 1 else 0.0)
                    rows.append(DeviationCheckRow(
                        horizon=horizon, role=role, deviation=name,
                        condition=f"state-{scenario.support_pairs[s]}",
                        baseline=float(base_avgs.sum(axis=1)[base_states == s].mean()),
                        deviated=float(dev_avgs.sum(axis=1)[base_states == s].mean()),
                        gain=mean, stderr=se, epsilon=eps,
                        passed=bool(mean <= eps + 3.0 * se)))
            else:
                col = 0 if role == "uninformed_a" else 1
                gains = base_avgs[:, col] - dev_avgs[:, col]
                # Ex-ante mean stratified by the drawn state (weighting the
                # per-state means by the prior), so the estimate does not
                # inherit the state draw's variance.
                p0 = scenario.prior_on_support
                mean = 0.0
                var = 0.0
                stratified = True
                for s in range(len(p0)):
                    sel = gains[base_states == s]
                    if sel.size == 0:
                        stratified = p0[s] <= 0.0
                        if not stratified:
                            break
                        continue
                    mean += p0[s] * float(sel.mean())
                    if sel.size > 1:
                        var += (p0[s] ** 2) * float(sel.var(ddof=1)) / sel.size
                if not stratified:
                    mean = float(gains.mean())
                    var = float(gains.var(ddof=1)) / len(gains)
                mean = float(mean)
                se = float(np.sqrt(var))
                rows.append(DeviationCheckRow(
                    horizon=horizon, role=role, deviation=name,
                    condition="ex-ante",
                    baseline=float(base_avgs[:, col].mean()),
                    deviated=float(dev_avgs[:, col].mean()),
                    gain=mean, stderr=se, epsilon=eps,
                    passed=bool(mean <= eps + 3.0 * se)))
    return DeviationTable(rows=tuple(rows))


def trace_to_csv(trace, scenario, out):
    """Write one trace as CSV (file path or open text handle)."""
    close = False
    if isinstance(out, str):
        out = open(out, "w")
        close = True
    try:
        pairs = scenario.support_pairs
        fa, fb = scenario.family_a, scenario.family_b
        mb = fb.n_rows
        post_cols = ",".join(f"posterior_{ia}_{ib}" for ia, ib in pairs)
        out.write("t,state_a,state_b,row_a,row_b,col_a,col_b,"
                  "payoff_a,payoff_b," + post_cols +
                  ",avg_a,avg_b,avg_total\n")
        run = trace.running_averages()
        for t in range(trace.horizon):
            a, ja, jb = trace.actions[t]
            ia, ib = split_joint_row(int(a), mb)
            cells = [str(t + 1),
                     fa.states[trace.state_pair[0]],
                     fb.states[trace.state_pair[1]],
                     fa.rows[ia], fb.rows[ib],
                     fa.cols[int(ja)], fb.cols[int(jb)],
                     f"{trace.payoffs[t, 0]:.12g}", f"{trace.payoffs[t, 1]:.12g}"]
            cells += [f"{x:.12g}" for x in trace.posteriors[t + 1]]
            cells += [f"{run[t, 0]:.12g}", f"{run[t, 1]:.12g}",
                      f"{run[t, 0] + run[t, 1]:.12g}"]
            out.write(",".join(cells) + "\n")
    finally:
        if close:
            out.close()
