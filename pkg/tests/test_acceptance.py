"""Acceptance checklist.

Nine numbered criteria, one test and one printed PASS/FAIL line each.
The first five pin the worked examples to their closed-form numbers,
six to eight exercise the synthesized equilibrium profiles at scale,
and nine runs six randomized property suites with zero tolerance for
violations.  Run with -s to see the checklist lines as they complete.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from spillover.games import (GameFamily, KinkDetected, SimplexChart,
                             gradient_from_actions, nr_value,
                             nr_values_on_points, solve_matrix_game)
from spillover.envelope import (SplitScheme, ValueGrid, clarke_gradient,
                                concavify, eval_cav, optimal_split,
                                sample_value)
from spillover.analysis import (JointScenario, check_locally_nonrevealing,
                                check_nr_property, compute_interval,
                                constrained_nr_value, find_nr_payoff,
                                verify_empty_certificate)
from spillover.scenarios import builtin_scenarios
from spillover.strategies import (AmComponentInformed, BlackwellUninformed,
                                  EquilibriumProfile, StationaryInformed,
                                  StationaryUninformed, frequency_sequence,
                                  jcl_profile, lower_end_profile,
                                  nr_equilibrium_profile, splitting_signal,
                                  standard_optimal_pair)
from spillover.simulate import (epsilon_equilibrium_check,
                                martingale_diagnostics, run_ensemble)
from spillover.cli import lambda_equation_infeasible


@contextmanager
def criterion(num, label):
    try:
        yield
    except BaseException:
        print(f"criterion {num} [{label}]: FAIL")
        raise
    print(f"criterion {num} [{label}]: PASS")


def test_criterion_01_example1_values_and_interval():
    t0 = time.perf_counter()
    with criterion(1, "example1 values, cav at 1/2, interval [19/16, 5/4]"):
        sc = builtin_scenarios()["example1"]
        qs = np.linspace(0.0, 1.0, 101)
        pts = np.stack([qs, 1.0 - qs], axis=1)

        va = nr_values_on_points(sc.family_a, pts)
        assert float(np.max(np.abs(va - qs * (1.0 - qs)))) <= 1e-9

        vb = nr_values_on_points(sc.family_b, pts)
        vb_exact = np.minimum(np.minimum(4.0 * qs, 4.0 - 4.0 * qs),
                              np.abs(4.0 * qs - 2.0))
        assert float(np.max(np.abs(vb - vb_exact))) <= 1e-9

        env_a = concavify(sample_value(sc.family_a, resolution=1e-3))
        env_b = concavify(sample_value(sc.family_b, resolution=1e-3))
        assert abs(eval_cav(env_b, np.array([0.5, 0.5])) - 1.0) <= 1e-6

        interval = compute_interval(sc, envelopes=(env_a, env_b),
                                    resolution=1e-3)
        assert abs(interval.lower - 19.0 / 16.0) <= 1e-4
        assert abs(interval.upper - 5.0 / 4.0) <= 1e-4
        assert time.perf_counter() - t0 < 5.0


def test_criterion_02_attainable_certificate():
    with criterion(2, "attainable: certificate p=0, phi=(0,0), no split"):
        sc = builtin_scenarios()["attainable"]
        fa = sc.family_a
        env = concavify(sample_value(fa))

        prop = check_nr_property(fa, sc.marginal_a, envelope=env)
        assert prop.found and prop.certificate is not None
        assert abs(float(prop.certificate.p_star[0])) <= 1e-9
        assert float(np.max(np.abs(prop.certificate.phi))) <= 1e-6

        payoff = find_nr_payoff(fa, sc.marginal_a, envelope=env)
        assert payoff.found
        assert float(np.max(np.abs(payoff.phi))) <= 1e-6

        assert check_locally_nonrevealing(fa, sc.marginal_a,
                                          envelope=env) is None


def test_criterion_03_nonattainable_emptiness():
    with criterion(3, "nonattainable: gradient {-2}, residual >= 2, empty"):
        sc = builtin_scenarios()["nonattainable"]
        fa = sc.family_a
        env = concavify(sample_value(fa))

        cg = clarke_gradient(fa, np.array([0.0, 1.0]))
        grads = np.unique(np.round(cg.gradients, 6), axis=0).ravel()
        assert grads.size == 1
        assert abs(float(grads[0]) + 2.0) <= 1e-3

        prop = check_nr_property(fa, sc.marginal_a, envelope=env)
        assert prop.status == "not_found"
        resid = max(att.residuals.get("cond2", 0.0) for att in prop.attempts
                    if np.isfinite(att.residuals.get("cond2", np.nan)))
        assert resid >= 2.0 - 1e-3

        payoff = find_nr_payoff(fa, sc.marginal_a, envelope=env)
        assert payoff.status == "empty"
        assert payoff.certificate is not None
        ver = verify_empty_certificate(fa, payoff, env)
        assert ver["implied_gap"] > 1e-9


def test_criterion_04_section4_example():
    with criterion(4, "section4: capped value, lambda, [1, 5/4], lower end"):
        sc = builtin_scenarios()["section4"]
        fa, fb = sc.family_a, sc.family_b
        env_a = concavify(sample_value(fa))
        env_b = concavify(sample_value(fb))

        for q in np.linspace(0.0, 1.0, 51):
            belief = np.array([q, 1.0 - q])
            cap = eval_cav(env_a, belief)
            constrained = constrained_nr_value(fa, belief, cap)
            assert abs(constrained - nr_value(fa, belief)) <= 1e-3

        infeasible, reason = lambda_equation_infeasible(
            [[0.5, 0.0], [0.0, 0.5]],
            [[0.0, 0.0], [0.5, 0.5]],
            [[0.5, 0.5], [0.0, 0.0]])
        assert infeasible, reason

        interval = compute_interval(sc, envelopes=(env_a, env_b))
        assert abs(interval.lower - 1.0) <= 1e-4
        assert abs(interval.upper - 1.25) <= 1e-4

        profile = lower_end_profile(sc, envelopes=(env_a, env_b))
        ensemble = run_ensemble(sc, profile, 10000, range(200))
        mean, se = ensemble.ex_ante_mean()
        assert abs(mean - 1.0) <= max(3.0 * se, 1e-9)


def test_criterion_05_splitting_strategy():
    with criterion(5, "split {1/4, 3/4}, simulated value 1, residual 1/16"):
        sc = builtin_scenarios()["example1"]
        env_a = concavify(sample_value(sc.family_a))
        env_b = concavify(sample_value(sc.family_b))

        split = optimal_split(env_b, np.array([0.5, 0.5]),
                              value_fn=lambda q: nr_value(sc.family_b, q))
        got = sorted(float(p[0]) for p in split.posteriors)
        assert got == [0.25, 0.75]

        rule = splitting_signal(split.barycenter, split, (0, 1))
        for i in range(split.n_atoms):
            lam = float(split.barycenter @ rule[:, i])
            post = split.barycenter * rule[:, i] / lam
            assert lam == pytest.approx(float(split.alphas[i]), abs=1e-15)
            assert np.array_equal(post, split.posteriors[i])

        profile = standard_optimal_pair(sc, component="b",
                                        envelopes=(env_a, env_b))
        ensemble = run_ensemble(sc, profile, 10000, range(200))
        mean_b, se_b = ensemble.ex_ante_mean(component="b")
        assert abs(mean_b - 1.0) <= max(3.0 * se_b, 1e-9)

        report = martingale_diagnostics(ensemble, (env_a, env_b))
        assert report.stage1_cav_residual_a == 1.0 / 16.0


class _AmAdapter:
    """Component signaling plan lifted to a scenario whose B side is null."""

    def __init__(self, family, prior):
        self.am = AmComponentInformed(family, prior)

    def session(self, ctx):
        return _AmAdapterSession(self.am, ctx)


class _AmAdapterSession:
    def __init__(self, am, ctx):
        self.am = am
        self.ctx = ctx
        self.atom = 0

    def stage(self, t):
        rule, dep = self.am.stage_rule(self.atom, t)
        return rule[self.ctx.ka_of_face], dep

    def observe(self, t, a, ja, jb):
        if t == 1:
            self.atom = self.am.atom_from_signal(a)


def test_criterion_06_blackwell_guarantee():
    t0 = time.perf_counter()
    with criterion(6, "tracker: avg <= phi + C/sqrt(T), C fitted at T=100"):
        sc = builtin_scenarios()["example1"]
        fam = sc.family_b
        duel = JointScenario(
            name="duel", family_a=fam,
            family_b=GameFamily(states=("0",), rows=("*",), cols=("*",),
                                matrices=[[[0.0]]]),
            prior=np.array([[0.5], [0.5]]))
        phi = np.array([1.0, 1.0])
        tracker = BlackwellUninformed(fam, phi, "a")
        passive = StationaryUninformed(np.array([1.0]))

        battery = {
            "constant-row0": StationaryInformed(
                np.array([[1.0, 0.0], [1.0, 0.0]]), state_dependent=False),
            "constant-row1": StationaryInformed(
                np.array([[0.0, 1.0], [0.0, 1.0]]), state_dependent=False),
            "state-map": StationaryInformed(
                np.array([[1.0, 0.0], [0.0, 1.0]])),
            "state-map-flip": StationaryInformed(
                np.array([[0.0, 1.0], [1.0, 0.0]])),
            "uniform": StationaryInformed(
                np.array([[0.5, 0.5], [0.5, 0.5]]), state_dependent=False),
            "signaler": _AmAdapter(fam, np.array([0.5, 0.5])),
        }
        horizons = ((100, 200), (1000, 100), (10000, 40))

        excess = {}
        for name, informed in battery.items():
            profile = EquilibriumProfile(
                scenario=duel, informed=informed, uninformed_a=tracker,
                uninformed_b=passive, declared_per_state=phi,
                declared_uninformed={}, provenance="tracker battery",
                params={})
            per_horizon = []
            for horizon, n_seeds in horizons:
                ens = run_ensemble(duel, profile, horizon, range(n_seeds))
                avgs = ens.episode_averages()[:, 0]
                states = ens.state_indices()
                per_horizon.append(max(
                    float(avgs[states == s].mean() - phi[s])
                    for s in sorted(set(states.tolist()))))
            excess[name] = per_horizon

        # C = 2 * sqrt(100) * worst excess at the shortest horizon; the
        # factor 2 absorbs Monte-Carlo noise at the longer horizons.
        c_fit = max(0.5, 20.0 * max(e[0] for e in excess.values()))
        assert c_fit <= 10.0
        for name, per_horizon in excess.items():
            for (horizon, _), exc in zip(horizons, per_horizon):
                assert exc <= c_fit / np.sqrt(horizon) + 1e-12, name
            assert per_horizon[0] + 1e-9 >= per_horizon[1]
            assert per_horizon[1] + 1e-9 >= per_horizon[2]
        assert time.perf_counter() - t0 < 60.0


def test_criterion_07_nr_profile():
    with criterion(7, "NR profile: flat posteriors, 12/T payoffs, battery"):
        sc = builtin_scenarios()["example1"]
        profile = nr_equilibrium_profile(sc)
        horizon = 10000
        ensemble = run_ensemble(sc, profile, horizon, range(16))

        declared = profile.declared_per_state
        for trace in ensemble.traces:
            assert np.all(trace.posteriors == sc.prior_on_support)
            err = abs(trace.average_total - declared[trace.state_index])
            assert err <= 12.0 / horizon

        table = epsilon_equilibrium_check(sc, profile, horizons=(horizon,),
                                          n_seeds=16)
        assert all(r.epsilon == pytest.approx(0.05) for r in table.rows)
        assert table.passed, table.render_text()


def test_criterion_08_jcl_lottery():
    with criterion(8, "JCL w=3/4: binomial selection band, mixed payoff"):
        sc = builtin_scenarios()["example1"]
        low = lower_end_profile(sc)
        high = nr_equilibrium_profile(sc)
        profile = jcl_profile(low, high, 0.75, n_lottery_stages=10)
        w = profile.params["w_dyadic"]
        assert w == 0.75

        n_trials = 100000
        chunk = 5000
        n_rows_b = sc.family_b.n_rows
        n_high = 0
        for start in range(0, n_trials, chunk):
            ens = run_ensemble(sc, profile, 10, range(start, start + chunk))
            for trace in ens.traces:
                r = 0.0
                for t in range(10):
                    ia = trace.actions[t, 0] // n_rows_b
                    ja = trace.actions[t, 1]
                    r += ((ia + ja) % 2) * 2.0 ** -(t + 1)
                n_high += r < w
        freq = n_high / n_trials
        sigma = np.sqrt(w * (1.0 - w) / n_trials)
        assert abs(freq - w) <= 3.0 * sigma

        upper = high.declared_ex_ante
        lower = low.declared_ex_ante
        implied = freq * upper + (1.0 - freq) * lower
        target = w * upper + (1.0 - w) * lower
        assert abs(implied - target) <= 3.0 * sigma * (upper - lower)
        assert profile.declared_ex_ante == pytest.approx(target, abs=1e-12)


def _random_family(rng, tag, n_states=2, shape=(2, 2), span=2.0):
    return GameFamily(
        states=tuple(f"{tag}{i}" for i in range(n_states)),
        rows=tuple(f"r{i}" for i in range(shape[0])),
        cols=tuple(f"c{i}" for i in range(shape[1])),
        matrices=rng.uniform(-span, span, (n_states,) + shape))


def _suite_lp_duality(violations):
    rng = np.random.default_rng(900001)
    for i in range(200):
        shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        mat = rng.uniform(-5.0, 5.0, shape)
        if i % 3 == 0:
            mat = np.round(mat)
        sol = solve_matrix_game(mat)
        tol = 1e-9 * max(1.0, float(np.abs(mat).max()))
        x, y = sol.row_strategy, sol.col_strategy
        ok = (float(np.min(x @ mat)) >= sol.value - tol
              and float(np.max(mat @ y)) <= sol.value + tol
              and np.min(x) >= -1e-12 and np.min(y) >= -1e-12
              and abs(float(x.sum()) - 1.0) <= 1e-9
              and abs(float(y.sum()) - 1.0) <= 1e-9)
        if not ok:
            violations.append(("lp-duality", i))


def _suite_envelope_invariants(violations):
    rng = np.random.default_rng(900002)
    for i in range(200):
        if i % 5 == 0:
            xs = np.linspace(0.0, 1.0, 11)
            a, b = np.meshgrid(xs, xs)
            keep = a.ravel() + b.ravel() <= 1.0 + 1e-12
            pts = np.stack([a.ravel()[keep], b.ravel()[keep],
                            1.0 - a.ravel()[keep] - b.ravel()[keep]], axis=1)
            face = (0, 1, 2)
        else:
            xs = np.linspace(0.0, 1.0, int(rng.integers(21, 81)))
            pts = np.stack([xs, 1.0 - xs], axis=1)
            face = (0, 1)
        vals = rng.uniform(-3.0, 3.0, len(pts))
        grid = ValueGrid(face=face, n_states=len(face), points=pts,
                         values=vals)
        env = concavify(grid)
        cav = env.eval_batch(pts)
        scale = max(1.0, float(np.abs(vals).max()))
        ok = (float(np.min(cav - vals)) >= -1e-9 * scale
              and abs(float(cav.max()) - float(vals.max())) <= 1e-9 * scale)
        idx = rng.integers(0, len(pts), size=(20, 2))
        mids = 0.5 * (pts[idx[:, 0]] + pts[idx[:, 1]])
        ok = ok and np.all(env.eval_batch(mids)
                           >= 0.5 * (cav[idx[:, 0]] + cav[idx[:, 1]])
                           - 1e-9 * scale)
        env2 = concavify(ValueGrid(face=face, n_states=len(face),
                                   points=pts, values=cav))
        ok = ok and float(np.max(np.abs(env2.eval_batch(pts) - cav))) \
            <= 1e-9 * scale
        if not ok:
            violations.append(("envelope", i))


def _suite_splitting_bayes(violations):
    rng = np.random.default_rng(900003)
    for i in range(200):
        k = int(rng.integers(2, 5))
        m = int(rng.integers(2, k + 2))
        alphas = rng.dirichlet(np.full(m, 1.5))
        atoms = rng.dirichlet(np.ones(k), size=m)
        prior = alphas @ atoms
        split = SplitScheme(face=tuple(range(k)), n_states=k, alphas=alphas,
                            posteriors=atoms, barycenter=prior)
        split.validate()
        rule = splitting_signal(prior, split, tuple(range(m)))
        ok = float(np.max(np.abs(rule.sum(axis=1) - 1.0))) <= 1e-9
        for j in range(m):
            lam = float(prior @ rule[:, j])
            post = prior * rule[:, j] / lam
            ok = ok and abs(lam - float(alphas[j])) <= 1e-12
            ok = ok and float(np.max(np.abs(post - atoms[j]))) <= 1e-9
        if not ok:
            violations.append(("splitting", i))


def _suite_scheduler_bound(violations):
    rng = np.random.default_rng(900004)
    for i in range(200):
        m = int(rng.integers(2, 7))
        w = rng.dirichlet(np.ones(m))
        if i % 4 == 0:
            w[int(rng.integers(0, m))] = 0.0
            w = w / w.sum()
        horizon = int(rng.integers(1, 400))
        seq = frequency_sequence(w, horizon)
        counts = np.zeros((horizon, m))
        counts[np.arange(horizon), seq] = 1.0
        counts = np.cumsum(counts, axis=0)
        t = np.arange(1, horizon + 1)[:, None]
        active = int(np.count_nonzero(w > 0.0))
        if float(np.max(np.abs(counts - t * w))) > active + 1e-9:
            violations.append(("scheduler", i))


def _suite_gradient_fd(violations):
    rng = np.random.default_rng(900005)
    kinked = 0
    for i in range(200):
        shape = (int(rng.integers(2, 4)), int(rng.integers(2, 4)))
        fam = _random_family(rng, "g", shape=shape)
        q = float(rng.uniform(0.05, 0.95))
        point = np.array([q, 1.0 - q])
        try:
            grad, _ = gradient_from_actions(fam, point)
        except KinkDetected:
            kinked += 1
            continue
        chart = SimplexChart(2)
        x0 = chart.from_point(point)
        h = 3e-6
        vp = nr_value(fam, chart.to_point(x0 + h))
        vm = nr_value(fam, chart.to_point(x0 - h))
        fd = (vp - vm) / (2.0 * h)
        if abs(float(grad[0]) - fd) > 1e-3 * fam.payoff_scale:
            violations.append(("gradient-fd", i))
    if kinked >= 150:
        violations.append(("gradient-fd", "too many kinked probes"))


def _suite_product_prior(violations):
    rng = np.random.default_rng(900006)
    for i in range(200):
        fa = _random_family(rng, "a")
        fb = _random_family(rng, "b")
        pa = rng.dirichlet([2.0, 2.0])
        pb = rng.dirichlet([2.0, 2.0])
        sc = JointScenario(name=f"product{i}", family_a=fa, family_b=fb,
                           prior=np.outer(pa, pb))
        interval = compute_interval(sc)
        if interval.width > 1e-4:
            violations.append(("product-prior", i))


def test_criterion_09_property_suites():
    t0 = time.perf_counter()
    with criterion(9, "six property suites, 200 scenarios each"):
        violations = []
        _suite_lp_duality(violations)
        _suite_envelope_invariants(violations)
        _suite_splitting_bayes(violations)
        _suite_scheduler_bound(violations)
        _suite_gradient_fd(violations)
        _suite_product_prior(violations)
        assert violations == []
        assert time.perf_counter() - t0 < 120.0
