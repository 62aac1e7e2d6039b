"""Command line front end for the spillover package.

Subcommands: analyze (value functions, envelopes, NR verdicts, payoff
interval), simulate (ensemble runs of a named equilibrium profile plus
diagnostics and a deviation battery), reproduce (pass/fail checklists
for the built-in worked examples), list-examples.

Conventions: numeric output is printed with 12 significant digits,
emitted files are deterministic (no timestamps), plot emission is a CSV
next to a gnuplot script.  Exit codes: 0 success, 2 invalid input,
3 analysis inconclusive or profile not applicable, 4 numerical failure.
"""

import argparse
import json
import os
import re
import sys
from fractions import Fraction

import numpy as np

from .games import GameError, nr_value, nr_values_on_points
from .envelope import (AllProbesKinked, clarke_gradient, concavify, eval_cav,
                       grid_table, optimal_split, sample_value)
from .analysis import (check_locally_nonrevealing, check_nr_property,
                       compute_interval, constrained_nr_value, find_nr_payoff,
                       joint_nr_membership, verify_empty_certificate)
from .scenarios import ScenarioFormatError, builtin_scenarios, load_scenario
from .strategies import (MembershipFailed, jcl_profile, lower_end_profile,
                         nr_equilibrium_profile, standard_optimal_pair)
from .simulate import (epsilon_equilibrium_check, martingale_diagnostics,
                       run_ensemble, trace_to_csv)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INCONCLUSIVE = 3
EXIT_NUMERICAL = 4

ENV_OUT_DIR = "SPILLOVER_OUT_DIR"


def _fmt(x):
    """12 significant digits for floats; everything else printed as is."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def _fmt_vec(v):
    return "(" + ", ".join(_fmt(float(x)) for x in np.asarray(v).ravel()) + ")"


def _sanitize(name):
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name.strip()) or "scenario"


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _gnuplot_script(csv_name, title, ycols):
    """Script text plotting named columns of a CSV against its first column."""
    lines = [
        'set datafile separator ","',
        f'set title "{title}"',
        "set key top right",
        "set grid",
    ]
    plots = [f'"{csv_name}" every ::1 using 1:{col} with lines title "{label}"'
             for label, col in ycols]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def _out_dir(args):
    out = args.out_dir or os.environ.get(ENV_OUT_DIR) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_scenario_arg(arg):
    """A scenario path, or the name of a built-in scenario."""
    if os.path.exists(arg):
        return load_scenario(arg)
    builtins = builtin_scenarios()
    if arg in builtins:
        return builtins[arg]
    raise ScenarioFormatError(
        f"'{arg}' is neither a readable file nor a built-in scenario "
        f"(built-ins: {', '.join(sorted(builtins))})")


def _resolution(args, scenario):
    if args.grid_res is not None:
        return args.grid_res
    return scenario.options.get("grid_res")


def _tolerance(args, scenario, default=1e-6):
    if args.tol is not None:
        return args.tol
    return scenario.options.get("tol", default)


# ---------------------------------------------------------------------------
# analyze


def _family_report(tag, family, marginal, envelope, tol, records, lines):
    """NR property, locally-NR, and NR payoff verdicts for one family."""
    lines.append(f"family {tag} ({family.n_states} states, "
                 f"{len(family.rows)}x{len(family.cols)} stage game)")
    lines.append(f"  prior marginal: {_fmt_vec(marginal)}")
    cav0 = eval_cav(envelope, marginal)
    lines.append(f"  value at prior: {_fmt(nr_value(family, marginal))}, "
                 f"cav: {_fmt(cav0)}")
    if family.n_states == 1:
        phi = np.array([nr_value(family, marginal)])
        lines.append("  NR property: certificate (single state, trivial)")
        lines.append(f"    p_star = {_fmt_vec(marginal)}, phi = {_fmt_vec(phi)}")
        records.append({"kind": "nr_property", "family": tag,
                        "status": "certificate", "trivial": True,
                        "phi": [float(phi[0])]})
        records.append({"kind": "nr_payoff", "family": tag, "status": "found",
                        "phi": [float(phi[0])]})
        lines.append(f"  NR payoff: found, phi = {_fmt_vec(phi)}")
        return "certificate"

    prop = check_nr_property(family, marginal, envelope=envelope)
    records.append({"kind": "nr_property", "family": tag, **prop.to_record()})
    lines.append(f"  NR property: {prop.status}")
    if prop.certificate is not None:
        cert = prop.certificate
        lines.append(f"    p_star = {_fmt_vec(cert.p_star)}, "
                     f"phi = {_fmt_vec(cert.phi)}")
        for key, val in cert.diagnostics.items():
            lines.append(f"    {key} residual: {_fmt(val)}")
    else:
        for att in prop.attempts:
            resid = ", ".join(f"{k}={_fmt(v)}" for k, v in att.residuals.items())
            note = f" [{att.note}]" if att.note else ""
            lines.append(f"    candidate at {_fmt_vec(att.point)}: {resid}{note}")

    split = check_locally_nonrevealing(family, marginal, envelope=envelope)
    if split is None:
        lines.append("  locally non-revealing: not found")
        records.append({"kind": "locally_nonrevealing", "family": tag,
                        "found": False})
    else:
        lines.append("  locally non-revealing: yes")
        for alpha, post in zip(split.alphas, split.posteriors):
            lines.append(f"    weight {_fmt(alpha)} on {_fmt_vec(post)}")
        records.append({"kind": "locally_nonrevealing", "family": tag,
                        "found": True,
                        "alphas": [float(a) for a in split.alphas],
                        "posteriors": [[float(x) for x in p]
                                       for p in split.posteriors]})

    payoff = find_nr_payoff(family, marginal, envelope=envelope, value_tol=tol)
    records.append({"kind": "nr_payoff", "family": tag, **payoff.to_record()})
    if payoff.found:
        lines.append(f"  NR payoff: found, phi = {_fmt_vec(payoff.phi)}")
    else:
        lines.append(f"  NR payoff: empty (best violation "
                     f"{_fmt(payoff.violation)}, certificate gap "
                     f"{_fmt(payoff.certificate['gap'])})")
    return prop.status


def cmd_analyze(args):
    scenario = _load_scenario_arg(args.scenario)
    res = _resolution(args, scenario)
    tol = _tolerance(args, scenario)
    out = _out_dir(args)
    prefix = _sanitize(scenario.name)

    fa, fb = scenario.family_a, scenario.family_b
    env_a = concavify(sample_value(fa, resolution=res))
    env_b = concavify(sample_value(fb, resolution=res))

    lines = [f"scenario: {scenario.name}"]
    if scenario.description:
        lines.append(scenario.description)
    records = [{"kind": "scenario", "name": scenario.name,
                "states_a": list(fa.states), "states_b": list(fb.states)}]
    files = []

    for tag, family, env in (("a", fa, env_a), ("b", fb, env_b)):
        header, rows = grid_table(env.grid, env,
                                  labels=[f"q_{s}" for s in family.states])
        csv_name = f"{prefix}_values_{tag}.csv"
        _write_csv(os.path.join(out, csv_name), header, rows)
        files.append(csv_name)
        if len(env.grid.face) == 2:
            script = _gnuplot_script(
                csv_name, f"{scenario.name}: family {tag.upper()}",
                [("value", 3), ("cav", 4)])
            gp_name = f"{prefix}_values_{tag}.gp"
            with open(os.path.join(out, gp_name), "w") as fh:
                fh.write(script)
            files.append(gp_name)
        records.append({"kind": "values", "family": tag, "csv": csv_name,
                        "n_points": int(env.grid.n_points)})

    statuses = []
    statuses.append(_family_report("a", fa, scenario.marginal_a, env_a, tol,
                                   records, lines))
    statuses.append(_family_report("b", fb, scenario.marginal_b, env_b, tol,
                                   records, lines))

    interval = compute_interval(scenario, envelopes=(env_a, env_b),
                                resolution=res)
    interval.validate()
    lines.append(f"payoff interval I(p0): [{_fmt(interval.lower)}, "
                 f"{_fmt(interval.upper)}] (width {_fmt(interval.width)})")
    records.append({"kind": "interval", **interval.to_record()})

    summary_name = f"{prefix}_analysis.txt"
    files.append(summary_name)
    lines.append("files: " + ", ".join(files))
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, summary_name), "w") as fh:
        fh.write(text)
    if args.format == "json-lines":
        _write_jsonl(os.path.join(out, f"{prefix}_analysis.jsonl"), records)
    sys.stdout.write(text)

    if "inconclusive" in statuses:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def parse_profile_spec(spec):
    """Split 'name:k=v,k=v' (spaces also accepted) into (name, kwargs)."""
    tokens = [t for t in re.split(r"[:\s,]+", spec.strip()) if t]
    if not tokens:
        raise ScenarioFormatError("empty profile spec")
    name, params = tokens[0], {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise ScenarioFormatError(
                f"profile parameter '{tok}' is not of the form key=value")
        key, _, val = tok.partition("=")
        params[key] = val
    return name, params


def build_profile(scenario, spec, resolution=None):
    name, params = parse_profile_spec(spec)
    if name == "nr_upper":
        return nr_equilibrium_profile(scenario, resolution=resolution)
    if name == "lower_end":
        return lower_end_profile(scenario, resolution=resolution)
    if name == "standard_pair":
        component = params.pop("component", "b")
        if params:
            raise ScenarioFormatError(
                f"unknown standard_pair parameters: {sorted(params)}")
        return standard_optimal_pair(scenario, component=component,
                                     resolution=resolution)
    if name == "jcl":
        if "w" not in params:
            raise ScenarioFormatError("jcl profile needs w=<weight in [0,1]>")
        weight = float(params.pop("w"))
        n_stages = int(params.pop("n", 10))
        if params:
            raise ScenarioFormatError(f"unknown jcl parameters: {sorted(params)}")
        low = lower_end_profile(scenario, resolution=resolution)
        high = nr_equilibrium_profile(scenario, resolution=resolution)
        return jcl_profile(low, high, weight, n_lottery_stages=n_stages)
    raise ScenarioFormatError(
        f"unknown profile '{name}' (known: nr_upper, lower_end, "
        f"standard_pair, jcl)")


def _resolve_seeds(args, scenario):
    base = args.seed if args.seed is not None else 0
    opt = scenario.options.get("seeds")
    if args.n_seeds is not None:
        return [base + i for i in range(args.n_seeds)]
    if isinstance(opt, list):
        return list(opt)
    if isinstance(opt, int):
        return [base + i for i in range(opt)]
    return [base + i for i in range(30)]


def _resolve_horizon(args, scenario):
    if args.horizon is not None:
        return args.horizon
    t_list = scenario.options.get("t_list")
    if t_list:
        return int(t_list[0])
    return 10000


def cmd_simulate(args):
    scenario = _load_scenario_arg(args.scenario)
    res = _resolution(args, scenario)
    out = _out_dir(args)
    horizon = _resolve_horizon(args, scenario)
    seeds = _resolve_seeds(args, scenario)
    try:
        profile = build_profile(scenario, args.profile, resolution=res)
    except MembershipFailed as exc:
        sys.stdout.write(str(exc) + "\n")
        return EXIT_INCONCLUSIVE

    prof_tag = _sanitize(parse_profile_spec(args.profile)[0])
    prefix = f"{_sanitize(scenario.name)}_{prof_tag}"
    ensemble = run_ensemble(scenario, profile, horizon, seeds)

    ens_rows = []
    for trace in ensemble.traces:
        ka, kb = trace.state_pair
        avg_a, avg_b = trace.average_payoffs
        ens_rows.append([trace.seed, ka, kb, avg_a, avg_b, avg_a + avg_b])
    ens_name = f"{prefix}_ensemble.csv"
    _write_csv(os.path.join(out, ens_name),
               ["seed", "state_a", "state_b", "avg_payoff_a", "avg_payoff_b",
                "avg_total"], ens_rows)

    trace_name = f"{prefix}_trace_seed{seeds[0]}.csv"
    with open(os.path.join(out, trace_name), "w") as fh:
        trace_to_csv(ensemble.traces[0], scenario, fh)
    n_post = ensemble.traces[0].posteriors.shape[1]
    avg_col = n_post + 8
    with open(os.path.join(out, f"{prefix}_trace_seed{seeds[0]}.gp"), "w") as fh:
        fh.write(_gnuplot_script(
            trace_name, f"{scenario.name}: running average, {args.profile}",
            [("avg_total", avg_col + 2)]))

    mean, se = ensemble.ex_ante_mean()
    declared = profile.declared_ex_ante
    lines = [f"scenario: {scenario.name}",
             f"profile: {args.profile} ({profile.provenance})",
             f"horizon: {horizon}, episodes: {len(seeds)}",
             f"ex-ante average payoff: {_fmt(mean)} (se {_fmt(se)})",
             f"declared ex-ante payoff: {_fmt(declared)}"]
    for s, (m, stderr) in ensemble.per_state_means().items():
        pair = scenario.support_pairs[s]
        lines.append(f"  state {pair}: mean {_fmt(m)} (se {_fmt(stderr)})")

    env_a = concavify(sample_value(scenario.family_a, resolution=res))
    env_b = concavify(sample_value(scenario.family_b, resolution=res))
    report = martingale_diagnostics(ensemble, (env_a, env_b))
    rec = report.to_record()
    lines.append("posterior diagnostics:")
    lines.append(f"  max one-step martingale residual: "
                 f"{_fmt(rec['max_one_step_residual'])}")
    lines.append(f"  stage-1 cav residual (family a): "
                 f"{_fmt(rec['stage1_cav_residual_a'])}")
    lines.append(f"  stage-1 cav residual (family b): "
                 f"{_fmt(rec['stage1_cav_residual_b'])}")
    for key, val in sorted(rec["jensen"].items()):
        lines.append(f"  jensen margin {key}: {_fmt(val)}")
    lines.append(f"  max product deviation: "
                 f"{_fmt(rec['product_deviation_max'])}")

    battery_seeds = min(len(seeds), 12)
    table = epsilon_equilibrium_check(scenario, profile, horizons=(horizon,),
                                      n_seeds=battery_seeds)
    eps_rows = [[r.horizon, r.role, r.deviation, r.condition, r.baseline,
                 r.deviated, r.gain, r.stderr, r.epsilon, r.passed]
                for r in table.rows]
    eps_name = f"{prefix}_epsilon.csv"
    _write_csv(os.path.join(out, eps_name),
               ["horizon", "role", "deviation", "condition", "baseline",
                "deviated", "gain", "stderr", "epsilon", "passed"], eps_rows)
    lines.append(f"deviation battery ({battery_seeds} paired seeds, "
                 f"epsilon = 5/sqrt(T)): "
                 f"{'all within epsilon' if table.passed else 'EXCEEDED'}")
    worst = max(table.rows, key=lambda r: r.gain - 3.0 * r.stderr)
    lines.append(f"  largest gain: {worst.role} `{worst.deviation}` "
                 f"{worst.condition}: {_fmt(worst.gain)} "
                 f"(se {_fmt(worst.stderr)}, epsilon {_fmt(worst.epsilon)})")
    lines.append(f"files: {ens_name}, {trace_name}, {eps_name}")

    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, f"{prefix}_report.txt"), "w") as fh:
        fh.write(text)
    if args.format == "json-lines":
        records = [{"kind": "episode", "seed": int(r[0]), "state_a": r[1],
                    "state_b": r[2], "avg_a": r[3], "avg_b": r[4],
                    "avg_total": r[5]} for r in ens_rows]
        records.append({"kind": "ex_ante", "mean": mean, "stderr": se,
                        "declared": declared})
        records.append({"kind": "diagnostics", **rec})
        records.extend({"kind": "epsilon", **r} for r in table.to_records())
        _write_jsonl(os.path.join(out, f"{prefix}_report.jsonl"), records)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce


class Check:
    def __init__(self, label, passed, detail=""):
        self.label = label
        self.passed = bool(passed)
        self.detail = detail

    def line(self):
        word = "PASS" if self.passed else "FAIL"
        tail = f": {self.detail}" if self.detail else ""
        return f"[{word}] {self.label}{tail}"


def _example1_vb_exact(q):
    if q < 0.25:
        return 4.0 * q
    if q < 0.5:
        return -4.0 * q + 2.0
    if q < 0.75:
        return 4.0 * q - 2.0
    return -4.0 * q + 4.0


def checks_example1(grid_res=1e-3):
    sc = builtin_scenarios()["example1"]
    fa, fb = sc.family_a, sc.family_b
    checks = []

    qs = np.linspace(0.0, 1.0, 101)
    pts = np.stack([qs, 1.0 - qs], axis=1)
    va = nr_values_on_points(fa, pts)
    err_a = float(np.max(np.abs(va - qs * (1.0 - qs))))
    checks.append(Check("value of family A equals q(1-q) on 101 points",
                        err_a <= 1e-9, f"max error {_fmt(err_a)}"))

    vb = nr_values_on_points(fb, pts)
    vb_exact = np.array([_example1_vb_exact(q) for q in qs])
    err_b = float(np.max(np.abs(vb - vb_exact)))
    checks.append(Check("value of family B matches its four-piece formula",
                        err_b <= 1e-9, f"max error {_fmt(err_b)}"))

    env_b = concavify(sample_value(fb, resolution=grid_res))
    cav_half = eval_cav(env_b, np.array([0.5, 0.5]))
    checks.append(Check("cav of family B value at 1/2 equals 1",
                        abs(cav_half - 1.0) <= 1e-6, f"cav = {_fmt(cav_half)}"))

    env_a = concavify(sample_value(fa, resolution=grid_res))
    interval = compute_interval(sc, envelopes=(env_a, env_b),
                                resolution=grid_res)
    ok_lo = abs(interval.lower - 19.0 / 16.0) <= 1e-4
    ok_hi = abs(interval.upper - 1.25) <= 1e-4
    checks.append(Check("payoff interval equals [19/16, 5/4]", ok_lo and ok_hi,
                        f"[{_fmt(interval.lower)}, {_fmt(interval.upper)}]"))

    split = optimal_split(env_b, np.array([0.5, 0.5]),
                          value_fn=lambda q: nr_value(fb, q))
    got = sorted(float(p[0]) for p in split.posteriors)
    ok_split = (len(got) == 2 and abs(got[0] - 0.25) <= 1e-9
                and abs(got[1] - 0.75) <= 1e-9)
    checks.append(Check("optimal split of family B at 1/2 is {1/4, 3/4}",
                        ok_split, f"posteriors at q = {got}"))
    return checks


def checks_attainable(grid_res=None):
    sc = builtin_scenarios()["attainable"]
    fa = sc.family_a
    env = concavify(sample_value(fa, resolution=grid_res))
    checks = []

    prop = check_nr_property(fa, sc.marginal_a, envelope=env)
    ok = (prop.found and prop.certificate is not None
          and abs(float(prop.certificate.p_star[0])) <= 1e-9
          and float(np.max(np.abs(prop.certificate.phi))) <= 1e-6)
    detail = prop.status
    if prop.certificate is not None:
        detail = (f"p_star = {_fmt_vec(prop.certificate.p_star)}, "
                  f"phi = {_fmt_vec(prop.certificate.phi)}")
    checks.append(Check("NR certificate at p = 0 with phi = (0, 0)", ok,
                        detail))

    payoff = find_nr_payoff(fa, sc.marginal_a, envelope=env)
    ok_phi = payoff.found and float(np.max(np.abs(payoff.phi))) <= 1e-6
    checks.append(Check("NR payoff search finds phi = (0, 0)", ok_phi,
                        payoff.render_text()))

    split = check_locally_nonrevealing(fa, sc.marginal_a, envelope=env)
    checks.append(Check("locally non-revealing split does not exist",
                        split is None,
                        "none found" if split is None else "found one"))
    return checks


def checks_nonattainable(grid_res=None):
    sc = builtin_scenarios()["nonattainable"]
    fa = sc.family_a
    env = concavify(sample_value(fa, resolution=grid_res))
    checks = []

    cg = clarke_gradient(fa, np.array([0.0, 1.0]))
    grads = np.unique(np.round(cg.gradients, 6), axis=0).ravel()
    ok_cg = grads.size == 1 and abs(float(grads[0]) + 2.0) <= 1e-3
    checks.append(Check("limit gradient set at the q = 0 vertex is {-2}",
                        ok_cg, f"gradients {grads.tolist()}"))

    prop = check_nr_property(fa, sc.marginal_a, envelope=env)
    resid = max((att.residuals.get("cond2", 0.0) for att in prop.attempts
                 if np.isfinite(att.residuals.get("cond2", np.nan))),
                default=0.0)
    ok_prop = prop.status == "not_found" and resid >= 2.0 - 1e-3
    checks.append(Check("NR property not found, gradient-hull residual >= 2",
                        ok_prop,
                        f"status {prop.status}, worst residual {_fmt(resid)}"))

    payoff = find_nr_payoff(fa, sc.marginal_a, envelope=env)
    cert_ok = payoff.status == "empty"
    if cert_ok:
        ver = verify_empty_certificate(fa, payoff, env)
        cert_ok = ver["implied_gap"] > 1e-9
    checks.append(Check("NR payoff set empty with a verified certificate",
                        cert_ok, payoff.render_text()))

    # Brute-force oracle for the two-player payoff set: the achievable
    # per-state vectors span co{(1,-1), (-1,1)}, on which the ex-ante
    # payoff is 0, while the equality constraint needs cav = 1.
    cells = fa.matrices.reshape(fa.n_states, -1).T
    best = float(np.max(cells @ sc.marginal_a))
    cav0 = eval_cav(env, sc.marginal_a)
    checks.append(Check("NR NotFound; NR_A empty", best < cav0 - 1e-9,
                        f"max feasible ex-ante payoff {_fmt(best)} < "
                        f"cav {_fmt(cav0)}"))
    return checks


def lambda_equation_infeasible(target, m1, m2):
    """Exact test whether target = lam*m1 + (1-lam)*m2 has a solution.

    Entry by entry the equation is linear in lam; Fractions keep the
    arithmetic exact.  Returns (infeasible, reason).
    """
    t = [[Fraction(x).limit_denominator() for x in row] for row in target]
    a = [[Fraction(x).limit_denominator() for x in row] for row in m1]
    b = [[Fraction(x).limit_denominator() for x in row] for row in m2]
    lam = None
    for i in range(len(t)):
        for j in range(len(t[0])):
            coeff = a[i][j] - b[i][j]
            rhs = t[i][j] - b[i][j]
            if coeff == 0:
                if rhs != 0:
                    return True, f"entry ({i},{j}) forces 0 = {rhs}"
                continue
            value = rhs / coeff
            if lam is None:
                lam = value
            elif value != lam:
                return True, (f"entry ({i},{j}) forces lambda = {value}, "
                              f"earlier entries force {lam}")
    if lam is None:
        return False, "every lambda solves the equation"
    if lam < 0 or lam > 1:
        return True, f"unique solution lambda = {lam} lies outside [0, 1]"
    return False, f"lambda = {lam} solves the equation"


def checks_section4(grid_res=None, horizon=10000, n_seeds=200, seed=0):
    sc = builtin_scenarios()["section4"]
    fa, fb = sc.family_a, sc.family_b
    env_a = concavify(sample_value(fa, resolution=grid_res))
    env_b = concavify(sample_value(fb, resolution=grid_res))
    checks = []

    qs = np.linspace(0.0, 1.0, 51)
    worst = 0.0
    for q in qs:
        belief = np.array([q, 1.0 - q])
        cap = eval_cav(env_a, belief)
        constrained = constrained_nr_value(fa, belief, cap)
        worst = max(worst, abs(constrained - nr_value(fa, belief)))
    checks.append(Check(
        "cav-capped best reply value equals the plain value on 51 points",
        worst <= 1e-3, f"max gap {_fmt(worst)}"))

    infeasible, reason = lambda_equation_infeasible(
        [[0.5, 0.0], [0.0, 0.5]],
        [[0.0, 0.0], [0.5, 0.5]],
        [[0.5, 0.5], [0.0, 0.0]])
    checks.append(Check("posterior-mixture equation has no solution in [0, 1]",
                        infeasible, reason))

    interval = compute_interval(sc, envelopes=(env_a, env_b),
                                resolution=grid_res)
    ok_int = (abs(interval.lower - 1.0) <= 1e-4
              and abs(interval.upper - 1.25) <= 1e-4)
    checks.append(Check("payoff interval equals [1, 5/4]", ok_int,
                        f"[{_fmt(interval.lower)}, {_fmt(interval.upper)}]"))

    profile = lower_end_profile(sc, envelopes=(env_a, env_b),
                                resolution=grid_res)
    ensemble = run_ensemble(sc, profile, horizon,
                            [seed + i for i in range(n_seeds)])
    mean, se = ensemble.ex_ante_mean()
    band = max(3.0 * se, 1e-9)
    checks.append(Check(
        f"lower-end ensemble mean within 3 sigma of 1 "
        f"(T = {horizon}, {n_seeds} seeds)",
        abs(mean - 1.0) <= band,
        f"mean {_fmt(mean)}, se {_fmt(se)}"))
    return checks


def checks_remark_eps(grid_res=None):
    sc = builtin_scenarios()["remark_eps"]
    fa, fb = sc.family_a, sc.family_b
    eps = float(np.max(np.abs(fb.matrices)))
    env_a = concavify(sample_value(fa, resolution=grid_res))
    env_b = concavify(sample_value(fb, resolution=grid_res))
    checks = []

    prop = check_nr_property(fa, sc.marginal_a, envelope=env_a)
    target = np.array([16.0 / 25.0, 1.0 / 25.0])
    ok = (prop.found and prop.certificate is not None
          and float(np.max(np.abs(prop.certificate.phi - target))) <= 1e-6)
    detail = prop.status
    if prop.certificate is not None:
        detail = f"phi = {_fmt_vec(prop.certificate.phi)}"
    checks.append(Check("family A certificate phi = (16/25, 1/25)", ok, detail))

    payoff_b = find_nr_payoff(fb, sc.marginal_b, envelope=env_b)
    checks.append(Check("family B NR payoff set is empty",
                        payoff_b.status == "empty", payoff_b.render_text()))

    member = joint_nr_membership(sc, target, np.array([-eps, eps]),
                                 envelopes=(env_a, env_b))
    checks.append(Check("joint membership holds for phi_B = (-eps, eps)",
                        member.passed, member.render_text().splitlines()[0]))

    non_member = joint_nr_membership(sc, target, np.array([eps, eps]),
                                     envelopes=(env_a, env_b))
    feas_ok, feas_resid, _ = non_member.conditions["feasibility_b"]
    checks.append(Check(
        "phi_B = (eps, eps) is rejected as infeasible", not feas_ok,
        f"distance to feasible set {_fmt(feas_resid)}"))
    return checks


REPRODUCE_IDS = ("example1", "attainable", "nonattainable", "section4",
                 "remark_eps")


def run_reproduce(example_id, grid_res=None, horizon=10000, n_seeds=200,
                  seed=0):
    if example_id == "example1":
        return checks_example1(grid_res=grid_res or 1e-3)
    if example_id == "attainable":
        return checks_attainable(grid_res=grid_res)
    if example_id == "nonattainable":
        return checks_nonattainable(grid_res=grid_res)
    if example_id == "section4":
        return checks_section4(grid_res=grid_res, horizon=horizon,
                               n_seeds=n_seeds, seed=seed)
    if example_id == "remark_eps":
        return checks_remark_eps(grid_res=grid_res)
    raise ScenarioFormatError(
        f"unknown example id '{example_id}' (known: {', '.join(REPRODUCE_IDS)})")


def cmd_reproduce(args):
    out = _out_dir(args)
    checks = run_reproduce(args.example_id, grid_res=args.grid_res,
                           horizon=args.horizon if args.horizon else 10000,
                           n_seeds=args.n_seeds if args.n_seeds else 200,
                           seed=args.seed if args.seed is not None else 0)
    lines = [f"reproduction checklist: {args.example_id}"]
    lines.extend(c.line() for c in checks)
    n_pass = sum(c.passed for c in checks)
    lines.append(f"{n_pass}/{len(checks)} checks passed")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, f"{args.example_id}_reproduce.txt"), "w") as fh:
        fh.write(text)
    if args.format == "json-lines":
        _write_jsonl(os.path.join(out, f"{args.example_id}_reproduce.jsonl"),
                     [{"kind": "check", "label": c.label, "passed": c.passed,
                       "detail": c.detail} for c in checks])
    sys.stdout.write(text)
    return EXIT_OK if n_pass == len(checks) else EXIT_NUMERICAL


def cmd_list_examples(args):
    builtins = builtin_scenarios()
    width = max(len(name) for name in builtins)
    for name in sorted(builtins):
        sys.stdout.write(f"{name:<{width}}  {builtins[name].description}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _add_common(sub):
    sub.add_argument("--grid-res", type=float, default=None,
                     help="belief grid resolution for value sampling")
    sub.add_argument("--tol", type=float, default=None,
                     help="numerical tolerance for feasibility programs")
    sub.add_argument("--seed", type=int, default=None,
                     help="base seed for simulations")
    sub.add_argument("--out-dir", default=None,
                     help=f"output directory (default ${ENV_OUT_DIR} or .)")
    sub.add_argument("--format", choices=("csv", "json-lines"), default="csv",
                     help="emit machine-readable records as CSV only or "
                          "CSV plus JSON lines")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spillover",
        description="Repeated zero-sum games with one informed player "
                    "facing two opponents: analysis, simulation, and "
                    "reproduction of the built-in examples.")
    subs = parser.add_subparsers(dest="command", required=True)

    sp = subs.add_parser("analyze", help="value functions, envelopes, NR "
                         "verdicts, and the payoff interval")
    sp.add_argument("scenario", help="scenario file path or built-in name")
    _add_common(sp)
    sp.set_defaults(handler=cmd_analyze)

    sp = subs.add_parser("simulate", help="ensemble simulation of an "
                         "equilibrium profile with diagnostics")
    sp.add_argument("scenario", help="scenario file path or built-in name")
    sp.add_argument("--profile", required=True,
                    help="nr_upper | lower_end | standard_pair[:component=a] "
                         "| jcl:w=0.5[,n=10]")
    sp.add_argument("--horizon", type=int, default=None,
                    help="stages per episode (default from scenario or 10000)")
    sp.add_argument("--n-seeds", type=int, default=None,
                    help="number of episodes (default from scenario or 30)")
    _add_common(sp)
    sp.set_defaults(handler=cmd_simulate)

    sp = subs.add_parser("reproduce", help="pass/fail checklist for a "
                         "built-in worked example")
    sp.add_argument("example_id", choices=REPRODUCE_IDS)
    sp.add_argument("--horizon", type=int, default=None)
    sp.add_argument("--n-seeds", type=int, default=None)
    _add_common(sp)
    sp.set_defaults(handler=cmd_reproduce)

    sp = subs.add_parser("list-examples", help="list built-in scenarios")
    _add_common(sp)
    sp.set_defaults(handler=cmd_list_examples)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ScenarioFormatError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except AllProbesKinked as exc:
        sys.stderr.write(f"inconclusive: {exc}\n")
        return EXIT_INCONCLUSIVE
    except MembershipFailed as exc:
        sys.stdout.write(str(exc) + "\n")
        return EXIT_INCONCLUSIVE
    except GameError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
