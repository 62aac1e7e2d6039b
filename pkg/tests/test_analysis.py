"""Joint scenarios, NR certificates, payoff programs, and intervals.

The oracles are closed forms of the bundled scenarios plus the
decomposition identity v_{A+B}(q) = v_A(q_A) + v_B(q_B) for sum games
with independent action coordinates.
"""

import numpy as np
import pytest

from spillover.analysis import (JointScenario, check_locally_nonrevealing,
                                check_nr_property, compute_interval,
                                constrained_nr_value, find_nr_payoff,
                                joint_nr_membership, nr_envelope,
                                verify_empty_certificate)
from spillover.envelope import concavify, eval_cav, sample_value
from spillover.games import GameError, GameFamily, nr_value

from conftest import random_family


def test_marginals_and_support(ex1):
    np.testing.assert_allclose(ex1.marginal_a, [0.5, 0.5])
    np.testing.assert_allclose(ex1.marginal_b, [0.5, 0.5])
    assert ex1.support_pairs == ((0, 0), (1, 1))
    np.testing.assert_allclose(ex1.prior_on_support, [0.5, 0.5])
    assert not ex1.support_is_rectangle()


def test_rectangle_support(examples):
    sc = examples["attainable"]
    assert sc.support_is_rectangle()
    assert sc.support_pairs == ((0, 0), (1, 0))


def test_prior_validation(ex1):
    fa, fb = ex1.family_a, ex1.family_b
    with pytest.raises(GameError):
        JointScenario(name="bad", family_a=fa, family_b=fb,
                      prior=np.ones((3, 2)) / 6.0)
    with pytest.raises(GameError):
        JointScenario(name="bad", family_a=fa, family_b=fb,
                      prior=np.array([[0.9, 0.0], [0.0, 0.2]]))
    with pytest.raises(GameError):
        JointScenario(name="bad", family_a=fa, family_b=fb,
                      prior=np.array([[0.7, -0.2], [0.0, 0.5]]))


def test_h_values_closed_form(ex1):
    def v_b(q):
        return min(4.0 * q, 4.0 - 4.0 * q, abs(4.0 * q - 2.0))

    for t in np.linspace(0.0, 1.0, 21):
        expected = t * (1.0 - t) + v_b(t)
        got = float(ex1.h_values([[t, 1.0 - t]])[0])
        assert got == pytest.approx(expected, abs=1e-9)


def test_sum_family_shapes_and_decomposition(ex1):
    sf = ex1.sum_family()
    assert sf.n_states == 2
    assert len(sf.rows) == len(ex1.family_a.rows) * len(ex1.family_b.rows)
    assert len(sf.cols) == len(ex1.family_a.cols) * len(ex1.family_b.cols)
    rng = np.random.default_rng(7)
    for _ in range(6):
        pt = rng.dirichlet(np.ones(2))
        assert nr_value(sf, pt) == pytest.approx(
            float(ex1.h_values([pt])[0]), abs=1e-9)


def test_sum_family_on_random_scenarios():
    rng = np.random.default_rng(808)
    for _ in range(5):
        fa = random_family(rng)
        fb = random_family(rng, shape=(2, 3))
        p = rng.dirichlet(np.ones(4)).reshape(2, 2)
        sc = JointScenario(name="rand", family_a=fa, family_b=fb, prior=p)
        pts = rng.dirichlet(np.ones(len(sc.support_pairs)), size=4)
        hv = sc.h_values(pts)
        sf = sc.sum_family()
        for pt, h in zip(pts, hv):
            assert nr_value(sf, pt) == pytest.approx(float(h), abs=1e-8)


def test_interval_example1(ex1, ex1_envelopes):
    interval = compute_interval(ex1, envelopes=ex1_envelopes)
    assert interval.lower == pytest.approx(19.0 / 16.0, abs=1e-4)
    assert interval.upper == pytest.approx(1.25, abs=1e-4)
    interval.validate()
    assert interval.contains(1.2)
    assert not interval.contains(1.3)


@pytest.mark.parametrize("name,lower,upper", [
    ("section4", 1.0, 1.25),
    ("attainable", 0.0, 0.0),
    ("nonattainable", 1.0, 1.0),
    ("remark_eps", 0.19, 0.21),
])
def test_interval_other_builtins(examples, name, lower, upper):
    interval = compute_interval(examples[name])
    assert interval.lower == pytest.approx(lower, abs=1e-4)
    assert interval.upper == pytest.approx(upper, abs=1e-4)


def test_product_prior_interval_degenerates():
    rng = np.random.default_rng(909)
    for _ in range(8):
        fa = random_family(rng)
        fb = random_family(rng)
        pa = rng.dirichlet(np.ones(2))
        pb = rng.dirichlet(np.ones(2))
        sc = JointScenario(name="prod", family_a=fa, family_b=fb,
                           prior=np.outer(pa, pb))
        interval = compute_interval(sc)
        assert interval.width == pytest.approx(0.0, abs=1e-4)


def test_nr_certificate_for_concave_value(ex1):
    result = check_nr_property(ex1.family_a, ex1.marginal_a)
    assert result.status == "certificate"
    cert = result.certificate
    np.testing.assert_allclose(cert.p_star, [0.5, 0.5], atol=1e-9)
    np.testing.assert_allclose(cert.phi, [0.25, 0.25], atol=1e-5)
    assert result.found


def test_nr_certificate_attainable(examples):
    sc = examples["attainable"]
    result = check_nr_property(sc.family_a, sc.marginal_a)
    assert result.found
    assert abs(float(result.certificate.p_star[0])) <= 1e-9
    assert float(np.max(np.abs(result.certificate.phi))) <= 1e-6


def test_nr_not_found_nonattainable(examples):
    sc = examples["nonattainable"]
    result = check_nr_property(sc.family_a, sc.marginal_a)
    assert result.status == "not_found"
    assert not result.found
    finite = [att.residuals["cond2"] for att in result.attempts
              if np.isfinite(att.residuals.get("cond2", np.nan))]
    assert finite and max(finite) >= 2.0 - 1e-3
    text = result.render_text()
    assert "not" in text.lower()


def test_nr_certificate_remark(examples):
    sc = examples["remark_eps"]
    result = check_nr_property(sc.family_a, sc.marginal_a)
    assert result.found
    np.testing.assert_allclose(result.certificate.phi, [16.0 / 25.0, 0.04],
                               atol=1e-6)


def test_locally_nonrevealing_split(ex1, ex1_envelopes):
    _, env_b = ex1_envelopes
    split = check_locally_nonrevealing(ex1.family_b, ex1.marginal_b,
                                       envelope=env_b)
    assert split is not None
    order = np.argsort(split.posteriors[:, 0])
    np.testing.assert_allclose(split.posteriors[order],
                               [[0.25, 0.75], [0.75, 0.25]], atol=1e-9)

    # concave value at an interior prior: the trivial one-atom split
    env_a = ex1_envelopes[0]
    trivial = check_locally_nonrevealing(ex1.family_a, ex1.marginal_a,
                                         envelope=env_a)
    assert trivial is not None and trivial.n_atoms == 1


def test_locally_nonrevealing_absent(examples):
    sc = examples["attainable"]
    assert check_locally_nonrevealing(sc.family_a, sc.marginal_a) is None


def test_find_nr_payoff_example1(ex1, ex1_envelopes):
    env_a, env_b = ex1_envelopes
    res_a = find_nr_payoff(ex1.family_a, ex1.marginal_a, envelope=env_a)
    assert res_a.found
    assert float(res_a.phi @ ex1.marginal_a) == pytest.approx(0.25, abs=1e-6)
    res_b = find_nr_payoff(ex1.family_b, ex1.marginal_b, envelope=env_b)
    assert res_b.found
    np.testing.assert_allclose(res_b.phi, [1.0, 1.0], atol=1e-5)
    # domination of the sampled value everywhere, at the scaled tolerance
    slack = 1e-6 * ex1.family_b.payoff_scale
    for q in np.linspace(0.0, 1.0, 101):
        belief = np.array([q, 1.0 - q])
        assert float(res_b.phi @ belief) >= nr_value(ex1.family_b,
                                                     belief) - slack


def test_find_nr_payoff_empty_with_certificate(examples):
    sc = examples["nonattainable"]
    fa = sc.family_a
    env = concavify(sample_value(fa))
    res = find_nr_payoff(fa, sc.marginal_a, envelope=env)
    assert res.status == "empty"
    assert res.violation > 0.0
    assert res.certificate is not None
    ver = verify_empty_certificate(fa, res, env)
    assert ver["implied_gap"] > 1e-6
    assert ver["cell_max"] < ver["rhs_combination"]
    rec = res.to_record()
    assert rec["status"] == "empty"
    assert "certificate" in rec


def test_verify_certificate_rejects_found_results(ex1, ex1_envelopes):
    env_a, _ = ex1_envelopes
    res = find_nr_payoff(ex1.family_a, ex1.marginal_a, envelope=env_a)
    with pytest.raises(GameError):
        verify_empty_certificate(ex1.family_a, res, env_a)


def test_joint_membership_remark(examples):
    sc = examples["remark_eps"]
    phi_a = np.array([16.0 / 25.0, 1.0 / 25.0])
    report = joint_nr_membership(sc, phi_a, np.array([-0.05, 0.05]))
    assert report.passed
    for name, (ok, resid, _) in report.conditions.items():
        assert ok, name
    assert set(report.conditions) == {"feasibility_a", "feasibility_b",
                                      "player1_ir", "uninformed_ir_a",
                                      "uninformed_ir_b"}

    bad = joint_nr_membership(sc, phi_a, np.array([0.05, 0.05]))
    assert not bad.passed
    ok, resid, _ = bad.conditions["feasibility_b"]
    assert not ok
    assert resid == pytest.approx(0.05, abs=1e-6)
    rec = bad.to_record()
    assert rec["passed"] is False
    assert "not a member" in bad.render_text()


def test_joint_membership_rejects_bad_shapes(ex1):
    with pytest.raises(GameError):
        joint_nr_membership(ex1, np.zeros(3), np.zeros(2))


def test_constrained_value_matches_plain_value(examples):
    sc = examples["section4"]
    fa = sc.family_a
    env = concavify(sample_value(fa))
    for q in np.linspace(0.0, 1.0, 11):
        belief = np.array([q, 1.0 - q])
        cap = eval_cav(env, belief)
        got = constrained_nr_value(fa, belief, cap)
        assert got == pytest.approx(nr_value(fa, belief), abs=1e-3)


def test_constrained_value_with_impossible_cap(ex1):
    belief = np.array([0.5, 0.5])
    floor = nr_value(ex1.family_a, belief)
    capped = constrained_nr_value(ex1.family_a, belief, floor - 1.0,
                                  resolution=1e-2)
    assert capped == float("-inf")


def test_nr_envelope_refines_touch_points(ex1):
    env = nr_envelope(ex1.family_b)
    assert env.eval([0.25, 0.75]) == pytest.approx(1.0, abs=1e-9)
    assert env.eval([0.75, 0.25]) == pytest.approx(1.0, abs=1e-9)


def test_find_nr_payoff_on_random_families():
    rng = np.random.default_rng(301)
    for _ in range(12):
        fam = random_family(rng)
        prior = rng.dirichlet(np.ones(2))
        env = concavify(sample_value(fam, resolution=1e-2))
        res = find_nr_payoff(fam, prior, envelope=env)
        if res.found:
            cav0 = eval_cav(env, prior)
            assert float(res.phi @ prior) == pytest.approx(cav0, abs=1e-5)
            gaps = env.grid.points @ res.phi - env.grid.values
            assert float(np.min(gaps)) >= -1e-5 * fam.payoff_scale
        else:
            ver = verify_empty_certificate(fam, res, env)
            assert ver["implied_gap"] > -1e-7
