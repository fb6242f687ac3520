import itertools
import json

import numpy as np
import pytest

from endotree.endogeny import (CRITICAL, ENDOGENOUS, ENDOGENOUS_CRITICAL, INDETERMINATE,
                               NON_ENDOGENOUS, SUBCRITICAL, SUPERCRITICAL,
                               bivariate_uniqueness_probe, classify,
                               conditional_root_distribution, gram_matrix, innovation_root_laws,
                               nondegen1, nondegen1_mc, random_coupling, smallest_ratio)
from endotree.model import builtin, checked
from endotree.oracle import ResourceError, conditional_root_law

from conftest import left_or_fresh, xor_fresh


@pytest.mark.parametrize("name, regime, decision, rho", [
    ("XOR", SUPERCRITICAL, NON_ENDOGENOUS, 1.0),
    ("ANDOR-NOISE", SUBCRITICAL, ENDOGENOUS, 0.25),
    ("CONST", SUBCRITICAL, ENDOGENOUS, 0.0),
    ("PURE-INNOVATION", SUBCRITICAL, ENDOGENOUS, 0.0),
    ("SELECT", CRITICAL, INDETERMINATE, 0.5),
    ("ANDOR", CRITICAL, INDETERMINATE, 0.5),
])
def test_builtin_verdicts(name, regime, decision, rho):
    verdict = classify(checked(builtin(name)))
    assert (verdict.regime, verdict.decision) == (regime, decision)
    assert verdict.rho == pytest.approx(rho, abs=1e-12)
    assert verdict.two_rho == pytest.approx(2 * rho, abs=1e-12)
    assert verdict.decided == (decision != INDETERMINATE)


def test_select_is_reducible_critical():
    verdict = classify(builtin("SELECT"))
    ev = verdict.critical_evidence
    assert ev.nondegen2 is False
    assert ev.boundedness_max == 1.0
    assert any("reducible" in n for n in verdict.notes)


def test_critical_endogenous():
    verdict = classify(checked(xor_fresh(0.5)))
    assert verdict.regime == CRITICAL
    assert verdict.decision == ENDOGENOUS_CRITICAL
    ev = verdict.critical_evidence
    assert ev.nondegen2 and ev.nondegen1.resolved and ev.nondegen1.m == 1
    # with probability 1/2 the root innovation reveals the root
    assert ev.nondegen1.epsilon_min == pytest.approx(0.5)


def test_nonsymmetric_is_indeterminate():
    verdict = classify(checked(left_or_fresh(0.25)))
    assert verdict.regime == SUBCRITICAL
    assert verdict.decision == INDETERMINATE
    assert any("not symmetric" in n for n in verdict.notes)


def test_near_critical_note():
    verdict = classify(checked(xor_fresh(0.5 + 1e-8)))
    assert verdict.regime == SUPERCRITICAL
    assert any("close to the critical line" in n for n in verdict.notes)


def test_verdict_json():
    out = json.loads(classify(builtin("SELECT")).to_json())
    assert out["decision"] == INDETERMINATE
    assert out["critical_evidence"]["nondegen1"]["resolved"] is False


def test_conditional_root_distribution_matches_oracle():
    model = builtin("ANDOR-NOISE")
    h, w = conditional_root_law(model, 2)
    for eps in itertools.product(range(model.e), repeat=3):
        np.testing.assert_allclose(conditional_root_distribution(model, eps), h[eps],
                                   atol=1e-15)
    with pytest.raises(ValueError):
        conditional_root_distribution(model, [0, 1])


@pytest.mark.parametrize("m", [1, 2])
def test_gram_matches_enumeration(any_builtin, m):
    h, w = conditional_root_law(any_builtin, m)
    h = h.reshape(-1, any_builtin.s)
    w = w.ravel()
    expected = (h * w[:, None]).T @ h
    np.testing.assert_allclose(gram_matrix(any_builtin, m), expected, atol=1e-14)
    H, W = innovation_root_laws(any_builtin, m)
    assert W.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(W @ H, any_builtin.mu, atol=1e-14)


def test_andor_noise_epsilon_by_hand():
    # m = 1: h = (1/4, 3/4), (3/4, 1/4), (1, 0), (0, 1) each with weight 1/4;
    # for f = (-1, 1): E[(h.f)^2] = (1/4)(1/4 + 1/4 + 1 + 1) = 5/8
    res = nondegen1(builtin("ANDOR-NOISE"), m_max=3)
    assert res.resolved and res.m == 1
    assert res.epsilon_min == pytest.approx(5 / 8, abs=1e-14)


def test_smallest_ratio_is_a_lower_bound(rng):
    model = checked(xor_fresh(0.3))
    G = gram_matrix(model, 2)
    eps = smallest_ratio(model, G)
    for _ in range(50):
        f = rng.normal(size=2)
        f -= model.mu @ f
        assert f @ G @ f >= eps * (model.mu @ f**2) - 1e-14


def test_xor_is_degenerate():
    # the root of XOR is independent of the innovations
    res = nondegen1(builtin("XOR"), m_max=3)
    assert not res.resolved
    assert res.sequence == pytest.approx([0.0, 0.0, 0.0], abs=1e-14)


def test_gram_resource_cap():
    with pytest.raises(ResourceError):
        gram_matrix(builtin("SELECT"), 5)


def test_nondegen1_mc_agrees():
    model = builtin("ANDOR-NOISE")
    exact = gram_matrix(model, 3)
    mc = nondegen1_mc(model, 3, np.random.default_rng(7), samples=40_000)
    assert (np.abs(mc.gram - exact) <= 4 * mc.gram_se + 1e-12).all()
    assert abs(mc.epsilon_min - smallest_ratio(model, exact)) <= 5 * mc.epsilon_se + 1e-3


def test_random_coupling_marginals(rng):
    mu = np.array([0.2, 0.3, 0.5])
    lam = random_coupling(mu, rng)
    assert (lam > 0).all()
    np.testing.assert_allclose(lam.sum(axis=1), mu, atol=1e-14)
    np.testing.assert_allclose(lam.sum(axis=0), mu, atol=1e-14)


def test_probe_agrees_with_verdicts():
    probe = bivariate_uniqueness_probe(builtin("ANDOR-NOISE"), n=100)
    assert probe.evidence_for_uniqueness
    assert len(probe.terminal_masses) == 11
    probe = bivariate_uniqueness_probe(builtin("XOR"), n=100)
    assert not probe.evidence_for_uniqueness
    probe = bivariate_uniqueness_probe(builtin("SELECT"), n=50, n_random=3)
    assert probe.terminal_masses[0] == pytest.approx(0.5, abs=1e-12)
    assert not probe.evidence_for_uniqueness
