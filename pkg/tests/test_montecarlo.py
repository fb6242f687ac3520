import importlib.util
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats

from endotree import _backend
from endotree.kernels import bivariate_iterate, product_coupling, two_point_kernel
from endotree.model import builtin, checked, validate
from endotree.montecarlo import (RngStream, TreeConfig, autocovariance, coupling_estimate,
                                 gillespie_qn, qn_autocovariance, qn_rates,
                                 qn_semigroup_exact, random_model, refresh_autocovariance,
                                 refresh_dynamics, refresh_rates, sample_config, sample_roots,
                                 search_critical_symmetric)
from endotree.oracle import exact_coupling_disagreement
from endotree.spectral import analyze
from endotree.superop import build_Q, pgf_spectral_measure

from conftest import xor_fresh

HAS_CORE = importlib.util.find_spec("endotree._core") is not None
needs_core = pytest.mark.skipif(not HAS_CORE, reason="compiled core not built")
BACKENDS = ["python"] + (["cython"] if HAS_CORE else [])
F = np.array([-1.0, 1.0])


def xor_setup():
    model = builtin("XOR")
    spectral = analyze(two_point_kernel(model), model.mu)
    return model, spectral, build_Q(model, spectral)


def test_rng_streams():
    a = RngStream(5, 0).generator().random(4)
    assert np.array_equal(a, RngStream(5, 0).generator().random(4))
    assert not np.array_equal(a, RngStream(5, 1).generator().random(4))
    assert not np.array_equal(a, RngStream(6, 0).generator().random(4))
    assert RngStream(5, 0).spawn(1) != RngStream(5, 1).spawn(0)


@needs_core
def test_backend_parity():
    model = checked(builtin("ANDOR-NOISE"))
    py, cy = _backend.get("python"), _backend.get("cython")
    mc, nc = np.cumsum(model.mu), np.cumsum(model.nu)

    def gen():
        return RngStream(11, 3).generator()

    assert py.sample_roots(model.phi, 3, mc, nc, 200, gen()) == \
        cy.sample_roots(model.phi, 3, mc, nc, 200, gen())
    assert py.coupling_trials(model.phi, 3, mc, nc, 500, gen()) == \
        cy.coupling_trials(model.phi, 3, mc, nc, 500, gen())
    rates, cdf = refresh_rates(model)
    lags = np.array([0.1, 0.5, 2.0])
    out_py = py.autocov_trials(model.phi, 3, rates, cdf, mc, nc, F, lags, 100, gen())
    out_cy = cy.autocov_trials(model.phi, 3, rates, cdf, mc, nc, F, lags, 100, gen())
    assert out_py == out_cy
    cfg = sample_config(model, 3, 1)
    s_py, s_cy = list(cfg.states), list(cfg.states)
    t_py = py.trajectory(model.phi, 3, rates, cdf, s_py, cfg.innovations, 2.0, 10**4, gen())
    t_cy = cy.trajectory(model.phi, 3, rates, cdf, s_cy, cfg.innovations, 2.0, 10**4, gen())
    assert t_py == t_cy and s_py == s_cy


@pytest.mark.parametrize("backend", BACKENDS)
def test_root_law_chi_square(backend):
    model = checked(builtin("PURE-INNOVATION"))
    roots = sample_roots(model, 3, 20_000, RngStream(1), backend=backend)
    counts = np.bincount(roots, minlength=model.s)
    assert stats.chisquare(counts, 20_000 * model.mu).pvalue > 1e-3


def test_root_law_andor_noise():
    model = builtin("ANDOR-NOISE")
    roots = sample_roots(model, 4, 20_000, RngStream(2))
    assert abs(np.mean(roots) - 0.5) <= 3 * np.sqrt(0.25 / 20_000)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_coupling_estimate_matches_exact(n):
    model = builtin("ANDOR-NOISE")
    est = coupling_estimate(model, n, 20_000, seed=4)
    if n <= 2:
        exact = exact_coupling_disagreement(model, n)
    else:
        exact = bivariate_iterate(model, product_coupling(model.mu), n).masses[-1]
    assert abs(est.value - exact) <= 3 * est.se
    assert est.trials == 20_000 and est.seed == 4


def test_coupling_estimate_minimum_trials():
    with pytest.raises(ValueError):
        coupling_estimate(builtin("XOR"), 2, 10)


def test_determinism_across_threads():
    model = builtin("ANDOR-NOISE")
    a = coupling_estimate(model, 3, 5_000, seed=9, threads=1)
    b = coupling_estimate(model, 3, 5_000, seed=9, threads=4)
    assert a == b
    rates, cdf = refresh_rates(model)
    x = autocovariance(model, 3, rates, cdf, F, [0.5], 2_000, seed=9, threads=1)
    y = autocovariance(model, 3, rates, cdf, F, [0.5], 2_000, seed=9, threads=3)
    assert x.values == y.values and x.events == y.events


def test_tree_config_recompute_counter():
    model = builtin("ANDOR-NOISE")
    cfg = sample_config(model, 4, RngStream(3))
    assert cfg.consistent(model.phi)
    assert len(cfg.leaves) == 16
    touched = cfg.set_leaf(5, 1 - cfg.leaves[5], model.phi)
    assert touched == 4 and cfg.recomputations == 4
    assert cfg.consistent(model.phi)


@pytest.mark.parametrize("backend", BACKENDS)
def test_trajectory_bookkeeping(backend):
    model = builtin("ANDOR-NOISE")
    traj = refresh_dynamics(model, 4, 5.0, RngStream(8), backend=backend)
    assert traj.events > 0
    assert traj.recomputations == traj.events * 4
    assert traj.final.consistent(model.phi)
    assert np.all(np.diff(traj.times) > 0) and traj.times[-1] < 5.0
    assert traj.roots[-1] == traj.final.root
    capped = refresh_dynamics(model, 4, 5.0, RngStream(8), max_events=3, backend=backend)
    assert capped.events == 3


def test_refresh_autocovariance_select():
    # the root of SELECT copies one leaf; that leaf survives to time t w.p. e^-t
    model = builtin("SELECT")
    est = refresh_autocovariance(model, F, 4, [0.2, 1.0], 4_000, seed=1)
    assert est.recomputations == 4 * est.events
    for t, v, se in zip(est.lags, est.values, est.se):
        assert abs(v - np.exp(-t)) <= 3 * se
    assert est.batch_means.shape == (32, 2)


def test_refresh_exact_is_pgf():
    # resampling each leaf at rate 1 shrinks the degree-k part by e^{-kt}
    model = builtin("ANDOR-NOISE")
    est = refresh_autocovariance(model, F, 3, [0.3], 8_000, seed=2)
    exact = pgf_spectral_measure(model, F, 3, np.exp(-0.3))
    assert abs(est.values[0] - exact) <= 3 * est.se[0]


def test_qn_semigroup_xor():
    model, spectral, Q = xor_setup()
    for n in (0, 2, 4):
        for t in (0.0, 0.5, 1.0):
            assert qn_semigroup_exact(model, spectral, Q, F, n, t) == pytest.approx(
                np.exp(-t), abs=1e-12)


def test_gillespie_xor():
    model, spectral, Q = xor_setup()
    rates, cdf = qn_rates(spectral, Q, 4)
    np.testing.assert_allclose(rates, 0.5 / 16)
    traj = gillespie_qn(model, spectral, Q, 4, 50.0, RngStream(5))
    assert traj.recomputations == 4 * traj.events
    est = qn_autocovariance(model, spectral, Q, F, 4, [0.5], 6_000, seed=3)
    assert abs(est.values[0] - np.exp(-0.5)) <= 3 * est.se[0]


def test_qn_rates_refuse_negative():
    _, spectral, Q = xor_setup()
    with pytest.raises(ValueError):
        qn_rates(spectral, -Q, 2)


def test_random_model_is_valid():
    gen = RngStream(21).generator()
    for _ in range(30):
        model = random_model(int(gen.integers(2, 5)), int(gen.integers(1, 5)), gen)
        report = validate(model)
        assert report.ok and model.is_symmetric()
        assert report.invariance_residual <= 1e-12
        assert (model.mu > 0).all()


def test_search_filters_candidates():
    # the injected model is critical and irreducible but nondegen1 resolves at m = 1
    found = search_critical_symmetric(0, budget=5, inject=[checked(xor_fresh(0.5))])
    assert all(v.regime == "Critical" for _, v in found)
    assert not any(m == checked(xor_fresh(0.5)) for m, _ in found)


def test_tree_config_defaults():
    cfg = TreeConfig(1, [0, 0, 0], [0])
    assert cfg.root == 0 and cfg.leaves == [0, 0]


@pytest.mark.parametrize("value, expected", [("python", "python"),
                                             ("", "cython" if HAS_CORE else "python")])
def test_backend_selected_at_import(value, expected):
    env = dict(os.environ, ENDOTREE_BACKEND=value)
    out = subprocess.run([sys.executable, "-c", "import endotree; print(endotree.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
