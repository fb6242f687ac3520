import numpy as np
import pytest

from endotree.kernels import number_form, two_point_kernel
from endotree.model import builtin, checked
from endotree.montecarlo import random_model
from endotree.oracle import exact_pgf, exact_qn_square_form, exact_spectral_measure
from endotree.spectral import analyze
from endotree.superop import (P1, P1perp, build_Q, calP, calQ, check_PQ, con2_check,
                              dirichlet_form, form, inner, laplace_limit, pgf_operator,
                              pgf_spectral_measure, q_infinity_norm, qn_square_form,
                              recover_masses, spectral_moments, write_pgf_csv)

from conftest import xor_fresh

XOR_F = np.array([-1.0, 1.0])


def setup(model):
    model = checked(model)
    kernel = two_point_kernel(model)
    spectral = analyze(kernel, model.mu)
    return model, kernel, spectral


def loop_calP(model, L):
    """M[y, y'] mu(y) = sum mu(x0) L[x0, x0'] mu(x1) nu(z) [phi(x0,x1,z)=y, phi(x0',x1,z)=y']."""
    s = model.s
    out = np.zeros((s, s))
    for a in range(s):
        for ap in range(s):
            for b in range(s):
                for z in range(model.e):
                    y, yp = model.phi[a, b, z], model.phi[ap, b, z]
                    out[y, yp] += model.mu[a] * L[a, ap] * model.mu[b] * model.nu[z]
    return out / model.mu[:, None]


def test_inner_and_form():
    mu = np.array([0.25, 0.75])
    assert inner(mu, [1, 2], [3, 4]) == pytest.approx(0.75 + 6)
    assert form(mu, np.array([1.0, 2.0]), np.eye(2)) == pytest.approx(0.25 + 3)
    np.testing.assert_allclose(P1(mu) @ [1.0, 2.0], [1.75, 1.75])
    np.testing.assert_allclose(P1perp(mu) @ [1.0, 1.0], [0.0, 0.0])


def test_calP_matches_loops(any_builtin, rng):
    L = rng.normal(size=(any_builtin.s, any_builtin.s))
    np.testing.assert_allclose(calP(any_builtin, L), loop_calP(any_builtin, L), atol=1e-13)


def test_identity_and_projection_are_fixed(any_builtin):
    s = any_builtin.s
    mu = any_builtin.mu
    np.testing.assert_allclose(calP(any_builtin, np.eye(s)), np.eye(s), atol=1e-14)
    np.testing.assert_allclose(calQ(any_builtin, np.eye(s)), np.eye(s), atol=1e-14)
    # calQ maps couplings of mu to couplings of mu: unit row sums survive
    np.testing.assert_allclose(calQ(any_builtin, P1(mu)).sum(axis=1), 1.0, atol=1e-14)


def test_calQ_is_quadratic(any_builtin, rng):
    s = any_builtin.s
    L = rng.normal(size=(s, s))
    np.testing.assert_allclose(calQ(any_builtin, 3 * L), 9 * calQ(any_builtin, L), atol=1e-12)


@pytest.mark.parametrize("model", [builtin("XOR"), builtin("ANDOR-NOISE"), builtin("SELECT"),
                                   xor_fresh(0.7), xor_fresh(0.5)])
def test_PQ_is_rho_Q(model):
    model, kernel, spectral = setup(model)
    Q = build_Q(model, spectral)
    np.testing.assert_allclose(Q.sum(axis=1), 0.0, atol=1e-14)
    assert check_PQ(model, spectral, Q, kernel) <= 1e-10


def test_xor_Q_by_hand():
    model, _, spectral = setup(builtin("XOR"))
    np.testing.assert_allclose(build_Q(model, spectral), [[-0.5, 0.5], [0.5, -0.5]])


def test_build_Q_needs_rho():
    model, _, spectral = setup(builtin("PURE-INNOVATION"))
    with pytest.raises(ValueError):
        build_Q(model, spectral)


def test_dirichlet_form_identity(rng):
    # E(f, g) = -(f, Q g) because kappa is symmetric
    for model in (builtin("XOR"), xor_fresh(0.8), builtin("ANDOR-NOISE")):
        model, _, spectral = setup(model)
        Q = build_Q(model, spectral)
        f, g = rng.normal(size=2), rng.normal(size=2)
        assert dirichlet_form(spectral.kappa_star, f, g) == pytest.approx(
            -form(model.mu, f, Q, g), abs=1e-13)


def test_pgf_level_zero(any_builtin, rng):
    f = rng.normal(size=any_builtin.s)
    mu = any_builtin.mu
    mean2 = (mu @ f) ** 2
    var = mu @ f**2 - mean2
    for z in (0.0, 0.3, 1.0):
        assert pgf_spectral_measure(any_builtin, f, 0, z) == pytest.approx(mean2 + z * var)


@pytest.mark.parametrize("n", [1, 2])
def test_pgf_matches_oracle(any_builtin, n, rng):
    f = rng.normal(size=any_builtin.s)
    for z in (0.0, 0.25, 0.5, 0.75, 1.0, 1.5):
        assert pgf_spectral_measure(any_builtin, f, n, z) == pytest.approx(
            exact_pgf(any_builtin, f, n, z), abs=1e-10)
    np.testing.assert_allclose(recover_masses(any_builtin, f, n),
                               exact_spectral_measure(any_builtin, f, n), atol=1e-12)


def test_pgf_complex_argument():
    model = builtin("ANDOR-NOISE")
    f = np.array([0.0, 1.0])
    z = 0.3 + 0.4j
    masses = recover_masses(model, f, 2)
    assert pgf_spectral_measure(model, f, 2, z) == pytest.approx(
        np.polynomial.polynomial.polyval(z, masses), abs=1e-12)
    assert np.iscomplexobj(pgf_operator(model, 1, z))


def test_xor_measure_is_a_point_mass():
    model = builtin("XOR")
    for n in range(5):
        masses = recover_masses(model, XOR_F, n)
        expected = np.zeros(2**n + 1)
        expected[-1] = 1.0
        np.testing.assert_allclose(masses, expected, atol=1e-12)
    with pytest.raises(ValueError):
        recover_masses(model, XOR_F, 7)


def test_spectral_moments_mean():
    model = builtin("ANDOR-NOISE")
    for n in range(4):
        total, mean = spectral_moments(model, XOR_F, n)
        assert total == pytest.approx(1.0, abs=1e-12)
        assert mean == pytest.approx(number_form(model, XOR_F, n), rel=1e-5)


def test_laplace_limit_xor():
    model, _, spectral = setup(builtin("XOR"))
    for t in (0.1, 1.0, 3.0):
        lim = laplace_limit(model, spectral, XOR_F, t)
        assert lim.estimate == pytest.approx(np.exp(-t), abs=1e-12)
        assert max(lim.increments) <= 1e-12


def test_laplace_limit_domain():
    model, _, spectral = setup(builtin("ANDOR-NOISE"))
    with pytest.raises(ValueError, match="2 rho > 1"):
        laplace_limit(model, spectral, XOR_F, 1.0)
    model, _, spectral = setup(builtin("XOR"))
    with pytest.raises(ValueError):
        laplace_limit(model, spectral, XOR_F, 0.0)


def generic_supercritical():
    """Random symmetric 3-state model with a primitive, full-rank-ish P(-) and 2 rho ~ 1.29."""
    model = random_model(3, 3, 10)
    return setup(model)


def test_laplace_limit_is_stable():
    # increments must keep shrinking long after v_n has converged
    model, _, spectral = generic_supercritical()
    assert spectral.primitive and 2 * spectral.rho > 1
    lim = laplace_limit(model, spectral, [1.0, -0.5, 0.3], 0.5, n_max=100)
    inc = np.array(lim.increments)
    assert inc[60] < 1e-8
    assert (inc[30:] <= 1.5 * inc[29:-1] + 1e-15).all()
    assert inc[-1] < 1e-11


def test_q_infinity_norm_xor():
    model, _, spectral = setup(builtin("XOR"))
    Q = build_Q(model, spectral)
    val = q_infinity_norm(model, spectral, Q, XOR_F)
    assert val.value == pytest.approx(1.0, abs=1e-12)
    assert val.tail_bound < 1e-12


@pytest.mark.parametrize("model", [builtin("XOR"), xor_fresh(0.8), builtin("ANDOR-NOISE")])
@pytest.mark.parametrize("n", [1, 2])
def test_qn_square_form_matches_oracle(model, n, rng):
    model, kernel, spectral = setup(model)
    Q = build_Q(model, spectral)
    f = rng.normal(size=model.s)
    assert qn_square_form(model, spectral, Q, f, n, kernel) == pytest.approx(
        exact_qn_square_form(model, Q, spectral.rho, f, n), abs=1e-12)


def test_qn_square_form_tends_to_series():
    model, kernel, spectral = setup(xor_fresh(0.8))
    Q = build_Q(model, spectral)
    f = np.array([0.3, -1.2])
    series = q_infinity_norm(model, spectral, Q, f, kernel=kernel)
    diffs = [abs(qn_square_form(model, spectral, Q, f, n, kernel) - series.value)
             for n in (2, 10, 40)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-5


def test_con2_xor():
    model, kernel, spectral = setup(builtin("XOR"))
    Q = build_Q(model, spectral)
    trace = con2_check(model, spectral, Q, XOR_F, n_max=30, kernel=kernel)
    assert trace.target == pytest.approx(1.0, abs=1e-15)
    assert dirichlet_form(spectral.kappa_star, XOR_F) == pytest.approx(1.0, abs=1e-15)
    assert max(trace.deviations) <= 1e-12


def test_con2_converges_generic(rng):
    model, kernel, spectral = generic_supercritical()
    Q = build_Q(model, spectral)
    f, g = rng.normal(size=3), rng.normal(size=3)
    trace = con2_check(model, spectral, Q, f, g, n_max=80, kernel=kernel)
    assert trace.deviations[-1] < 1e-10
    assert trace.deviations[-1] < 1e-3 * trace.deviations[3]


def test_con2_exact_for_rank_one():
    model, kernel, spectral = setup(xor_fresh(0.8))
    Q = build_Q(model, spectral)
    trace = con2_check(model, spectral, Q, XOR_F, n_max=10, kernel=kernel)
    assert max(trace.deviations) <= 1e-14


def test_write_pgf_csv(tmp_path):
    path = tmp_path / "g.csv"
    write_pgf_csv(path, [(0, 0.5, 0.25)], comment="seed=3")
    assert path.read_text().splitlines() == ["# seed=3", "n,z,value", "0,0.5,0.25"]
