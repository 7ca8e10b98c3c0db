import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contact_hj import ConfigError, builtin, check_assumptions, custom, legendre_transform
from contact_hj.system import FAMILIES, legendre_values


def test_builtin_examples():
    assert builtin("classical", {}).H(np.zeros(1), 0.0, np.ones(1)) == pytest.approx(0.5)
    assert builtin("discounted", {"lam": 0.5, "amp": 0}).H(np.zeros(1), 1.0, np.zeros(1)) == pytest.approx(0.5)
    assert builtin("mechanical", {"amp": 1}).H(np.zeros(1), 0.0, np.zeros(1)) == pytest.approx(1.0)


def test_builtin_rejects_unknown():
    with pytest.raises(ConfigError):
        builtin("quartic", {})
    with pytest.raises(ConfigError):
        builtin("classical", {"beta": 1})


def test_legendre_examples():
    disc = builtin("discounted", {"lam": 0.5})
    val, p = legendre_transform(disc, [0.0], 1.0, [2.0])
    assert val == pytest.approx(1.5, abs=1e-9) and p[0] == pytest.approx(2.0, abs=1e-8)
    val, p = legendre_transform(builtin("classical", {}), [0.3], 7.0, [1.0])
    assert val == pytest.approx(0.5, abs=1e-9) and p[0] == pytest.approx(1.0, abs=1e-8)
    val, p = legendre_transform(builtin("coshcase", {"lam": 0.0}), [0.0], 0.0, [0.0])
    assert val == pytest.approx(-1.0, abs=1e-9) and p[0] == pytest.approx(0.0, abs=1e-8)


@given(st.floats(-5, 5), st.floats(-2, 2), st.floats(0, 1))
def test_cosh_legendre_matches_closed_form(v, u, x):
    system = builtin("coshcase", {"lam": 0.5})
    val, p = legendre_transform(system, [x], u, [v])
    closed = v * np.arcsinh(v) - np.sqrt(1 + v * v) - 0.5 * u
    assert val == pytest.approx(closed, abs=1e-8)
    assert float(system.H_p(np.array([x]), u, p)[0]) == pytest.approx(v, abs=1e-8)


@pytest.mark.parametrize("family", ["classical", "discounted", "mechanical", "nonmonotone"])
@given(v=st.floats(-4, 4), u=st.floats(-2, 2), x=st.floats(0, 1))
def test_numeric_legendre_matches_closed_form(family, v, u, x):
    system = builtin(family, {"amp": 0.7} if family != "classical" else {})
    val, p = legendre_transform(system, [x], u, [v])
    assert val == pytest.approx(float(system.lagrangian(np.array([x]), u, np.array([v]))), abs=1e-8)
    # duality: <v, p*> - L recovers H at p*
    assert v * p[0] - val == pytest.approx(float(system.H(np.array([x]), u, p)), abs=1e-6)


def test_legendre_values_vectorized_2d():
    system = builtin("coshcase", {"lam": 0.5}, dim=2)
    rng = np.random.default_rng(1)
    x = rng.random((20, 2))
    u = rng.uniform(-1, 1, 20)
    v = rng.uniform(-3, 3, (20, 2))
    L, p = legendre_values(system, x, u, v)
    np.testing.assert_allclose(system.H_p(x, u, p), v, atol=1e-8)
    s = np.linalg.norm(v, axis=-1)
    np.testing.assert_allclose(L, s * np.arcsinh(s) - np.sqrt(1 + s * s) - 0.5 * u, atol=1e-8)


@pytest.mark.parametrize("family", FAMILIES)
@given(u1=st.floats(-3, 3), u2=st.floats(-3, 3), v=st.floats(-3, 3), x=st.floats(0, 1))
def test_L3_lipschitz_in_u(family, u1, u2, v, x):
    system = builtin(family, {})
    xs, vs = np.array([x]), np.array([v])
    diff = abs(float(system.lagrangian(xs, u1, vs)) - float(system.lagrangian(xs, u2, vs)))
    assert diff <= system.lam * abs(u1 - u2) + 1e-9


@pytest.mark.parametrize("family", FAMILIES)
def test_builtins_pass_assumptions(family):
    for dim in (1, 2):
        res = check_assumptions(builtin(family, {}, dim=dim))
        assert all(r.passed for r in res.values()), {k: (r.passed, r.worst) for k, r in res.items()}


def test_assumption_failures_have_witnesses():
    square = custom(lambda x, u, p: 0.5 * np.sum(p * p, -1) + u ** 2, lambda x, u, p: p, lam=0.5)
    res = check_assumptions(square, sample_box={"u": (-2, 2)})
    assert res["H1"].passed and not res["H3"].passed
    assert abs(res["H3"].witness["u"]) > 0.25
    absolute = custom(lambda x, u, p: np.abs(p[..., 0]), lambda x, u, p: np.sign(p), lam=0.0)
    res = check_assumptions(absolute)
    assert not res["H1"].passed and not res["H2"].passed and res["H3"].passed


def test_custom_fills_partials():
    system = custom(lambda x, u, p: 0.5 * p[..., 0] ** 2 + np.sin(2 * np.pi * x[..., 0]) + 0.3 * u,
                    lambda x, u, p: p, lam=0.3)
    x = np.array([[0.1]])
    assert system.H_x(x, 0.0, np.array([[1.0]]))[0, 0] == pytest.approx(2 * np.pi * np.cos(0.2 * np.pi), rel=1e-6)
    assert system.H_u(x, 0.0, np.array([[1.0]]))[0] == pytest.approx(0.3, rel=1e-6)


def test_shifted_moves_H_and_L():
    system = builtin("discounted", {}).shifted(0.25)
    x, p = np.zeros(1), np.array([1.0])
    assert system.hamiltonian(x, 0.0, p) == pytest.approx(0.25)
    assert system.lagrangian(x, 0.0, p) == pytest.approx(0.75)
    assert system.describe()["c_shift"] == 0.25
