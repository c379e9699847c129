import math

import numpy as np
import pytest

from pulseswitch.errors import ConfigError, DomainError, UnknownParameter
from pulseswitch.models import (BUILTINS, Box, eval_field, get_model, numeric_jacobian,
                                param_jacobian, state_jacobian)


def mass_action_s1(k1, k3, k4):
    L = k1 - 4 * k3 * k4
    return np.array([(k1 + math.sqrt(k1 * L)) / (2 * k3),
                     ((math.sqrt(k1) + math.sqrt(L)) / (2 * k3)) ** 2])


def test_toggle_at_origin(toggle):
    assert np.allclose(toggle([0.0, 0.0]), [40.05, 30.10], atol=1e-12)


def test_lorenz_origin_is_rest_point():
    assert np.array_equal(get_model("lorenz")([0.0, 0.0, 0.0]), np.zeros(3))


def test_mass_action_closed_form_equilibrium():
    m = get_model("mass_action")
    x = mass_action_s1(8.0, 1.0, 1.0)
    assert np.allclose(x, [6.828427, 5.828427], atol=1e-6)
    assert np.max(np.abs(m(x))) < 1e-9


def test_lorenz_jacobian_at_origin():
    m = get_model("lorenz")
    J = state_jacobian(m, np.zeros(3))
    want = [[-10, 10, 0], [21, -1, 0], [0, 0, -8.0 / 3.0]]
    assert np.allclose(J, want, atol=1e-6)


def test_decay_jacobian(decay):
    assert np.allclose(numeric_jacobian(decay, [2.0]), [[-1.0, 1.0]], atol=1e-8)


def test_toggle_jacobian_zero_off_diagonal_at_origin(toggle):
    # Hill terms with n = 4 are flat at zero
    J = state_jacobian(toggle, [0.0, 0.0])
    assert abs(J[0, 1]) < 1e-9 and abs(J[1, 0]) < 1e-9


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_jacobian_against_forward_differences(name):
    m = get_model(name)
    rng = np.random.default_rng(3)
    lo, hi = m.sample_box.lo, m.sample_box.hi
    h = 1e-7
    for _ in range(20):
        x = lo + (0.1 + 0.8 * rng.random(m.dim)) * (hi - lo)
        u = rng.random(m.n_inputs)
        J = numeric_jacobian(m, x, u)
        f0 = eval_field(m, x, u)
        z = np.concatenate([x, u])
        for j in range(z.size):
            step = h * max(1.0, abs(z[j]))
            zp = z.copy()
            zp[j] += step
            fd = (eval_field(m, zp[: m.dim], zp[m.dim:]) - f0) / step
            scale = 1.0 + np.abs(fd) + np.abs(J[:, j])
            # the fast toxin-antitoxin rows carry 1/eps = 1e6 factors
            assert np.all(np.abs(fd - J[:, j]) <= 1e-4 * scale * max(1.0, np.abs(f0).max()))


def test_param_jacobian_mass_action():
    m = get_model("mass_action")
    x = np.array([2.0, 3.0])
    J = param_jacobian(m, x, names=["k1", "k4"])
    assert np.allclose(J, [[2 * 3.0, -2.0], [-3.0, 0.0]], atol=1e-7)


def test_defaults_as_printed():
    assert dict(get_model("toggle").params) == {
        "p1": 40.0, "p2": 1.0, "p3": 4.0, "p4": 0.05, "p5": 1.0,
        "p6": 30.0, "p7": 1.0, "p8": 4.0, "p9": 0.1, "p10": 1.0}
    assert dict(get_model("toxin_antitoxin").params) == {
        "sigma_T": 166.28, "K0": 1.0, "beta_M": 0.16, "beta_C": 0.16, "sigma_A": 100.0,
        "Gamma_A": 0.2, "K_T": 0.3, "K_TT": 0.3, "eps": 1e-6}
    assert dict(get_model("repressilator8").params) == {
        "p1": 40.0, "p2": 1.0, "p3": 3.0, "p4": 0.5, "p5": 1.0}
    assert dict(get_model("lorenz").params) == {"sigma": 10.0, "rho": 21.0, "beta": 8.0 / 3.0}
    assert get_model("toxin_antitoxin").stiff


def test_mass_action_domain_tracks_parameters():
    m = get_model("mass_action", k1=6.0, k3=2.0)
    assert m.domain.upper[0] == pytest.approx(6.0)
    assert m.domain.upper[1] == math.inf


def test_unknown_parameter_is_hard_error(toggle):
    with pytest.raises(UnknownParameter):
        get_model("toggle", p11=1.0)
    with pytest.raises(UnknownParameter):
        toggle.with_params(bogus=2.0)
    with pytest.raises(ConfigError):
        get_model("no_such_model")


def test_box_validation():
    with pytest.raises(ValueError):
        Box((1.0,), (0.0,))
    b = Box((0.0, 0.0), (1.0, math.inf))
    assert b.contains([0.5, 1e9]) and not b.bounded


def test_shape_checks(toggle):
    with pytest.raises(ValueError):
        toggle([1.0, 2.0, 3.0])


TOGGLE_TERMS = {
    "dim": 2, "n_inputs": 1,
    "params": {"a1": 40.0, "a2": 30.0},
    "terms": [
        {"kind": "hill_rep", "eq": 0, "var": 1, "coef": "a1", "k": 1.0, "n": 4},
        {"kind": "const", "eq": 0, "coef": 0.05},
        {"kind": "linear", "eq": 0, "var": 0, "coef": -1.0},
        {"kind": "input", "eq": 0, "var": 0},
        {"kind": "hill_rep", "eq": 1, "var": 0, "coef": "a2", "k": 1.0, "n": 4},
        {"kind": "const", "eq": 1, "coef": 0.1},
        {"kind": "linear", "eq": 1, "var": 1, "coef": -1.0},
    ],
}


def test_term_table_reproduces_toggle(toggle):
    custom = get_model(TOGGLE_TERMS)
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.random(2) * 40
        u = rng.random(1) * 5
        assert np.allclose(custom(x, u), toggle(x, u), rtol=1e-13, atol=1e-12)
    tweaked = custom.with_params(a1=20.0)
    assert tweaked([0.0, 0.0])[0] == pytest.approx(20.05)
    assert custom.input_columns[:, 0].tolist() == [1.0, 0.0]


def test_term_table_problems_collected():
    with pytest.raises(ConfigError) as info:
        get_model({"dim": 2, "terms": [{"kind": "cubic", "eq": 0},
                                       {"kind": "linear", "eq": 5, "var": 0, "coef": "nope"}]})
    assert len(info.value.problems) == 3


def test_fractional_hill_exponent_guarded():
    m = get_model({"dim": 1, "terms": [{"kind": "hill_rep", "eq": 0, "var": 0, "n": 2.5}],
                   "domain": {"lower": [-5.0], "upper": [5.0]}})
    assert m([1.0])[0] == pytest.approx(0.5)
    with pytest.raises(DomainError):
        m([-1.0])
