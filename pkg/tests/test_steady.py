import math

import numpy as np
import pytest

from pulseswitch.errors import NoBifurcationInRange
from pulseswitch.models import eval_field, get_model
from pulseswitch.ode_core import IntegratorSettings, relax_to_equilibrium
from pulseswitch.order import OrthantOrder, lt
from pulseswitch.steady import bifurcation_scan, classify, find_steady_states, newton, settle


def test_toggle_two_nodes_and_saddle(toggle):
    eqs = find_steady_states(toggle)
    assert len(eqs.stable) == 2 and len(eqs.unstable) == 1
    for p in eqs:
        assert np.max(np.abs(toggle(p.state))) < 1e-9 * (1 + np.max(np.abs(p.state)))


def test_mass_action_three_equilibria():
    m = get_model("mass_action")
    eqs = find_steady_states(m)
    states = sorted((p.state.tolist(), p.stable) for p in eqs)
    assert len(states) == 3
    L = 4.0
    su = [(8 - math.sqrt(8 * L)) / 2, ((math.sqrt(8) - math.sqrt(L)) / 2) ** 2]
    assert np.allclose(states[0][0], [0, 0], atol=1e-9) and states[0][1]
    assert np.allclose(states[1][0], su, atol=1e-8) and not states[1][1]
    assert np.allclose(states[2][0], [6.828427, 5.828427], atol=1e-6) and states[2][1]


def test_lorenz_two_stable_foci():
    m = get_model("lorenz")
    eqs = find_steady_states(m)
    assert len(eqs.stable) == 2
    for p in eqs.stable:
        J = np.array([[-10, 10, 0], [21 - p.state[2], -1, -p.state[0]],
                      [p.state[1], p.state[0], -8 / 3]])
        ev = np.linalg.eigvals(J)
        assert np.any(np.abs(ev.imag) > 1e-6)  # focus
    origin = [p for p in eqs if np.allclose(p.state, 0, atol=1e-9)]
    assert origin and not origin[0].stable


def test_newton_and_classify(toggle):
    x = newton(toggle, [40.0, 0.1], np.zeros(1))
    assert x is not None and classify(toggle, x, np.zeros(1)).stable


def test_bifurcation_brackets_known_value(toggle):
    scan = bifurcation_scan(toggle, OrthantOrder((0, 1), (0,)), (0.0, 3.0), tol=1e-3)
    lo, hi = scan.mu_min_bracket
    assert hi - lo <= 1e-3
    assert 1.4067 <= lo <= 1.4087 and 1.4067 <= hi <= 1.4087
    header = scan.to_csv().splitlines()[0]
    assert header == "mu,xi_1,xi_2,eta_1,eta_2"


def test_no_bifurcation_below_threshold(toggle):
    with pytest.raises(NoBifurcationInRange):
        bifurcation_scan(toggle, None, (0.0, 1.0), tol=1e-3, n_grid=21)


def test_branches_below_threshold(toggle, toggle_pair):
    # below mu_min, xi(mu) is strictly below eta(mu) and falls back to s0
    s0, s1 = toggle_pair
    o = OrthantOrder((0, 1), (0,))
    s = IntegratorSettings.for_model(toggle, t_end=2000.0)
    for mu in np.linspace(0.1, 1.35, 10):
        xi = settle(toggle, s0, [mu], s)
        eta = settle(toggle, s1, [mu], s)
        assert lt(o, xi, eta)
        assert relax_to_equilibrium(toggle, xi, [s0, s1], s=s, record=False)[0] == 0


def test_mass_action_closed_forms_random_draws():
    rng = np.random.default_rng(8)
    for _ in range(5):
        k3, k4 = rng.uniform(0.5, 1.5, 2)
        k1 = 4 * k3 * k4 * rng.uniform(1.2, 3.0)
        m = get_model("mass_action", k1=k1, k3=k3, k4=k4)
        L = k1 - 4 * k3 * k4
        want = np.array([(k1 + math.sqrt(k1 * L)) / (2 * k3),
                         ((math.sqrt(k1) + math.sqrt(L)) / (2 * k3)) ** 2])
        got = newton(m, want * 1.01, np.zeros(1))
        assert np.allclose(got, want, rtol=0, atol=1e-8)
        assert np.max(np.abs(eval_field(m, got))) < 1e-9 * (1 + np.max(got))
