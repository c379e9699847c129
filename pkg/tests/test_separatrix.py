from dataclasses import replace

import numpy as np
import pytest

from pulseswitch.errors import ConfigError, MonotoneViolation, UpperBoundTooSmall
from pulseswitch.frontier import Bounds, SeparatrixEstimate
from pulseswitch.ode_core import PulseInput
from pulseswitch.separatrix import (REACHED_S0, REACHED_S1, UNDECIDED, AlgSettings,
                                    _check_conflict, bisection_separatrix, classify_switch,
                                    grid_boundary, grid_separatrix, monotone_violations,
                                    parse_grid, random_sampling_separatrix)


def test_parse_grid():
    g = parse_grid("log:0.1:100:4")
    assert np.allclose(g, [0.1, 1, 10, 100])
    assert np.allclose(parse_grid("lin:1:3:3"), [1, 2, 3])
    assert parse_grid("log:2:2:1").tolist() == [2.0]
    for bad in ("log:0:1:3", "cubic:1:2:3", "lin:1:2", [3.0, 1.0]):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_settings_collect_problems():
    with pytest.raises(ConfigError) as info:
        AlgSettings(epsilon=-1, mu_up=0, n_gr=0, n_eps=0)
    assert len(info.value.problems) == 3
    with pytest.raises(ConfigError):
        AlgSettings(n_par=7).batch_size()
    assert AlgSettings(n_gr=0, n_eps=10).batch_size() == 20


@pytest.mark.parametrize("tau", [1.0, 10.0, 100.0])
def test_toggle_below_threshold_never_switches(toggle, toggle_pair, tau):
    s0, s1 = toggle_pair
    o = classify_switch(toggle, s0, s1, PulseInput(1.0, tau))
    assert o.tag == REACHED_S0 and not o.switched


def test_toggle_large_pulse_switches(toggle, toggle_pair):
    s0, s1 = toggle_pair
    o = classify_switch(toggle, s0, s1, PulseInput(50.0, 10.0))
    assert o.tag == REACHED_S1 and o.t_decide > 10.0


def test_timeout_is_undecided(toggle, toggle_pair):
    s0, s1 = toggle_pair
    s = AlgSettings.for_model(toggle, t_e=1e-3)
    o = classify_switch(toggle, s0, s1, PulseInput(50.0, 10.0), s)
    assert o.tag == UNDECIDED and o.t_decide is None


def test_lorenz_witness():
    from pulseswitch.models import get_model
    from pulseswitch.separatrix import switch_pair

    m = get_model("lorenz")
    s0, s1 = switch_pair(m)
    s = AlgSettings.for_model(m)
    tags = [classify_switch(m, s0, s1, PulseInput(mu, 1.0), s).tag for mu in (24, 25, 26)]
    assert tags == [REACHED_S0, REACHED_S1, REACHED_S0]


@pytest.fixture(scope="module")
def toggle_bisect(toggle, toggle_pair):
    s = AlgSettings.for_model(toggle, grid="log:0.5:50:6", epsilon=1e-2, n_par=3)
    return s, bisection_separatrix(toggle, *toggle_pair, s)


def test_bisection_brackets(toggle, toggle_pair, toggle_bisect):
    s, est = toggle_bisect
    assert len(est.m_min) >= 1 and len(est.m_max) >= 1
    assert not est.crossings() and not monotone_violations(est, s.epsilon)
    # each bracket endpoint is confirmed by a direct simulation
    for tau in s.tau_grid()[[0, -1]]:
        lo = max(a for a, t in est.m_min if t >= tau)
        hi = min(b for b, t in est.m_max if t <= tau)
        assert 0 < hi - lo <= s.epsilon
        assert classify_switch(toggle, *toggle_pair, PulseInput(hi, tau), s).switched
        assert not classify_switch(toggle, *toggle_pair, PulseInput(lo, tau), s).switched


def test_single_point_grid(toggle, toggle_pair):
    s = AlgSettings.for_model(toggle, grid=[5.0], epsilon=1e-2)
    est = bisection_separatrix(toggle, *toggle_pair, s)
    (a, _), (b, _) = est.m_min[0], est.m_max[0]
    assert 0 < b - a <= 1e-2


def test_upper_bound_too_small(toggle, toggle_pair):
    with pytest.raises(UpperBoundTooSmall):
        bisection_separatrix(toggle, *toggle_pair, AlgSettings.for_model(toggle, mu_up=1.0))


def test_random_sampling_deterministic_and_monotone(toggle, toggle_pair):
    s = AlgSettings.for_model(toggle, max_samples=150, epsilon=1e-2, seed=3)
    a = random_sampling_separatrix(toggle, *toggle_pair, s)
    b = random_sampling_separatrix(toggle, *toggle_pair, replace(s, jobs=2))
    assert a.m_min == b.m_min and a.m_max == b.m_max and a.history == b.history
    errs = [e for _, e in a.history]
    assert all(y <= x + 1e-12 for x, y in zip(errs, errs[1:]))
    assert not monotone_violations(a, 1e-3) and not a.violations


def test_conflicting_sample_is_reported():
    est = SeparatrixEstimate([(5.0, 5.0)], [(8.0, 8.0)], Bounds(0, 10, 0, 10))
    _check_conflict(est, 9.0, 9.0, REACHED_S0, strict=False)
    assert est.violations == [((9.0, 9.0), (8.0, 8.0))]
    with pytest.raises(MonotoneViolation):
        _check_conflict(est, 4.0, 4.0, REACHED_S1, strict=True)


def test_grid_boundary(toggle, toggle_pair):
    mus = np.linspace(1.0, 20.0, 6)
    taus = np.array([2.0, 20.0])
    tags = grid_separatrix(toggle, *toggle_pair, mus, taus)
    edge = grid_boundary(tags, mus, taus)
    assert edge[1] <= edge[0]
