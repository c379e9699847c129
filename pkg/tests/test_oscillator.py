import json

import numpy as np
import pytest

from pulseswitch.errors import ConfigError, NoEventsFired
from pulseswitch.models import get_model
from pulseswitch.ode_core import PulseInput, Trajectory
from pulseswitch.oscillator import (LOWER_FACE, UPPER_FACE, ControlEvent, EventControlConfig,
                                    EventLog, corner_states, default_order, in_box,
                                    persistence_metric, run_event_control)
from pulseswitch.order import leq
from pulseswitch.separatrix import REACHED_S0, AlgSettings, classify_switch


@pytest.fixture(scope="module")
def rep():
    return get_model("repressilator8")


@pytest.fixture(scope="module")
def corners(rep):
    return corner_states(rep, default_order(rep))


@pytest.fixture(scope="module")
def run48(rep, corners):
    return run_event_control(rep, EventControlConfig(48.0, 4.8), corners=corners)


def test_corners_are_ordered(rep, corners):
    lo, hi = corners
    o = default_order(rep)
    assert o.state_signs == (0, 1) * 4 and o.input_signs == (0, 1)
    assert leq(o, lo, hi) and not np.allclose(lo, hi)


def test_sustained_alternating_events(run48):
    traj, log = run48
    assert len(log) >= 5
    kinds = [e.kind for e in log.events]
    assert all(a != b for a, b in zip(kinds, kinds[1:]))
    assert np.all(np.diff(log.times) > 0)
    assert kinds[0] == LOWER_FACE and log.events[0].channel == 0
    assert json.loads(log.to_json())["events"][1]["kind"] == UPPER_FACE


def test_forward_invariance_after_reentry(rep, run48):
    # once a free-flight trajectory is back inside M it never leaves again
    traj, log = run48
    o = default_order(rep)
    free = run48.free_flight_mask(4.8)
    inside = in_box(o, log.s_low, log.s_high, traj.states, tol=1e-6)
    t = traj.times
    bounds = list(log.times) + [np.inf]
    for start, stop in zip(bounds, bounds[1:]):
        seg = (t >= start + 4.8) & (t < stop) & free
        idx = np.flatnonzero(seg)
        if idx.size and inside[idx].any():
            first = idx[np.argmax(inside[idx])]
            assert inside[idx[idx >= first]].all()


def test_smaller_box_toggles_later(rep, corners):
    counts = [len(run_event_control(rep, EventControlConfig(48.0, 4.8, eps=e),
                                    corners=corners).log) for e in (1.0, 0.5, 0.25)]
    assert counts[0] >= counts[1] >= counts[2] >= 5


def test_sub_threshold_pulse_fires_once(rep, corners):
    lo, hi = corners
    # oracle: the same pulse from the lower corner does not switch
    s = AlgSettings.for_model(rep)
    assert classify_switch(rep, lo, hi, PulseInput(5.0, 4.8), s).tag == REACHED_S0
    with pytest.raises(NoEventsFired) as info:
        run_event_control(rep, EventControlConfig(5.0, 4.8, t_end=200.0), corners=corners)
    assert len(info.value.log) <= 1


def test_persistence_trend(rep, corners):
    gaps = []
    for mu in (40.0, 60.0, 100.0):
        r = run_event_control(rep, EventControlConfig(mu, 4.8), corners=corners)
        gaps.append(persistence_metric(r.trajectory, r.log, 4.8)["mean_inter_event"])
    assert gaps[0] > gaps[1] > gaps[2]


def test_metric_single_event():
    log = EventLog([ControlEvent(0.0, LOWER_FACE, 0)])
    traj = Trajectory(np.array([0.0, 1.0]), np.array([[0.0], [2.0]]))
    out = persistence_metric(traj, log)
    assert out["n_events"] == 1 and out["mean_inter_event"] is None
    assert out["amplitude"] == [2.0]
    with pytest.raises(ValueError):
        persistence_metric(traj, EventLog())


def test_event_log_enforces_alternation():
    log = EventLog()
    log.append(ControlEvent(0.0, LOWER_FACE, 0))
    with pytest.raises(ValueError):
        log.append(ControlEvent(1.0, LOWER_FACE, 0))
    with pytest.raises(ValueError):
        log.append(ControlEvent(0.0, UPPER_FACE, 1))


def test_config_problems_collected():
    with pytest.raises(ConfigError) as info:
        EventControlConfig(-1.0, 0.0, eps=0.0)
    assert len(info.value.problems) == 3


def test_empty_box_rejected(rep, corners):
    with pytest.raises(ConfigError):
        run_event_control(rep, EventControlConfig(48.0, 4.8, eps=100.0), corners=corners)


def test_csv_export(run48):
    lines = run48.to_csv().splitlines()
    assert lines[0] == "time," + ",".join(f"x{i}" for i in range(1, 9)) + ",u1,u2"
    assert len(lines) == len(run48.trajectory) + 1
