"""End-to-end acceptance checks for the numerical claims the package reproduces.

Each check prints a single ``[PASS]`` / ``[FAIL]`` line (also repeated in the
pytest terminal summary) and then asserts.
"""

import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import dominance_prune, grid_error_boxes, random_frontiers
from pulseswitch.bounding import (build_interval_bounds, build_param_bounds, check_field_ordering,
                                  check_ss_conditions, comparison_check, containment_test,
                                  split_parameter)
from pulseswitch.cli import main
from pulseswitch.frontier import Bounds, error_boxes_from, prune, sample_beta, sample_efficiency
from pulseswitch.models import get_model
from pulseswitch.ode_core import IntegratorSettings, PulseInput, relax_to_equilibrium
from pulseswitch.order import OrthantOrder, infer_orthant, leq
from pulseswitch.oscillator import (EventControlConfig, corner_states, default_order, in_box,
                                    persistence_metric, run_event_control)
from pulseswitch.separatrix import (REACHED_S0, REACHED_S1, AlgSettings, bisection_separatrix,
                                    classify_switch, grid_boundary, grid_separatrix,
                                    monotone_violations, random_sampling_separatrix, switch_pair)
from pulseswitch.steady import newton

pytestmark = pytest.mark.slow


def report(number, title, ok, detail, elapsed):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail} ({elapsed:.1f} s)"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def non_increasing(values, tol=0.0):
    return all(b <= a + tol for a, b in zip(values, values[1:]))


@pytest.fixture(scope="module")
def toggle_setup():
    m = get_model("toggle")
    return m, switch_pair(m)


def test_criterion_01_bifurcation(tmp_path):
    t0 = time.perf_counter()
    code = main(["bifurcation", "--model", "toggle", "--range", "0", "3", "--tol", "1e-3",
                 "--out", str(tmp_path / "bif")])
    lo, hi = json.loads((tmp_path / "bif" / "bifurcation.json").read_text())["mu_min_bracket"]
    dt = time.perf_counter() - t0
    ok = code == 0 and 1.40 <= lo <= hi <= 1.42 and hi - lo <= 1e-3 and dt < 60
    assert report(1, "toggle fold bracket", ok, f"[{lo:.5f}, {hi:.5f}]", dt)


def test_criterion_02_lorenz_witness():
    t0 = time.perf_counter()
    m = get_model("lorenz")
    s0, s1 = switch_pair(m)
    s = AlgSettings.for_model(m, integrator=IntegratorSettings.for_model(m, rtol=1e-11))
    tags = [classify_switch(m, s0, s1, PulseInput(mu, 1.0), s).tag for mu in (24.0, 25.0, 26.0)]
    dt = time.perf_counter() - t0
    ok = tags == [REACHED_S0, REACHED_S1, REACHED_S0] and dt < 60
    assert report(2, "Lorenz (24|25|26, 1)", ok, " / ".join(tags), dt)


def test_criterion_03_frontier_monotonicity(toggle_setup):
    t0 = time.perf_counter()
    m, (s0, s1) = toggle_setup
    a1 = bisection_separatrix(m, s0, s1, AlgSettings.for_model(m, epsilon=1e-3, n_par=1))
    wide = bisection_separatrix(m, s0, s1, AlgSettings.for_model(
        m, epsilon=1e-3, grid="log:0.1:100:20", mu_up=400.0, n_par=1))
    a2 = random_sampling_separatrix(m, s0, s1, AlgSettings.for_model(m, epsilon=1e-3,
                                                                     max_samples=1000))
    bad = {k: len(monotone_violations(e, 1e-3)) + len(e.crossings()) + len(e.violations)
           for k, e in (("alg1", a1), ("alg1 wide", wide), ("alg2", a2))}
    dt = time.perf_counter() - t0
    ok = sum(bad.values()) == 0 and bool(a1.m_max) and bool(a2.m_max) and dt < 300
    detail = ", ".join(f"{k}: {v} violations" for k, v in bad.items())
    assert report(3, "non-increasing frontiers", ok, detail, dt)


def test_criterion_04_convergence(toggle_setup):
    t0 = time.perf_counter()
    m, (s0, s1) = toggle_setup
    finals, monotone = [], True
    for seed in range(5):
        est = random_sampling_separatrix(m, s0, s1, AlgSettings.for_model(m, seed=seed,
                                                                          max_samples=2000))
        errs = [e for _, e in est.history]
        monotone &= non_increasing(errs, 1e-12)
        finals.append(errs[-1])
    dt = time.perf_counter() - t0
    mean = float(np.mean(finals))
    ok = monotone and mean <= 0.05 and dt < 600
    detail = f"mean E_rel {mean:.4f} over seeds 0-4 ({', '.join(f'{e:.4f}' for e in finals)})"
    assert report(4, "random sampling reaches E_rel <= 0.05", ok, detail, dt)


def test_criterion_05_sample_efficiency(toggle_setup):
    t0 = time.perf_counter()
    m, (s0, s1) = toggle_setup
    eff = {}
    for n_gr, n_eps in ((0, 10), (10, 0)):
        vals = []
        for seed in range(5):
            est = random_sampling_separatrix(m, s0, s1, AlgSettings.for_model(
                m, seed=seed, n_gr=n_gr, n_eps=n_eps, max_samples=2000))
            vals.append(sample_efficiency(est))
        eff[(n_gr, n_eps)] = float(np.mean(vals))
    alg1 = sample_efficiency(bisection_separatrix(m, s0, s1,
                                                  AlgSettings.for_model(m, n_par=1)))
    dt = time.perf_counter() - t0
    a, b = eff[(0, 10)], eff[(10, 0)]
    ok = a > b > alg1 and a >= 2 * alg1 and dt < 600
    detail = f"N_eff (0,10) {a:.3f} > (10,0) {b:.3f} > bisection {alg1:.3f}; ratio {a / alg1:.2f}"
    assert report(5, "sample efficiency ordering", ok, detail, dt)


def _bracket_triple(models, s0s, settings):
    return [bisection_separatrix(mm, a, b, settings) for mm, (a, b) in zip(models, s0s)]


def test_criterion_06_containment():
    t0 = time.perf_counter()
    details, ok = [], True
    for label, nominal in (("F1", get_model("perturbed3")),
                           ("F2", get_model("perturbed3", p2=0.0, p3=0.1))):
        pair = build_interval_bounds(nominal, [(2, 0)])
        cond = check_ss_conditions(pair, nominal)
        triple = (pair.lower, nominal, pair.upper)
        s = AlgSettings.for_model(nominal, grid="log:5:40:10", epsilon=1e-2, n_par=10)
        ests = _bracket_triple(triple, [switch_pair(mm, 0, pair.order) for mm in triple], s)
        rep = containment_test(*ests, s.tau_grid())
        ordered = check_field_ordering(pair, nominal, n_samples=500).ok
        ok &= rep.ok and cond.condss_ok and cond.condss2_ok and ordered
        details.append(f"{label} {len(rep.violations)} violations")

    base = get_model("mass_action")
    fam = split_parameter(base, "k1", ["k11", "k12"])
    box = {"k11": (7.7, 8.3), "k3": (1.0, 1.2), "k4": (1.0, 1.2), "k12": (7.7, 8.3)}
    pair = build_param_bounds(fam, box, u_range=(0.0, 10.0))
    printed = pair.provenance["a"] == [7.7, 1.2, 1.2, 8.3] and \
        pair.provenance["b"] == [8.3, 1.0, 1.0, 7.7]
    s = AlgSettings.for_model(base, grid="log:0.1:10:10", epsilon=1e-2, n_par=10)
    g_est, r_est = (bisection_separatrix(mm, *switch_pair(mm, 0, pair.order), s)
                    for mm in (pair.lower, pair.upper))
    for k1 in (7.5, 8.5):
        mid = fam.with_params(k11=k1, k12=k1)
        f_est = bisection_separatrix(mid, *switch_pair(mid, 0, pair.order), s)
        rep = containment_test(g_est, f_est, r_est, s.tau_grid())
        ok &= rep.ok
        details.append(f"k1={k1} {len(rep.violations)} violations")
    ok &= printed
    dt = time.perf_counter() - t0
    ok &= dt < 900
    assert report(6, "separatrix containment", ok, "; ".join(details), dt)


@pytest.mark.xfail(strict=True, reason="pulse end overshoots the upper corner in x1; "
                   "states re-enter M shortly after and stay (see README)")
def test_criterion_07_oscillation():
    t0 = time.perf_counter()
    m = get_model("repressilator8")
    o = default_order(m)
    lo, hi = corner_states(m, o)
    run = run_event_control(m, EventControlConfig(48.0, 4.8, eps=0.5, t_end=400.0),
                            corners=(lo, hi))
    traj, log = run
    kinds = [e.kind for e in log.events]
    alternating = all(a != b for a, b in zip(kinds, kinds[1:]))
    free = run.free_flight_mask(4.8)
    inside = in_box(o, lo, hi, traj.states[free], tol=1e-6)
    share = float(inside.mean())
    gaps = []
    for mu in (40.0, 60.0, 100.0):
        r = run_event_control(m, EventControlConfig(mu, 4.8), corners=(lo, hi))
        gaps.append(persistence_metric(r.trajectory, r.log, 4.8)["mean_inter_event"])
    trend = gaps[0] > gaps[1] > gaps[2]
    dt = time.perf_counter() - t0
    ok = len(log) >= 5 and alternating and bool(inside.all()) and trend and dt < 300
    detail = (f"{len(log)} events, alternating={alternating}; inter-pulse samples inside M "
              f"{100 * share:.1f}% (max x1 {traj.states[free, 0].max():.1f} vs corner "
              f"{hi[0]:.1f}); mean inter-event {gaps[0]:.1f} > {gaps[1]:.1f} > {gaps[2]:.1f}")
    assert report(7, "event-triggered oscillation", ok, detail, dt)


def test_criterion_08_property_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    box_ok = 0
    for _ in range(20):
        b = Bounds(0.0, rng.uniform(5, 100), rng.uniform(0, 1), rng.uniform(5, 100))
        m_min, m_max = random_frontiers(rng, b, n_points=int(rng.integers(4, 20)))
        eb = error_boxes_from(m_min, m_max, b)
        mu_o, tau_o, dm, dtau = grid_error_boxes(m_min, m_max, b, 2000)
        box_ok += abs(eb.mu_err - mu_o) <= dm * (1 + 1e-9) and \
            abs(eb.tau_err - tau_o) <= dtau * (1 + 1e-9)
    prune_ok = 0
    for k in range(100):
        pts = [tuple(p) for p in rng.integers(0, 15, size=(int(rng.integers(0, 40)), 2))]
        keep = ("maximal", "minimal")[k % 2]
        prune_ok += prune(pts, keep) == dominance_prune(pts, keep)
    beta_mean = float(sample_beta(1, 3, (0, 1), rng, 100_000).mean())
    closed_ok = 0
    for _ in range(20):
        k3, k4 = rng.uniform(0.3, 2.0, 2)
        k1 = 4 * k3 * k4 * rng.uniform(1.05, 4.0)
        L = k1 - 4 * k3 * k4
        model = get_model("mass_action", k1=k1, k3=k3, k4=k4)
        s1 = np.array([(k1 + np.sqrt(k1 * L)) / (2 * k3), ((np.sqrt(k1) + np.sqrt(L)) / (2 * k3)) ** 2])
        su = np.array([(k1 - np.sqrt(k1 * L)) / (2 * k3), ((np.sqrt(k1) - np.sqrt(L)) / (2 * k3)) ** 2])
        got = [newton(model, x * (1 + 1e-3), np.zeros(1)) for x in (s1, su)]
        closed_ok += all(g is not None and np.max(np.abs(g - x)) <= 1e-8
                         for g, x in zip(got, (s1, su)))
    dt = time.perf_counter() - t0
    ok = box_ok == 20 and prune_ok == 100 and abs(beta_mean - 0.25) <= 0.005 and closed_ok == 20 \
        and dt < 120
    detail = (f"error boxes {box_ok}/20, prune {prune_ok}/100, Beta(1,3) mean {beta_mean:.4f}, "
              f"mass action closed forms {closed_ok}/20")
    assert report(8, "brute-force oracles", ok, detail, dt)


def test_criterion_09_order_and_comparison(toggle_setup):
    t0 = time.perf_counter()
    # order-interval points between two points of the s0 basin stay in that basin
    m, (s0, s1) = toggle_setup
    o = OrthantOrder((0, 1), (0,))
    rng = np.random.default_rng(9)
    s = IntegratorSettings.for_model(m)
    lo, hi = m.sample_box.lo, m.sample_box.hi
    basin = []
    while len(basin) < 60:
        x = lo + rng.random(2) * (hi - lo)
        if relax_to_equilibrium(m, x, [s0, s1], s=s, record=False)[0] == 0:
            basin.append(x)
    pairs = [(a, b) for a in basin for b in basin if leq(o, a, b) and not np.array_equal(a, b)]
    picks = rng.choice(len(pairs), 100, replace=len(pairs) < 100)
    zs = [pairs[k][0] + rng.random(2) * (pairs[k][1] - pairs[k][0]) for k in picks]
    basin_bad = sum(relax_to_equilibrium(m, z, [s0, s1], s=s, record=False)[0] != 0 for z in zs)

    # flows of the bounding triple stay ordered under ordered data
    f1 = get_model("perturbed3")
    pair = build_interval_bounds(f1, [(2, 0)])
    P = pair.order.Px
    box_lo, box_hi = np.zeros(3), np.array([40.0, 260.0, 4400.0])
    x_pairs, pulses = [], []
    for _ in range(50):
        x1 = box_lo + rng.random(3) * (box_hi - box_lo)
        x2 = np.maximum(x1 + P * rng.random(3) * 0.1 * (box_hi - box_lo), 0.0)
        mu1, tau1 = rng.uniform(0, 400), rng.uniform(0, 40)
        x_pairs.append((x1, x2))
        pulses.append((PulseInput(mu1, tau1),
                       PulseInput(mu1 + rng.uniform(0, 50), tau1 + rng.uniform(0, 5))))
    times = np.linspace(0, 100, 101)
    cmp_bad = 0
    for lower, upper in ((pair.lower, f1), (f1, pair.upper), (pair.lower, pair.upper)):
        cmp_bad += len(comparison_check(lower, upper, pair.order, x_pairs, pulses, times))
    dt = time.perf_counter() - t0
    ok = basin_bad == 0 and cmp_bad == 0 and dt < 300
    detail = f"basin interval {100 - basin_bad}/100 to s0; comparison violations {cmp_bad}/150"
    assert report(9, "order-interval and comparison checks", ok, detail, dt)


def test_criterion_10_toxin_antitoxin():
    t0 = time.perf_counter()
    m = get_model("toxin_antitoxin")
    order = infer_orthant(m, u_range=(0.0, 30.0))
    s0, s1 = switch_pair(m)
    s = AlgSettings.for_model(m)
    taus = np.linspace(5.0, 40.0, 20)
    edges = {}
    for label, mus in (("mu 10-30", np.linspace(10.0, 30.0, 40)),
                       ("mu 1-30", np.linspace(1.0, 30.0, 40))):
        tags = grid_separatrix(m, s0, s1, mus, taus, s)
        edge = grid_boundary(tags, mus, taus)
        # with monotone classes a column switches from a threshold upwards
        consistent = all(
            all(tags[i, j] == REACHED_S1 for i in range(len(mus)) if mus[i] >= edge[j])
            for j in range(len(taus)) if np.isfinite(edge[j]))
        edges[label] = (np.where(np.isfinite(edge), edge, np.inf), consistent)
    dt = time.perf_counter() - t0
    mono = {k: non_increasing(list(e)) and c for k, (e, c) in edges.items()}
    ok = order is None and all(mono.values()) and dt < 1200
    e_wide = edges["mu 1-30"][0]
    detail = (f"infer_orthant -> {order}; boundary non-increasing on "
              f"{', '.join(k for k, v in mono.items() if v)}; "
              f"mu*(5) ~ {e_wide[0]:.2f}, mu*(40) ~ {e_wide[-1]:.2f}")
    assert report(10, "toxin-antitoxin diagnostic", ok, detail, dt)
