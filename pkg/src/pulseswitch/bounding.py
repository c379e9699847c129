"""Monotone bounding systems and the checks that make them useful.

Two constructions are offered.  Interval bounds freeze the offending state
variables of a near-monotone field at the ends of their reachable range;
parameter bounds evaluate a family ``f(x, u, p)`` at the two extreme corners
of a parameter box.  In both cases the result is a pair ``g <= f <= r`` of
fields ordered by the same orthant, oriented so that the pulse input is
nondecreasing in that order.  ``g`` is then the system that is hardest to
switch and ``r`` the easiest.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.stats import qmc

from .errors import ConfigError, NoParameterOrder, NotNearMonotone
from .frontier import SeparatrixEstimate, lower_envelope, upper_envelope
from .models import Box, ModelDef, eval_field, numeric_jacobian, param_jacobian
from .ode_core import (IntegratorSettings, PulseInput, integrate, map_jobs,
                       relax_to_equilibrium)
from .order import (OrthantOrder, check_kamke_muller, in_interval, leq, orthant_from_signs,
                    sample_points, sign_pattern)
from .steady import find_steady_states

log = logging.getLogger(__name__)

REACH_INFLATION = 0.05


@dataclass(frozen=True, eq=False)
class BoundingPair:
    """Lower field ``g`` and upper field ``r`` under a common orthant order.

    ``domain`` is the box on which the bounds are claimed to hold (the
    reachable-set box for interval bounds).
    """

    lower: ModelDef
    upper: ModelDef
    order: OrthantOrder
    provenance: dict = field(default_factory=dict)
    domain: Box | None = None

    def swapped(self) -> "BoundingPair":
        return replace(self, lower=self.upper, upper=self.lower)

    def to_dict(self) -> dict:
        return {"order": self.order.to_dict(), "provenance": self.provenance,
                "lower": self.lower.describe(), "upper": self.upper.describe(),
                "domain": self.domain.to_dict() if self.domain else None}


@dataclass(frozen=True)
class OrderingCheck:
    ok: bool
    worst_margin: float
    lower_margin: float
    upper_margin: float
    samples_checked: int

    def __bool__(self) -> bool:
        return self.ok

    def to_dict(self) -> dict:
        return {"ok": self.ok, "worst_margin": self.worst_margin,
                "lower_margin": self.lower_margin, "upper_margin": self.upper_margin,
                "samples_checked": self.samples_checked}


@dataclass(frozen=True)
class ConditionReport:
    condss_ok: bool
    condss2_ok: bool
    details: dict

    def to_dict(self) -> dict:
        return {"condss_ok": self.condss_ok, "condss2_ok": self.condss2_ok,
                "details": self.details}


@dataclass(frozen=True)
class ContainmentRow:
    tau: float
    lower: tuple[float, float]
    mid: tuple[float, float]
    upper: tuple[float, float]
    margin_lower: float  # U_g - L_f, negative means g certainly below f
    margin_upper: float  # U_f - L_r

    @property
    def ok(self) -> bool:
        return self.margin_lower >= 0.0 and self.margin_upper >= 0.0

    def to_dict(self) -> dict:
        return {"tau": self.tau, "lower": list(self.lower), "mid": list(self.mid),
                "upper": list(self.upper), "margin_lower": self.margin_lower,
                "margin_upper": self.margin_upper, "ok": self.ok}


@dataclass(frozen=True)
class ContainmentReport:
    rows: tuple[ContainmentRow, ...]

    @property
    def violations(self) -> list[ContainmentRow]:
        return [r for r in self.rows if not r.ok]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_csv(self) -> str:
        lines = ["tau,lower_lo,lower_hi,mid_lo,mid_hi,upper_lo,upper_hi,margin_lower,margin_upper"]
        for r in self.rows:
            vals = (r.tau, *r.lower, *r.mid, *r.upper, r.margin_lower, r.margin_upper)
            lines.append(",".join(repr(float(v)) for v in vals))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"ok": self.ok, "n_violations": len(self.violations),
                "rows": [r.to_dict() for r in self.rows]}


# ---------------------------------------------------------------------------
# helpers


def oriented(o: OrthantOrder, channel: int = 0) -> OrthantOrder:
    """Representative of ``+-o`` under which input ``channel`` pushes upward."""
    return o.flipped() if o.input_signs[channel] == 1 else o


def _check_box(model: ModelDef, domain: Box | None) -> Box:
    box = domain or model.domain
    if not box.bounded:
        box = box.intersect(model.sample_box)
    return box


def _u_range(model: ModelDef, u_range):
    if u_range is not None:
        return u_range
    return (0.0, float(model.hints.get("mu_up", 1.0)))


def _infer(model, box, u_range, n_samples, seed):
    return orthant_from_signs(sign_pattern(model, box, u_range, n_samples, seed), model.dim)


def estimate_reachable_bounds(model: ModelDef, states, channel: int = 0, mu: float | None = None,
                              tau: float | None = None, s: IntegratorSettings | None = None,
                              inflation: float = REACH_INFLATION) -> dict[int, tuple[float, float]]:
    """Range of ``x_j`` along the response of ``s0`` to the largest admissible pulse.

    The observed maximum is inflated by ``inflation``; a finite domain lower
    bound is used as the lower end, otherwise the observed minimum deflated
    by the same factor.
    """
    from .separatrix import switch_pair

    mu = float(model.hints.get("mu_up", 1.0)) if mu is None else float(mu)
    tau = float(model.hints.get("tau_range", (0.0, 1.0))[1]) if tau is None else float(tau)
    s = s or IntegratorSettings.for_model(model)
    s = s.with_(t_end=tau + float(model.hints.get("t_end", s.t_end)))
    s0, _ = switch_pair(model, channel)
    traj = integrate(model, s0, PulseInput(mu, tau).schedule(model.n_inputs, channel), s)
    out = {}
    for j in states:
        lo, hi = float(traj.states[:, j].min()), float(traj.states[:, j].max())
        dom_lo = model.domain.lower[j]
        lo = dom_lo if np.isfinite(dom_lo) else lo - inflation * abs(lo)
        out[int(j)] = (lo, hi + inflation * abs(hi))
    return out


# ---------------------------------------------------------------------------
# frozen interactions


def _frozen_rhs(rhs, n: int, rows, masks, values):
    rows = np.asarray(rows, np.int64)
    masks = np.asarray(masks, np.bool_)
    values = np.asarray(values, np.float64)

    @njit(nogil=True)
    def frozen(x, u, p):
        out = rhs(x, u, p)
        for k in range(rows.size):
            y = x.copy()
            for j in range(n):
                if masks[k, j]:
                    y[j] = values[k, j]
            out[rows[k]] = rhs(y, u, p)[rows[k]]
        return out

    return frozen


def freeze(model: ModelDef, subs: dict[int, dict[int, float]], name: str | None = None) -> ModelDef:
    """Copy of ``model`` where, in equation ``i``, each ``x_j`` in ``subs[i]`` is a constant.

    Models that know how to express the substitution through their own
    parameters (hint ``freeze``) are reparametrised instead of wrapped.
    """
    name = name or f"{model.name}[frozen]"
    hook = model.hints.get("freeze")
    if hook is not None:
        params = dict(model.params)
        for i, cols in subs.items():
            for j, v in cols.items():
                params = hook(params, i, j, v)
                if params is None:
                    break
            if params is None:
                break
        if params is not None:
            return replace(model.with_params(**params), name=name)
    rows = sorted(subs)
    masks = np.zeros((len(rows), model.dim), bool)
    vals = np.zeros((len(rows), model.dim))
    for k, i in enumerate(rows):
        for j, v in subs[i].items():
            masks[k, j] = True
            vals[k, j] = v
    rhs = _frozen_rhs(model.rhs, model.dim, rows, masks, vals)
    return replace(model, name=name, rhs=rhs, domain_fn=None)


def _partial_sign(model: ModelDef, i: int, j: int, box: Box, u_range, n_samples, seed) -> int:
    X, U = sample_points(model, box, u_range, n_samples, seed)
    pos = neg = False
    for x, u in zip(X, U):
        J = numeric_jacobian(model, x, u)
        tol = 1e-9 * (1.0 + float(np.max(np.abs(J))))
        pos |= J[i, j] > tol
        neg |= J[i, j] < -tol
    if pos and neg:
        raise NotNearMonotone(f"{model.name}: df_{i + 1}/dx_{j + 1} changes sign; "
                              f"freezing x_{j + 1} in that equation has no extreme endpoint")
    return 1 if pos else (-1 if neg else 0)


def build_interval_bounds(model: ModelDef, offending, var_bounds=None, *, order=None,
                          channel: int = 0, u_range=None, n_samples: int = 500, seed: int = 0,
                          s: IntegratorSettings | None = None) -> BoundingPair:
    """Bounding pair obtained by replacing ``x_j`` in ``f_i`` with interval ends.

    ``offending`` lists 0-based ``(i, j)`` pairs; ``var_bounds`` maps a state
    index to its ``(lo, hi)`` range and is estimated by simulation for any
    index it does not cover.
    """
    u_range = _u_range(model, u_range)
    offending = [(int(i), int(j)) for i, j in offending]
    if not offending:
        o = order or _infer(model, _check_box(model, None), u_range, n_samples, seed)
        if o is None:
            raise NotNearMonotone(f"{model.name} is not monotone and no interactions were given")
        return BoundingPair(model, model, oriented(o, channel) if order is None else o,
                            {"kind": "interval", "interactions": []})
    for i, j in offending:
        if not (0 <= i < model.dim and 0 <= j < model.dim) or i == j:
            raise ValueError(f"invalid interaction ({i}, {j})")
    bounds = dict(var_bounds or {})
    missing = sorted({j for _, j in offending} - set(bounds))
    if missing:
        bounds.update(estimate_reachable_bounds(model, missing, channel, s=s))
    box = _check_box(model, None)
    lo, hi = box.lo.copy(), box.hi.copy()
    for j, (a, b) in bounds.items():
        if not b >= a:
            raise ValueError(f"empty range for x_{j + 1}: [{a}, {b}]")
        lo[j], hi[j] = a, b
    box = Box.from_arrays(lo, np.maximum(lo, hi))

    # endpoint of x_j that minimises / maximises f_i
    ends = {}
    for i, j in offending:
        sgn = _partial_sign(model, i, j, box, u_range, n_samples, seed)
        a, b = bounds[j]
        ends[(i, j)] = (a, b) if sgn >= 0 else (b, a)

    def subs_for(pick):
        out: dict[int, dict[int, float]] = {}
        for (i, j), (vmin, vmax) in ends.items():
            out.setdefault(i, {})[j] = vmin if pick(i) == "min" else vmax
        return out

    probe = freeze(model, subs_for(lambda i: "min"))
    o = order
    if o is None:
        o = _infer(probe, box, u_range, n_samples, seed)
        if o is None:
            raise NotNearMonotone(
                f"{model.name}: freezing {offending} does not yield an orthant-monotone field")
        o = oriented(o, channel)
    lower_pick = lambda i: "min" if o.state_signs[i] == 0 else "max"  # noqa: E731
    upper_pick = lambda i: "max" if o.state_signs[i] == 0 else "min"  # noqa: E731
    g = freeze(model, subs_for(lower_pick), f"{model.name}[lower]")
    r = freeze(model, subs_for(upper_pick), f"{model.name}[upper]")
    for m in (g, r):
        rep = check_kamke_muller(m, o, box, u_range, n_samples, seed)
        if not rep.holds:
            raise NotNearMonotone(f"{m.name} violates the sign conditions under {o.to_dict()}")
    prov = {
        "kind": "interval",
        "interactions": [
            {"i": i, "j": j, "range": list(bounds[j]),
             "lower_value": subs_for(lower_pick)[i][j], "upper_value": subs_for(upper_pick)[i][j]}
            for i, j in offending],
        "lower_params": dict(g.params), "upper_params": dict(r.params),
    }
    return BoundingPair(g, r, o, prov, box)


# ---------------------------------------------------------------------------
# parameter families


def _split_rhs(rhs, n: int, n_base: int, pos: int, inst):
    inst = np.asarray(inst, np.int64)

    @njit(nogil=True)
    def split(x, u, q):
        p = q[:n_base].copy()
        out = np.empty(n)
        for i in range(n):
            p[pos] = q[inst[i]]
            out[i] = rhs(x, u, p)[i]
        return out

    return split


def split_parameter(model: ModelDef, name: str, instances) -> ModelDef:
    """Treat each occurrence of parameter ``name`` as its own parameter.

    ``instances[i]`` names the copy used by equation ``i``.  The new
    parameters start at the current value of ``name``.
    """
    if model.packer is not None:
        raise ValueError("cannot split parameters of a model with a custom packer")
    if name not in model.param_names:
        raise ValueError(f"{model.name} has no parameter {name!r}")
    instances = list(instances)
    if len(instances) != model.dim:
        raise ValueError(f"need one instance name per equation ({model.dim})")
    new = list(dict.fromkeys(instances))
    clash = [k for k in new if k in model.param_names]
    if clash:
        raise ValueError(f"instance names clash with existing parameters: {clash}")
    base = list(model.param_names)
    pos = base.index(name)
    rest = [k for k in base if k != name]
    names = tuple(rest + new)
    n_base = len(base)
    inst = [n_base + new.index(k) for k in instances]

    def packer(params, base=base, name=name, new=new):
        vec = [0.0 if k == name else params[k] for k in base]
        return vec + [params[k] for k in new]

    params = {k: model.params[k] for k in rest}
    params.update({k: model.params[name] for k in new})
    hints = {k: v for k, v in model.hints.items() if k not in ("sample_box_fn", "freeze")}
    return replace(model, name=f"{model.name}[{name} split]", param_names=names, params=params,
                   rhs=_split_rhs(model.rhs, model.dim, n_base, pos, inst), packer=packer,
                   domain_fn=None, hints=hints)


def build_param_bounds(model: ModelDef, param_box: dict, param_signs: dict | None = None, *,
                       order: OrthantOrder | None = None, channel: int = 0, u_range=None,
                       n_samples: int = 200, seed: int = 0) -> BoundingPair:
    """Endpoint models of a parameter family that is monotone in each parameter.

    ``a`` (lower model) takes, for every parameter, the end of its interval
    that lowers the field in the order; ``b`` the other end.
    """
    u_range = _u_range(model, u_range)
    names = list(param_box)
    unknown = [k for k in names if k not in model.param_names]
    if unknown:
        raise ValueError(f"{model.name}: unknown parameters {unknown}")
    box_lo = np.array([float(param_box[k][0]) for k in names])
    box_hi = np.array([float(param_box[k][1]) for k in names])
    if np.any(box_lo > box_hi):
        raise ValueError("parameter box has an inverted interval")
    box = _check_box(model, None)
    o = order
    if o is None:
        o = _infer(model, box, u_range, n_samples, seed)
        if o is None:
            raise NotNearMonotone(f"{model.name} is not orthant-monotone in the state")
        o = oriented(o, channel)
    X, U = sample_points(model, box, u_range, n_samples, seed)
    # affine map by hand: qmc.scale rejects point intervals
    P = box_lo + qmc.Halton(len(names), seed=seed).random(n_samples) * (box_hi - box_lo) \
        if names else None
    pos = np.zeros(len(names), bool)
    neg = np.zeros(len(names), bool)
    for k in range(n_samples):
        m = model.with_params(**dict(zip(names, P[k]))) if names else model
        J = o.Px[:, None] * param_jacobian(m, X[k], U[k], names)
        tol = 1e-9 * (1.0 + float(np.max(np.abs(J)))) if J.size else 0.0
        pos |= np.any(J > tol, axis=0)
        neg |= np.any(J < -tol, axis=0)
    bad = [k for k, a, b in zip(names, pos, neg) if a and b]
    if bad:
        raise NoParameterOrder(f"{model.name}: the field is not ordered in {bad}; "
                               "split parameters that enter equations with opposite signs")
    signs = {k: (1 if a else (-1 if b else 0)) for k, a, b in zip(names, pos, neg)}
    for k, want in (param_signs or {}).items():
        if k not in signs:
            raise ValueError(f"sign given for parameter {k!r} outside the box")
        if signs[k] != 0 and np.sign(want) != signs[k]:
            raise NoParameterOrder(f"{model.name}: declared direction of {k!r} contradicts "
                                   "the sampled derivative")
    a = {k: (param_box[k][0] if signs[k] >= 0 else param_box[k][1]) for k in names}
    b = {k: (param_box[k][1] if signs[k] >= 0 else param_box[k][0]) for k in names}
    g = replace(model.with_params(**a), name=f"{model.name}[lower]")
    r = replace(model.with_params(**b), name=f"{model.name}[upper]")
    prov = {"kind": "parameter", "names": names, "a": [float(a[k]) for k in names],
            "b": [float(b[k]) for k in names], "signs": signs}
    return BoundingPair(g, r, o, prov)


# ---------------------------------------------------------------------------
# hypothesis checks


def check_field_ordering(pair: BoundingPair, model: ModelDef, n_samples: int = 2000,
                         seed: int = 0, domain: Box | None = None, u_range=None) -> OrderingCheck:
    """Sampled check of ``P_x (f - g) >= 0`` and ``P_x (r - f) >= 0``."""
    box = _check_box(model, domain or pair.domain)
    X, U = sample_points(model, box, _u_range(model, u_range), n_samples, seed)
    Px = pair.order.Px
    worst_lo = worst_hi = np.inf
    ok = True
    for x, u in zip(X, U):
        f = eval_field(model, x, u)
        d_lo = Px * (f - eval_field(pair.lower, x, u))
        d_hi = Px * (eval_field(pair.upper, x, u) - f)
        tol = 1e-9 * (1.0 + float(np.max(np.abs(f))))
        worst_lo = min(worst_lo, float(d_lo.min()))
        worst_hi = min(worst_hi, float(d_hi.min()))
        ok &= bool(d_lo.min() >= -tol and d_hi.min() >= -tol)
    return OrderingCheck(ok, min(worst_lo, worst_hi), worst_lo, worst_hi, n_samples)


def check_ss_conditions(pair: BoundingPair, model: ModelDef, s: IntegratorSettings | None = None,
                        channel: int = 0, n_starts: int = 64) -> ConditionReport:
    """Stable-state conditions required for containment, checked by integration.

    ``condss``: the ``s0`` of each of ``g, f, r`` relaxes, in each of the
    three unforced systems, to that system's own ``s0``.  ``condss2``:
    ``s1`` of ``f`` lies outside the order interval ``[s0_g, s0_r]``.
    """
    from .separatrix import switch_pair

    systems = {"lower": pair.lower, "nominal": model, "upper": pair.upper}
    pairs, bistable = {}, {}
    for k, m in systems.items():
        try:
            pairs[k] = switch_pair(m, channel, pair.order, n_starts)
            bistable[k] = True
        except ConfigError:
            # a monostable system: its only stable state stands in for both
            only = find_steady_states(m, n_starts=n_starts).stable
            if not only:
                raise
            pairs[k] = (only[0].state, only[0].state)
            bistable[k] = False
    evidence = []
    condss = all(bistable.values())
    for kx, mx in systems.items():
        s_x = s or IntegratorSettings.for_model(mx, t_end=max(2000.0, mx.hints.get("t_end", 0.0)))
        for ky in systems:
            idx, traj = relax_to_equilibrium(mx, pairs[ky][0], list(pairs[kx]), s=s_x, record=False)
            hit = {0: "s0", 1: "s1"}.get(idx, "none")
            condss &= idx == 0
            evidence.append({"system": kx, "start": f"s0_{ky}", "reached": hit,
                             "t": traj.t_final, "final": traj.final.tolist()})
    s1_f = pairs["nominal"][1]
    inside = in_interval(pair.order, pairs["lower"][0], s1_f, pairs["upper"][0])
    details = {
        "equilibria": {k: {"s0": v[0].tolist(), "s1": v[1].tolist()} for k, v in pairs.items()},
        "relaxations": evidence,
        "bistable": bistable,
        "s0_ordered": bool(leq(pair.order, pairs["lower"][0], pairs["nominal"][0], 1e-9)
                           and leq(pair.order, pairs["nominal"][0], pairs["upper"][0], 1e-9)),
        "s1_f_in_s0_interval": inside,
    }
    return ConditionReport(bool(condss), not inside, details)


def _bracket(est: SeparatrixEstimate, tau: float) -> tuple[float, float]:
    lo = lower_envelope(est.m_min, tau, est.bounds.mu_lo)
    hi = upper_envelope(est.m_max, tau, est.bounds.mu_hi)
    return float(lo), float(hi)


def containment_test(lower_est: SeparatrixEstimate, mid_est: SeparatrixEstimate,
                     upper_est: SeparatrixEstimate, tau_grid, tol: float = 0.0) -> ContainmentReport:
    """Check ``mu_g(tau) >= mu_f(tau) >= mu_r(tau)`` up to the bracket widths.

    At each ``tau`` every estimate gives a bracket ``[L, U]`` from its
    staircases; the ordering is violated only when the brackets certify the
    opposite, e.g. ``U_g < L_f``.
    """
    rows = []
    for tau in np.asarray(tau_grid, float):
        g, f, r = (_bracket(e, tau) for e in (lower_est, mid_est, upper_est))
        rows.append(ContainmentRow(float(tau), g, f, r, g[1] - f[0] + tol, f[1] - r[0] + tol))
    return ContainmentReport(tuple(rows))


def comparison_check(lower: ModelDef, upper: ModelDef, order: OrthantOrder, x_pairs, pulse_pairs,
                     times, s: IntegratorSettings | None = None, channel: int = 0,
                     jobs: int | None = None) -> list[dict]:
    """Flow comparison ``phi_g(t, x1, u1) <= phi_r(t, x2, u2)`` at the output ``times``.

    ``x_pairs`` holds ordered initial states and ``pulse_pairs`` ordered
    :class:`PulseInput` pairs.  Returns one record per violated pair.
    """
    times = np.asarray(times, float)
    s = s or IntegratorSettings.for_model(lower)
    s = s.with_(t_end=float(times[-1]))

    def one(args):
        (x1, x2), (p1, p2) = args
        a = integrate(lower, x1, p1.schedule(lower.n_inputs, channel), s)
        b = integrate(upper, x2, p2.schedule(upper.n_inputs, channel), s)
        gaps = np.array([order.Px * (b.at(t) - a.at(t)) for t in times])
        scale = 1e-6 * (1.0 + np.abs(np.array([b.at(t) for t in times])))
        return float(np.min(gaps + scale)), float(np.min(gaps))

    res = map_jobs(one, list(zip(x_pairs, pulse_pairs)), jobs)
    return [{"pair": k, "worst_gap": g} for k, (ok, g) in enumerate(res) if ok < 0]


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class NearMonotoneDiagnosis:
    monotone: bool
    order: OrthantOrder | None
    sign_pattern: np.ndarray
    mixed_entries: tuple[tuple[int, int], ...]
    removal_sets: tuple[tuple[tuple[int, int], ...], ...]

    def to_dict(self) -> dict:
        return {"monotone": self.monotone,
                "order": self.order.to_dict() if self.order else None,
                "sign_pattern": self.sign_pattern.tolist(),
                "mixed_entries": [list(e) for e in self.mixed_entries],
                "removal_sets": [[list(e) for e in rs] for rs in self.removal_sets]}


def diagnose_near_monotone(model: ModelDef, domain: Box | None = None, u_range=None,
                           max_removed: int = 2, n_samples: int = 2000,
                           seed: int = 0) -> NearMonotoneDiagnosis:
    """Smallest sets of state interactions whose removal makes the sign graph 2-colourable.

    A set is only listed if no proper subset already works.  Removing an
    interaction whose derivative changes sign is always required.
    """
    box = _check_box(model, domain)
    pat = sign_pattern(model, box, _u_range(model, u_range), n_samples, seed)
    n = model.dim
    o = orthant_from_signs(pat, n)
    mixed = tuple((i, j) for i in range(n) for j in range(n) if i != j and pat[i, j] == 2)
    if o is not None:
        return NearMonotoneDiagnosis(True, o, pat, mixed, ())
    edges = [(i, j) for i in range(n) for j in range(n) if i != j and pat[i, j] != 0]
    found: list[tuple] = []
    for k in range(1, max_removed + 1):
        for combo in itertools.combinations(edges, k):
            if any(set(f) <= set(combo) for f in found):
                continue
            if not set(mixed) <= set(combo):
                continue
            trial = pat.copy()
            for i, j in combo:
                trial[i, j] = 0
            if orthant_from_signs(trial, n) is not None:
                found.append(combo)
    return NearMonotoneDiagnosis(False, None, pat, mixed, tuple(found))
