"""Pulse classification and the two separatrix estimators.

``bisection_separatrix`` bisects the magnitude on a fixed grid of
durations, reusing the smallest switching magnitude of earlier batches as
the next upper bound.  ``random_sampling_separatrix`` starts from two
bisections at the duration extremes and then spends its samples inside the
largest undecided boxes plus Beta-distributed exploration draws.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (ConfigError, DomainError, IntegrationError, MonotoneViolation,
                     UpperBoundTooSmall)
from .frontier import (Bounds, SeparatrixEstimate, error_boxes, mu_gap, sample_beta,
                       tau_gap)
from .models import ModelDef
from .ode_core import (IntegratorSettings, PulseInput, equilibrium_stop, map_jobs, run_schedule)
from . import _kernels as K
from .order import OrthantOrder
from .steady import find_steady_states

log = logging.getLogger(__name__)

REACHED_S1 = "ReachedS1"
REACHED_S0 = "ReachedS0"
UNDECIDED = "Undecided"


@dataclass(frozen=True)
class SwitchOutcome:
    tag: str
    t_decide: float | None = None
    diagnostic: str | None = None

    def __post_init__(self):
        if self.tag not in (REACHED_S0, REACHED_S1, UNDECIDED):
            raise ValueError(f"unknown outcome tag {self.tag!r}")
        if self.tag == UNDECIDED and self.t_decide is not None:
            raise ValueError("an undecided outcome has no decision time")

    @property
    def switched(self) -> bool:
        return self.tag == REACHED_S1

    def to_dict(self) -> dict:
        return asdict(self)


def parse_grid(spec) -> np.ndarray:
    """``"log:0.1:100:20"`` / ``"lin:a:b:n"`` or an explicit sequence of durations."""
    if isinstance(spec, str):
        parts = spec.split(":")
        if len(parts) != 4 or parts[0] not in ("log", "lin"):
            raise ConfigError(f"grid spec {spec!r} must look like log:<min>:<max>:<n>")
        try:
            lo, hi, n = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError:
            raise ConfigError(f"grid spec {spec!r} has non-numeric fields") from None
        if n < 1 or not hi >= lo or lo <= 0 and parts[0] == "log":
            raise ConfigError(f"grid spec {spec!r} is degenerate")
        if n == 1:
            return np.array([lo])
        return np.geomspace(lo, hi, n) if parts[0] == "log" else np.linspace(lo, hi, n)
    grid = np.asarray(spec, float).ravel()
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or np.any(grid < 0):
        raise ConfigError("tau grid must be nonempty, nonnegative and strictly increasing")
    return grid


@dataclass(frozen=True)
class AlgSettings:
    """Settings shared by the classifier and both estimators.

    ``n_par`` is the batch size.  For random sampling it must equal
    ``2 * (n_gr + n_eps)`` and defaults to that value.  ``beta`` shapes the
    exploration draws, ``box_beta`` the draws inside the two error boxes
    (uniform by default).
    """

    epsilon: float = 1e-3
    t_e: float = 200.0
    n_par: int | None = None
    n_gr: int = 5
    n_eps: int = 5
    grid: object = "log:0.5:50:20"
    mu_up: float = 100.0
    seed: int = 0
    max_samples: int = 2000
    target_error: float | None = None
    tau_bounds: tuple | None = None
    beta: tuple = (1.0, 3.0)
    box_beta: tuple = (1.0, 1.0)
    channel: int = 0
    jobs: int = 1
    strict: bool = False
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)

    def __post_init__(self):
        problems = []
        if not self.epsilon > 0:
            problems.append("epsilon must be positive")
        if not self.t_e > 0:
            problems.append("t_e must be positive")
        if not self.mu_up > 0:
            problems.append("mu_up must be positive")
        if self.n_gr < 0 or self.n_eps < 0 or self.n_gr + self.n_eps == 0:
            problems.append("n_gr and n_eps must be >= 0 and not both zero")
        if self.n_par is not None and self.n_par < 1:
            problems.append("n_par must be >= 1")
        if self.max_samples < 1:
            problems.append("max_samples must be >= 1")
        if self.jobs < 1:
            problems.append("jobs must be >= 1")
        for name in ("beta", "box_beta"):
            ab = getattr(self, name)
            if len(ab) != 2 or min(ab) <= 0:
                problems.append(f"{name} shape parameters must be positive")
        if self.tau_bounds is not None and not (0 <= self.tau_bounds[0] < self.tau_bounds[1]):
            problems.append("tau_bounds must be an increasing pair of nonnegative durations")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def for_model(cls, model: ModelDef, **kw) -> "AlgSettings":
        hints = model.hints
        base = {}
        if "t_end" in hints:
            base["t_e"] = hints["t_end"]
        if "mu_up" in hints:
            base["mu_up"] = hints["mu_up"]
        if "tau_range" in hints:
            lo, hi = hints["tau_range"]
            base["grid"] = f"log:{lo}:{hi}:20"
            base["tau_bounds"] = (lo, hi)
        integ = kw.pop("integrator", None) or IntegratorSettings.for_model(model)
        base.update({k: v for k, v in kw.items() if v is not None})
        return cls(integrator=integ, **base)

    def batch_size(self) -> int:
        want = 2 * (self.n_gr + self.n_eps)
        if self.n_par is not None and self.n_par != want:
            raise ConfigError(f"random sampling needs n_par = 2 (n_gr + n_eps) = {want}, "
                              f"got {self.n_par}")
        return want

    def tau_grid(self) -> np.ndarray:
        return parse_grid(self.grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["integrator"] = asdict(self.integrator)
        d["grid"] = self.grid if isinstance(self.grid, str) else list(map(float, self.grid))
        return d


def switch_pair(model: ModelDef, channel: int = 0, order: OrthantOrder | None = None,
                n_starts: int = 64, seed: int = 0):
    """Stable equilibria ``(s0, s1)`` of the unforced model.

    ``s0`` is the stable state least advanced in the direction the input
    channel pushes (the order's direction when one is given), ``s1`` the most
    advanced one.
    """
    eqs = find_steady_states(model, n_starts=n_starts, seed=seed)
    stable = [p.state for p in eqs.stable]
    if len(stable) < 2:
        raise ConfigError(f"{model.name} has {len(stable)} stable equilibria; need two")
    if order is not None:
        w = order.Px * order.Pu[channel] * np.abs(model.input_columns[:, channel])
        w = np.where(w == 0, order.Px * 1e-6, w)
    else:
        w = model.input_columns[:, channel]
    score = [float(w @ x) for x in stable]
    return stable[int(np.argmin(score))], stable[int(np.argmax(score))]


def classify_switch(model: ModelDef, s0, s1, p: PulseInput, s: AlgSettings | None = None,
                    ball_radius=None) -> SwitchOutcome:
    """Apply the pulse from ``s0`` and see where the free flight settles.

    The relaxation horizon ``t_e`` counts from the end of the pulse.
    """
    s = s or AlgSettings.for_model(model)
    stop = equilibrium_stop([s0, s1], ball_radius, stall=1e-10)
    sched = p.schedule(model.n_inputs, s.channel)
    try:
        status, idx, traj = run_schedule(model, s0, sched, 0.0, p.tau + s.t_e, s.integrator,
                                         record=False, stop=stop, stop_from=p.tau)
    except (IntegrationError, DomainError) as exc:
        return SwitchOutcome(UNDECIDED, None, f"{type(exc).__name__}: {exc}")
    if status == K.HIT_EQUILIBRIUM:
        return SwitchOutcome(REACHED_S1 if idx == 1 else REACHED_S0, traj.t_final)
    if status == K.STALLED:
        return SwitchOutcome(UNDECIDED, None, f"settled away from s0 and s1 at {traj.final.tolist()}")
    return SwitchOutcome(UNDECIDED, None, "timeout")


def _classify_many(model, s0, s1, pairs, s: AlgSettings) -> list[SwitchOutcome]:
    return map_jobs(lambda mt: classify_switch(model, s0, s1, PulseInput(*mt), s), pairs, s.jobs)


def _log_undecided(pairs, outs):
    for (mu, tau), o in zip(pairs, outs):
        if o.tag == UNDECIDED:
            log.info("undecided pulse (mu=%.6g, tau=%.6g): %s", mu, tau, o.diagnostic)


def _bisect_batch(model, s0, s1, taus, upper, s: AlgSettings, est: SeparatrixEstimate):
    """Bisect mu in [0, upper] at each tau of the batch, in lock step."""
    lo = np.zeros(len(taus))
    hi = np.full(len(taus), float(upper))
    while True:
        active = [k for k in range(len(taus)) if hi[k] - lo[k] > s.epsilon]
        if not active:
            break
        pairs = [(0.5 * (lo[k] + hi[k]), taus[k]) for k in active]
        outs = _classify_many(model, s0, s1, pairs, s)
        _log_undecided(pairs, outs)
        for k, (mu, tau), o in zip(active, pairs, outs):
            est.n_samples += 1
            est.samples.append((mu, float(tau), o.tag))
            # undecided advances the bracket like a failed switch
            if o.tag == REACHED_S1:
                hi[k] = mu
            else:
                lo[k] = mu
    for k, tau in enumerate(taus):
        est.m_min.append((float(lo[k]), float(tau)))
        est.m_max.append((float(hi[k]), float(tau)))
    return lo, hi


def _check_upper(model, s0, s1, s: AlgSettings, tau: float, est: SeparatrixEstimate):
    o = classify_switch(model, s0, s1, PulseInput(s.mu_up, tau), s)
    est.n_samples += 1
    est.samples.append((float(s.mu_up), float(tau), o.tag))
    if o.tag != REACHED_S1:
        raise UpperBoundTooSmall(f"mu_up = {s.mu_up} does not switch {model.name} at tau = {tau} "
                                 f"({o.tag})")


def _record_history(est: SeparatrixEstimate):
    if est.bounds.mu_span > 0 and est.bounds.tau_span > 0 and est.m_min and est.m_max:
        est.history.append((est.n_samples, est.relative_error()))


def bisection_separatrix(model: ModelDef, s0, s1, s: AlgSettings | None = None) -> SeparatrixEstimate:
    s = s or AlgSettings.for_model(model)
    grid = s.tau_grid()
    n_par = s.n_par or 1
    bounds = Bounds(0.0, s.mu_up, float(grid[0]), float(grid[-1]))
    est = SeparatrixEstimate([], [], bounds, algorithm="bisect")
    _check_upper(model, s0, s1, s, float(grid[0]), est)
    upper = s.mu_up
    for start in range(0, grid.size, n_par):
        taus = grid[start:start + n_par]
        _, hi = _bisect_batch(model, s0, s1, taus, upper, s, est)
        upper = min(upper, float(hi.min()))
        est.prune()
        _record_history(est)
    est.violations = est.crossings()
    return est


def _exploration(est: SeparatrixEstimate, n_eps: int, ab, rng) -> list[tuple[float, float]]:
    b = est.bounds
    out = []
    for tau in sample_beta(*ab, (b.tau_lo, b.tau_hi), rng, n_eps):
        lo, hi = mu_gap(est.m_min, est.m_max, tau, b)
        out.append((float(sample_beta(*ab, (lo, hi), rng)), float(tau)))
    for mu in sample_beta(*ab, (b.mu_lo, b.mu_hi), rng, n_eps):
        lo, hi = tau_gap(est.m_min, est.m_max, mu, b)
        out.append((float(mu), float(sample_beta(*ab, (lo, hi), rng))))
    return out


def _in_box(box, n: int, ab, rng) -> list[tuple[float, float]]:
    mus = sample_beta(*ab, (box.mu_lo, box.mu_hi), rng, n)
    taus = sample_beta(*ab, (box.tau_lo, box.tau_hi), rng, n)
    return [(float(m), float(t)) for m, t in zip(mus, taus)]


def random_sampling_separatrix(model: ModelDef, s0, s1,
                               s: AlgSettings | None = None) -> SeparatrixEstimate:
    s = s or AlgSettings.for_model(model)
    batch = s.batch_size()
    if s.tau_bounds is not None:
        tau_lo, tau_hi = map(float, s.tau_bounds)
    else:
        g = s.tau_grid()
        tau_lo, tau_hi = float(g[0]), float(g[-1])
    if not tau_hi > tau_lo:
        raise ConfigError("random sampling needs tau_max > tau_min")

    est = SeparatrixEstimate([], [], Bounds(0.0, s.mu_up, tau_lo, tau_hi), algorithm="sample")
    _check_upper(model, s0, s1, s, tau_lo, est)
    lo, hi = _bisect_batch(model, s0, s1, [tau_lo, tau_hi], s.mu_up, s, est)
    # the box spans from the smallest non-switching magnitude (at tau_max)
    # to the largest switching one (at tau_min)
    est.bounds = Bounds(float(lo[1]), float(hi[0]), tau_lo, tau_hi)
    est.prune()
    crossing = est.crossings()
    if crossing:
        raise MonotoneViolation("initial bisections give crossing frontiers", crossing)
    _record_history(est)

    i = 0
    while est.n_samples < s.max_samples:
        if s.target_error is not None and est.history and est.history[-1][1] <= s.target_error:
            break
        rng = np.random.default_rng([s.seed, i])
        eb = error_boxes(est)
        pairs = _in_box(eb.b_mu, s.n_gr, s.box_beta, rng) + _in_box(eb.b_tau, s.n_gr, s.box_beta, rng)
        pairs += _exploration(est, s.n_eps, s.beta, rng)
        pairs = pairs[: max(0, min(batch, s.max_samples - est.n_samples))]
        outs = _classify_many(model, s0, s1, pairs, s)
        _log_undecided(pairs, outs)
        for (mu, tau), o in zip(pairs, outs):
            _check_conflict(est, mu, tau, o.tag, s.strict)
            est.add(mu, tau, o.tag)
        est.prune()
        _record_history(est)
        i += 1
    return est


def _check_conflict(est: SeparatrixEstimate, mu, tau, tag, strict: bool):
    if tag == REACHED_S0:
        hits = [b for b in est.m_max if mu >= b[0] and tau >= b[1]]
        pairs = [((mu, tau), b) for b in hits]
    elif tag == REACHED_S1:
        hits = [a for a in est.m_min if a[0] >= mu and a[1] >= tau]
        pairs = [(a, (mu, tau)) for a in hits]
    else:
        return
    if pairs:
        est.violations.extend(pairs)
        if strict:
            raise MonotoneViolation(f"sample (mu={mu}, tau={tau}) contradicts the frontiers", pairs)


def monotone_violations(est: SeparatrixEstimate, tol: float = 0.0) -> list:
    """Frontier points breaking the non-increasing shape of mu(tau) beyond ``tol``."""
    bad = []
    for pts in (est.m_min, est.m_max):
        ordered = sorted(pts, key=lambda p: p[1])
        for p, q in zip(ordered, ordered[1:]):
            if q[0] > p[0] + tol:
                bad.append((p, q))
    return bad


def grid_separatrix(model: ModelDef, s0, s1, mus, taus, s: AlgSettings | None = None):
    """Classify every pulse of a mesh; returns an array of tags shaped (len(mus), len(taus))."""
    s = s or AlgSettings.for_model(model)
    pairs = [(float(m), float(t)) for m in mus for t in taus]
    outs = _classify_many(model, s0, s1, pairs, s)
    return np.array([o.tag for o in outs], dtype=object).reshape(len(mus), len(taus))


def grid_boundary(tags, mus, taus) -> np.ndarray:
    """Smallest switching magnitude per duration column (``nan`` if none)."""
    out = np.full(len(taus), np.nan)
    for j in range(len(taus)):
        hit = [mus[i] for i in range(len(mus)) if tags[i, j] == REACHED_S1]
        if hit:
            out[j] = min(hit)
    return out
