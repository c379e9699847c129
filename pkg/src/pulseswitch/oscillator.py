"""Event-triggered pulses that keep a bistable monotone system oscillating.

The two stable states ``s1 <= s2`` span the order interval ``M``.  Whenever
the state comes within ``eps`` of a corner, i.e. ``x <= s1 + eps P_x 1`` or
``x >= s2 - eps P_x 1``, a pulse is fired that pushes it towards the other
corner: input 1 at the lower face, input 2 at the upper face.  A new event
replaces whatever pulse is still running.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ConfigError, NoEventsFired
from .models import ModelDef
from .ode_core import IntegratorSettings, InputSchedule, Trajectory, _Event, run_schedule
from .order import OrthantOrder, leq
from .steady import find_steady_states

LOWER_FACE = "HitLowerFace"
UPPER_FACE = "HitUpperFace"


@dataclass(frozen=True)
class EventControlConfig:
    mu: float
    tau: float
    eps: float = 0.5
    t_end: float = 400.0
    order: OrthantOrder | None = None
    lower_channel: int = 0
    upper_channel: int = 1

    def __post_init__(self):
        problems = []
        if not self.mu > 0:
            problems.append(f"mu must be positive, got {self.mu}")
        if not self.tau > 0:
            problems.append(f"tau must be positive, got {self.tau}")
        if not self.eps > 0:
            problems.append(f"eps must be positive, got {self.eps}")
        if not self.t_end > 0:
            problems.append(f"t_end must be positive, got {self.t_end}")
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict:
        return {"mu": self.mu, "tau": self.tau, "eps": self.eps, "t_end": self.t_end,
                "order": self.order.to_dict() if self.order else None,
                "lower_channel": self.lower_channel, "upper_channel": self.upper_channel}


@dataclass(frozen=True)
class ControlEvent:
    time: float
    kind: str
    channel: int

    def to_dict(self) -> dict:
        return {"time": self.time, "kind": self.kind, "channel": self.channel}


@dataclass
class EventLog:
    events: list[ControlEvent] = field(default_factory=list)
    s_low: np.ndarray | None = None
    s_high: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.events)

    def append(self, ev: ControlEvent) -> None:
        if self.events:
            last = self.events[-1]
            if ev.kind == last.kind:
                raise ValueError("events must alternate between the two faces")
            if not ev.time > last.time:
                raise ValueError("event times must increase")
        self.events.append(ev)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events])

    def to_json(self) -> str:
        return json.dumps({"events": [e.to_dict() for e in self.events],
                           "s_low": None if self.s_low is None else self.s_low.tolist(),
                           "s_high": None if self.s_high is None else self.s_high.tolist()},
                          indent=2)


def default_order(model: ModelDef) -> OrthantOrder:
    """Alternating orthant of an even ring of repressors."""
    eps = tuple(i % 2 for i in range(model.dim))
    return OrthantOrder(eps, tuple(i % 2 for i in range(model.n_inputs)))


def corner_states(model: ModelDef, order: OrthantOrder, n_starts: int = 64, seed: int = 0):
    """The two stable equilibria forming the corners ``s1 <= s2`` of ``M``."""
    stable = [p.state for p in find_steady_states(model, n_starts=n_starts, seed=seed).stable]
    if len(stable) < 2:
        raise ConfigError(f"{model.name} has {len(stable)} stable equilibria; need two")
    score = [float(order.Px @ x) for x in stable]
    lo, hi = stable[int(np.argmin(score))], stable[int(np.argmax(score))]
    if not leq(order, lo, hi):
        raise ConfigError(f"{model.name}: stable states are not ordered by {order.to_dict()}")
    return lo, hi


def in_box(order: OrthantOrder, lo, hi, X, tol: float = 0.0) -> np.ndarray:
    """Row mask of ``X`` inside the order interval ``[lo, hi]``."""
    X = np.atleast_2d(X)
    a = order.Px * (X - lo) >= -tol
    b = order.Px * (hi - X) >= -tol
    return np.all(a & b, axis=1)


def _face_event(order: OrthantOrder, corner, eps: float, kind: str) -> _Event:
    # lower face: P(s1 - x) + eps >= 0; upper face: P(x - s2) + eps >= 0
    sigma = 1.0 if kind == LOWER_FACE else -1.0
    return _Event(np.asarray(corner, float), order.Px.copy(), sigma, float(eps))


def _on_face(ev: _Event, x) -> bool:
    return bool(np.min(ev.sigma * ev.signs * (ev.corner - x)) + ev.eps >= 0.0)


def _pulse_schedule(n_inputs: int, channel: int, mu: float, t0: float, tau: float) -> InputSchedule:
    vec = np.zeros(n_inputs)
    vec[channel] = mu
    zero = np.zeros(n_inputs)
    return InputSchedule((t0 + tau,), (vec, zero))


@dataclass(frozen=True, eq=False)
class ControlRun:
    trajectory: Trajectory
    log: EventLog
    inputs: np.ndarray  # input value at every trajectory sample

    def __iter__(self):
        return iter((self.trajectory, self.log))

    def free_flight_mask(self, tau: float) -> np.ndarray:
        """Samples taken while no pulse is active."""
        t = self.trajectory.times
        mask = np.ones(t.size, bool)
        for e in self.log.events:
            mask &= ~((t >= e.time) & (t < e.time + tau))
        return mask

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.trajectory.states.shape[1]
        m = self.inputs.shape[1]
        w.writerow(["time"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)])
        for t, x, u in zip(self.trajectory.times, self.trajectory.states, self.inputs):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in u])
        return buf.getvalue()


def run_event_control(model: ModelDef, cfg: EventControlConfig,
                      s: IntegratorSettings | None = None, x0=None, corners=None,
                      require_events: int = 2) -> ControlRun:
    """Simulate the closed loop on ``[0, cfg.t_end]``.

    Starts from ``x0`` (default ``s1``), which usually sits on the lower face
    and fires the first event at ``t = 0``.  Raises :class:`NoEventsFired`
    when fewer than ``require_events`` events occur.
    """
    order = cfg.order or default_order(model)
    if len(order.state_signs) != model.dim or len(order.input_signs) != model.n_inputs:
        raise ConfigError("order dimensions do not match the model")
    s_low, s_high = corners if corners is not None else corner_states(model, order)
    s_low, s_high = np.asarray(s_low, float), np.asarray(s_high, float)
    shift = cfg.eps * order.Px
    if not leq(order, s_low + shift, s_high - shift):
        raise ConfigError(f"eps = {cfg.eps} leaves an empty box between the corners")
    s = s or IntegratorSettings.for_model(model)
    s = s.with_(t_end=cfg.t_end)
    faces = {LOWER_FACE: _face_event(order, s_low, cfg.eps, LOWER_FACE),
             UPPER_FACE: _face_event(order, s_high, cfg.eps, UPPER_FACE)}
    channel = {LOWER_FACE: cfg.lower_channel, UPPER_FACE: cfg.upper_channel}
    other = {LOWER_FACE: UPPER_FACE, UPPER_FACE: LOWER_FACE}

    x = np.array(s_low if x0 is None else x0, float)
    t = 0.0
    log = EventLog(s_low=s_low, s_high=s_high)
    parts: list[Trajectory] = []
    inputs: list[np.ndarray] = []
    zero = InputSchedule.constant(np.zeros(model.n_inputs))
    sched, armed = zero, LOWER_FACE
    for kind in (LOWER_FACE, UPPER_FACE):
        # the control law acts on the initial state as well
        if _on_face(faces[kind], x):
            log.append(ControlEvent(0.0, kind, channel[kind]))
            sched = _pulse_schedule(model.n_inputs, channel[kind], cfg.mu, 0.0, cfg.tau)
            armed = other[kind]
            break
    while t < cfg.t_end:
        status, _, traj = run_schedule(model, x, sched, t, cfg.t_end, s, record=True,
                                       event=faces[armed])
        parts.append(traj)
        inputs.append(np.array([sched(ti) for ti in traj.times]))
        x, t = traj.final, traj.t_final
        if status != K.HIT_EVENT:
            break
        log.append(ControlEvent(t, armed, channel[armed]))
        sched = _pulse_schedule(model.n_inputs, channel[armed], cfg.mu, t, cfg.tau)
        armed = other[armed]
    keep = [np.ones(parts[0].times.size, bool)]
    for a, p in zip(parts, parts[1:]):
        keep.append(p.times > a.t_final)
    traj = Trajectory.concat(parts)
    u = np.concatenate([iu[k] for iu, k in zip(inputs, keep)])
    run = ControlRun(traj, log, u)
    if len(log) < require_events:
        raise NoEventsFired(f"{len(log)} event(s) on [0, {cfg.t_end}]: the pulse does not carry "
                            "the state across to the opposite face", traj, log)
    return run


def persistence_metric(traj: Trajectory, log: EventLog, tau: float | None = None) -> dict:
    """Counts, inter-event statistics and per-species amplitude of a controlled run.

    With ``tau`` the amplitude uses only free-flight samples.
    """
    if not len(log):
        raise ValueError("event log is empty")
    times = log.times
    gaps = np.diff(times)
    states = traj.states
    if tau is not None:
        mask = np.ones(traj.times.size, bool)
        for t0 in times:
            mask &= ~((traj.times >= t0) & (traj.times < t0 + tau))
        if mask.any():
            states = states[mask]
    return {
        "n_events": int(len(log)),
        "mean_inter_event": float(gaps.mean()) if gaps.size else None,
        "min_inter_event": float(gaps.min()) if gaps.size else None,
        "max_inter_event": float(gaps.max()) if gaps.size else None,
        "amplitude": (states.max(axis=0) - states.min(axis=0)).tolist(),
    }
