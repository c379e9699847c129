"""Adaptive integration of pulse-driven systems.

Inputs are piecewise constant in time.  Integration is split at every
input discontinuity, so each piece is a smooth initial-value problem and
the pulse edge lands exactly on a step boundary.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import NonFiniteState, StepSizeCollapse
from .models import ModelDef

_NO_EQ = {}


@dataclass(frozen=True)
class PulseInput:
    """Pulse of magnitude ``mu`` held on ``[0, tau]``."""

    mu: float
    tau: float

    def __post_init__(self):
        mu, tau = float(self.mu), float(self.tau)
        if not (math.isfinite(mu) and math.isfinite(tau)):
            raise ValueError("pulse magnitude and duration must be finite")
        if mu < 0 or tau < 0:
            raise ValueError(f"pulse needs mu >= 0 and tau >= 0, got ({mu}, {tau})")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "tau", tau)

    def __call__(self, t: float) -> float:
        return pulse_value(self, t)

    def schedule(self, n_inputs: int = 1, channel: int = 0, start: float = 0.0) -> "InputSchedule":
        vec = np.zeros(n_inputs)
        vec[channel] = self.mu
        if self.tau == 0.0 or self.mu == 0.0:
            return InputSchedule.constant(np.zeros(n_inputs))
        if start > 0.0:
            return InputSchedule((start, start + self.tau), (np.zeros(n_inputs), vec, np.zeros(n_inputs)))
        return InputSchedule((self.tau,), (vec, np.zeros(n_inputs)))


def pulse_value(p: PulseInput, t: float) -> float:
    if t < 0:
        raise ValueError("pulse evaluated at negative time")
    return p.mu if t <= p.tau else 0.0


@dataclass(frozen=True)
class InputSchedule:
    """Piecewise-constant input: ``values[k]`` holds between ``breaks[k-1]`` and ``breaks[k]``.

    ``values`` has one more entry than ``breaks``; the last value holds
    forever.
    """

    breaks: tuple[float, ...]
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        br = tuple(float(b) for b in self.breaks)
        vals = tuple(np.atleast_1d(np.asarray(v, float)).copy() for v in self.values)
        if len(vals) != len(br) + 1:
            raise ValueError("schedule needs exactly one more value than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(br, br[1:])):
            raise ValueError("schedule breakpoints must be strictly increasing")
        if len({v.shape for v in vals}) != 1:
            raise ValueError("schedule values differ in length")
        for v in vals:
            v.setflags(write=False)
        object.__setattr__(self, "breaks", br)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value) -> "InputSchedule":
        return cls((), (np.atleast_1d(np.asarray(value, float)),))

    @property
    def n_inputs(self) -> int:
        return self.values[0].size

    def __call__(self, t: float) -> np.ndarray:
        # right-continuous except that the pulse end is inclusive
        k = int(np.searchsorted(self.breaks, t, side="left"))
        return self.values[k]

    def pieces(self, t0: float, t1: float):
        """Yield ``(a, b, u)`` covering ``[t0, t1]`` with ``u`` constant on each."""
        a = t0
        for k, b in enumerate(self.breaks):
            if b <= a:
                continue
            if b >= t1:
                break
            yield a, b, self.values[k]
            a = b
        k = int(np.searchsorted(self.breaks, a, side="right"))
        yield a, t1, self.values[k]


def as_schedule(model: ModelDef, u) -> InputSchedule:
    if u is None:
        return InputSchedule.constant(np.zeros(model.n_inputs))
    if isinstance(u, InputSchedule):
        sched = u
    elif isinstance(u, PulseInput):
        sched = u.schedule(model.n_inputs)
    else:
        sched = InputSchedule.constant(np.broadcast_to(np.asarray(u, float), (model.n_inputs,)))
    if sched.n_inputs != model.n_inputs:
        raise ValueError(f"input has {sched.n_inputs} channels, model expects {model.n_inputs}")
    return sched


@dataclass(frozen=True)
class IntegratorSettings:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    t_end: float = 100.0
    method: str = "auto"
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.method not in ("auto", "dopri5", "trbdf2"):
            raise ValueError(f"unknown method {self.method!r}")

    @classmethod
    def for_model(cls, model: ModelDef, **overrides) -> "IntegratorSettings":
        base = {k: model.hints[k] for k in ("rtol", "atol", "t_end") if k in model.hints}
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def with_(self, **kw) -> "IntegratorSettings":
        return replace(self, **kw)

    def scheme(self, model: ModelDef) -> int:
        if self.method == "auto":
            return K.TRBDF2 if model.stiff else K.DOPRI5
        return K.TRBDF2 if self.method == "trbdf2" else K.DOPRI5


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution; ``times`` strictly increasing, one state row per time."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, float)
        x = np.asarray(self.states, float)
        if x.ndim != 2 or t.ndim != 1 or x.shape[0] != t.size or t.size < 1:
            raise ValueError("times and states do not line up")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    def __len__(self) -> int:
        return self.times.size

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def at(self, t) -> np.ndarray:
        """Linear interpolation between stored samples."""
        t = np.atleast_1d(np.asarray(t, float))
        return np.stack([np.interp(t, self.times, self.states[:, i])
                         for i in range(self.states.shape[1])], axis=-1)

    @staticmethod
    def concat(parts: Sequence["Trajectory"]) -> "Trajectory":
        times = [parts[0].times]
        states = [parts[0].states]
        for p in parts[1:]:
            keep = p.times > times[-1][-1]
            times.append(p.times[keep])
            states.append(p.states[keep])
        return Trajectory(np.concatenate(times), np.concatenate(states))


@dataclass
class _Stop:
    """Optional stop tests forwarded to the compiled driver."""

    eq: np.ndarray
    radius: np.ndarray
    resid: np.ndarray
    stall: float = 0.0

    @classmethod
    def none(cls, dim: int) -> "_Stop":
        z = np.empty(0)
        return cls(np.empty((0, dim)), z, z, 0.0)


@dataclass
class _Event:
    """Fires when ``sigma * P (corner - x) + eps >= 0`` first holds componentwise."""

    corner: np.ndarray
    signs: np.ndarray
    sigma: float
    eps: float
    resolution: float = 1e-9

    @classmethod
    def off(cls, dim: int) -> "_Event":
        return cls(np.zeros(dim), np.ones(dim), 1.0, 0.0)


@dataclass
class SegmentResult:
    status: int
    index: int
    t: float
    x: np.ndarray
    h: float
    times: np.ndarray
    states: np.ndarray
    n_steps: int


def _advance(model, x0, u, t0, t1, s: IntegratorSettings, record, h0=0.0,
             stop: _Stop | None = None, event: _Event | None = None) -> SegmentResult:
    step, order = K.STEPPERS[s.scheme(model)]
    stop = stop or _Stop.none(model.dim)
    ev = event or _Event.off(model.dim)
    out = K.drive(step, order, model.rhs, np.ascontiguousarray(x0, float),
                  np.ascontiguousarray(u, float), model.p, float(t0), float(t1), float(h0),
                  s.rtol, s.atol, float(s.max_step), bool(record), int(s.max_steps),
                  stop.eq, stop.radius, stop.resid, float(stop.stall),
                  event is not None, ev.corner, ev.signs, float(ev.sigma), float(ev.eps),
                  float(ev.resolution))
    return SegmentResult(*out)


def run_schedule(model: ModelDef, x0, schedule: InputSchedule, t0: float, t1: float,
                 s: IntegratorSettings, record: bool = True, stop: _Stop | None = None,
                 event: _Event | None = None, stop_from: float | None = None):
    """Integrate across the pieces of ``schedule``.

    Stop tests apply only on pieces starting at or after ``stop_from``
    (default: everywhere).  Returns ``(status, index, trajectory)``.
    """
    x = np.asarray(x0, float)
    if x.shape != (model.dim,):
        raise ValueError(f"initial state has shape {x.shape}, expected ({model.dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state is not finite")
    times = [np.array([t0])]
    states = [x[None, :]]
    h = 0.0
    for a, b, u in schedule.pieces(t0, t1):
        use_stop = stop if (stop_from is None or a >= stop_from) else None
        r = _advance(model, x, u, a, b, s, record, h, use_stop, event)
        times.append(r.times[1:])
        states.append(r.states[1:])
        x, h = r.x, r.h
        if r.status < 0:
            traj = Trajectory(np.concatenate(times), np.concatenate(states))
            where = f"t = {r.t:.6g}"
            if r.status == K.NON_FINITE:
                raise NonFiniteState(f"{model.name}: state became non-finite at {where}", traj)
            raise StepSizeCollapse(f"{model.name}: step size collapsed at {where}", traj)
        if r.status != K.REACHED_END:
            return r.status, r.index, Trajectory(np.concatenate(times), np.concatenate(states))
    return K.REACHED_END, -1, Trajectory(np.concatenate(times), np.concatenate(states))


def integrate(model: ModelDef, x0, u=None, s: IntegratorSettings | None = None,
              record: bool = True) -> Trajectory:
    """Solve ``x' = f(x, u(t))`` on ``[0, s.t_end]``.

    ``u`` may be a :class:`PulseInput`, an :class:`InputSchedule`, a
    constant vector, or ``None`` for the unforced system.  With
    ``record=False`` only the endpoints are kept.
    """
    s = s or IntegratorSettings.for_model(model)
    _, _, traj = run_schedule(model, x0, as_schedule(model, u), 0.0, s.t_end, s, record)
    return traj


def default_ball_radius(eq) -> float:
    return 1e-3 * (1.0 + float(np.linalg.norm(eq)))


def default_residual(eq) -> float:
    return 1e-6 * (1.0 + float(np.max(np.abs(eq))))


def equilibrium_stop(equilibria, ball_radius=None, residual=None, stall: float = 0.0) -> _Stop:
    eq = np.atleast_2d(np.asarray(equilibria, float))
    if eq.shape[0] == 0:
        raise ValueError("need at least one equilibrium")
    if ball_radius is None:
        rad = np.array([default_ball_radius(e) for e in eq])
    else:
        rad = np.broadcast_to(np.asarray(ball_radius, float), (eq.shape[0],)).copy()
        if np.any(rad <= 0):
            raise ValueError("ball_radius must be positive")
    if residual is None:
        res = np.array([default_residual(e) for e in eq])
    else:
        res = np.broadcast_to(np.asarray(residual, float), (eq.shape[0],)).copy()
    return _Stop(np.ascontiguousarray(eq), rad, res, float(stall))


def relax_to_equilibrium(model: ModelDef, x0, equilibria, ball_radius=None,
                         s: IntegratorSettings | None = None, residual=None,
                         record: bool = True, stall: float = 0.0):
    """Run the unforced system until it settles at one of ``equilibria``.

    Settling means being inside the ball around an equilibrium with the
    field's sup-norm below the residual threshold there.  Returns
    ``(index, trajectory)`` with ``index`` ``None`` on timeout (or when the
    optional ``stall`` test detects convergence somewhere else).
    """
    s = s or IntegratorSettings.for_model(model)
    stop = equilibrium_stop(equilibria, ball_radius, residual, stall)
    status, idx, traj = run_schedule(model, x0, as_schedule(model, None), 0.0, s.t_end, s,
                                     record, stop)
    return (idx if status == K.HIT_EQUILIBRIUM else None), traj


def map_jobs(fn: Callable, items: Iterable, jobs: int | None = 1) -> list:
    """``[fn(i) for i in items]``, threaded when ``jobs > 1``; order preserved."""
    items = list(items)
    if not jobs or jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
