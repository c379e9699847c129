"""Equilibria, their stability, and the constant-input bifurcation scan."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import DomainError, IntegrationError, NoBifurcationInRange, NoEquilibriumFound
from .models import Box, ModelDef, state_jacobian
from .ode_core import (IntegratorSettings, InputSchedule, _Stop, run_schedule)
from .order import OrthantOrder

STABILITY_BAND = 1e-8


@dataclass(frozen=True, eq=False)
class Equilibrium:
    state: np.ndarray
    stable: bool
    eigen_real_max: float
    marginal: bool = False

    def to_dict(self) -> dict:
        return {"state": self.state.tolist(), "stable": self.stable,
                "eigen_real_max": self.eigen_real_max, "marginal": self.marginal}


@dataclass(frozen=True, eq=False)
class EquilibriumSet:
    points: tuple[Equilibrium, ...]
    u: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def stable(self) -> list[Equilibrium]:
        return [p for p in self.points if p.stable]

    @property
    def unstable(self) -> list[Equilibrium]:
        return [p for p in self.points if not p.stable]

    def to_dict(self) -> dict:
        return {"u": self.u.tolist(), "points": [p.to_dict() for p in self.points]}


def _residual_tol(x) -> float:
    return 1e-9 * (1.0 + float(np.max(np.abs(x))))


def newton(model: ModelDef, x0, u, box: Box | None = None, max_iter: int = 50):
    """Damped Newton on ``f(x, u) = 0`` with backtracking; ``None`` on failure.

    Iterates are projected onto ``box`` when given.
    """
    rhs, p = model.rhs, model.p
    u = np.ascontiguousarray(u, float)
    x = np.array(x0, float)
    lo = hi = None
    if box is not None:
        lo, hi = box.lo, box.hi
        x = np.clip(x, lo, hi)
    try:
        fx = rhs(x, u, p)
        r = np.linalg.norm(fx)
        for _ in range(max_iter):
            if np.max(np.abs(fx)) < _residual_tol(x):
                return x
            J = state_jacobian(model, x, u)
            try:
                dx = np.linalg.solve(J, -fx)
            except np.linalg.LinAlgError:
                dx = np.linalg.lstsq(J, -fx, rcond=None)[0]
            lam = 1.0
            while lam > 1e-4:
                xn = x + lam * dx
                if lo is not None:
                    xn = np.clip(xn, lo, hi)
                fn = rhs(xn, u, p)
                rn = np.linalg.norm(fn)
                if np.isfinite(rn) and rn < (1.0 - 1e-4 * lam) * r:
                    break
                lam *= 0.5
            else:
                return None
            x, fx, r = xn, fn, rn
        return x if np.max(np.abs(fx)) < _residual_tol(x) else None
    except DomainError:
        return None


def classify(model: ModelDef, x, u) -> Equilibrium:
    J = state_jacobian(model, x, u)
    re = float(np.max(np.linalg.eigvals(J).real))
    marginal = abs(re) <= STABILITY_BAND
    if marginal:
        warnings.warn(f"{model.name}: equilibrium {x} is near-marginal (max Re = {re:.3g})",
                      RuntimeWarning, stacklevel=3)
    return Equilibrium(np.asarray(x, float), bool(re < -STABILITY_BAND), re, marginal)


def find_steady_states(model: ModelDef, u_const=None, domain: Box | None = None,
                       n_starts: int = 64, seed: int = 0, merge_radius: float = 1e-6,
                       extra_starts=(), flow_starts: int = 16) -> EquilibriumSet:
    """Multi-start Newton from a scrambled Halton design over the sampling box.

    The first ``flow_starts`` design points are additionally pushed along the
    flow before Newton; this catches stable states whose basin of Newton
    convergence is thin (stiff fast-slow models).
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    u = np.zeros(model.n_inputs) if u_const is None else np.atleast_1d(np.asarray(u_const, float))
    domain = domain or model.domain
    box = domain if domain.bounded else domain.intersect(model.sample_box)
    starts = qmc.scale(qmc.Halton(model.dim, seed=seed).random(n_starts), box.lo, box.hi)
    if flow_starts > 0:
        s = IntegratorSettings.for_model(model)
        flowed = []
        for x0 in starts[:flow_starts]:
            try:
                flowed.append(settle(model, x0, u, s, polish=False))
            except (IntegrationError, DomainError):
                continue
        if flowed:
            starts = np.vstack([np.array(flowed), starts])
    if len(extra_starts):
        starts = np.vstack([np.atleast_2d(np.asarray(extra_starts, float)), starts])
    found: list[np.ndarray] = []
    for x0 in starts:
        x = newton(model, x0, u, domain)
        if x is None or not domain.contains(x, tol=1e-9):
            continue
        if any(np.linalg.norm(x - y) <= merge_radius * (1.0 + np.linalg.norm(y)) for y in found):
            continue
        found.append(x)
    if not found:
        raise NoEquilibriumFound(f"{model.name}: no start converged (u = {u.tolist()})")
    found.sort(key=lambda v: tuple(v))
    return EquilibriumSet(tuple(classify(model, x, u) for x in found), u)


# ---------------------------------------------------------------------------
# bifurcation scan


@dataclass(frozen=True, eq=False)
class BifurcationScan:
    mu_grid: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    mu_min_bracket: tuple[float, float]
    s0: np.ndarray
    s1: np.ndarray

    @property
    def mu_min(self) -> float:
        return 0.5 * (self.mu_min_bracket[0] + self.mu_min_bracket[1])

    def to_csv(self) -> str:
        n = self.xi.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mu"] + [f"xi_{i + 1}" for i in range(n)] + [f"eta_{i + 1}" for i in range(n)])
        for mu, a, b in zip(self.mu_grid, self.xi, self.eta):
            w.writerow([repr(float(mu))] + [repr(float(v)) for v in a] + [repr(float(v)) for v in b])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"mu_min_bracket": list(self.mu_min_bracket), "mu_min": self.mu_min,
                "s0": self.s0.tolist(), "s1": self.s1.tolist(), "n_grid": int(self.mu_grid.size)}


def settle(model: ModelDef, x0, u, s: IntegratorSettings, polish: bool = True) -> np.ndarray:
    """Endpoint of the constant-input flow from ``x0``, Newton-polished when close."""
    u = np.atleast_1d(np.asarray(u, float))
    stop = _Stop(np.empty((0, model.dim)), np.empty(0), np.empty(0), stall=1e-10)
    _, _, traj = run_schedule(model, x0, InputSchedule.constant(u), 0.0, s.t_end, s,
                              record=False, stop=stop)
    x = traj.final
    if polish:
        y = newton(model, x, u, model.domain, max_iter=20)
        if y is not None and np.linalg.norm(y - x) <= 1e-3 * (1.0 + np.linalg.norm(x)):
            return y
    return x


def input_vector(model: ModelDef, mu: float, channel: int = 0) -> np.ndarray:
    u = np.zeros(model.n_inputs)
    u[channel] = mu
    return u


def bifurcation_scan(model: ModelDef, order: OrthantOrder | None, mu_range, tol: float = 1e-3,
                     n_grid: int = 61, channel: int = 0, jump_factor: float = 10.0,
                     s: IntegratorSettings | None = None, s0=None, s1=None) -> BifurcationScan:
    """Continue xi (from s0) and eta (from s1) in mu and bracket the jump of xi.

    ``order`` only orients the choice of s0 and s1 when they are not given.
    """
    from .separatrix import switch_pair

    lo, hi = float(mu_range[0]), float(mu_range[1])
    if not hi > lo:
        raise ValueError("mu_range must be increasing")
    if not tol > 0:
        raise ValueError("tol must be positive")
    s = s or IntegratorSettings.for_model(model, t_end=max(2000.0, model.hints.get("t_end", 0.0)))
    if s0 is None or s1 is None:
        base = model
        if lo != 0.0:
            raise ValueError("give s0 and s1 explicitly when the scan does not start at mu = 0")
        s0, s1 = switch_pair(base, channel=channel, order=order)
    s0 = np.asarray(s0, float)
    s1 = np.asarray(s1, float)

    grid = np.linspace(lo, hi, n_grid)
    xi = [settle(model, s0, input_vector(model, lo, channel), s)]
    eta = [settle(model, s1, input_vector(model, lo, channel), s)]
    steps: list[float] = []
    jump_at = None
    for k in range(1, n_grid):
        u = input_vector(model, grid[k], channel)
        xk = settle(model, xi[-1], u, s)
        ek = settle(model, eta[-1], u, s)
        d = float(np.linalg.norm(xk - xi[-1]))
        floor = 1e-6 * (1.0 + float(np.linalg.norm(xk)))
        merged = np.linalg.norm(xk - ek) <= 1e-3 * (1.0 + np.linalg.norm(ek)) \
            and np.linalg.norm(xi[-1] - eta[-1]) > 1e-3 * (1.0 + np.linalg.norm(eta[-1]))
        xi.append(xk)
        eta.append(ek)
        # the first step has no local variation to compare against
        jumped = bool(steps) and d > jump_factor * max(max(steps[-2:]), floor)
        if merged or jumped:
            jump_at = k
            break
        steps.append(d)
    if jump_at is None:
        raise NoBifurcationInRange(f"{model.name}: xi does not jump on [{lo}, {hi}]")

    a, b = grid[jump_at - 1], grid[jump_at]
    xa, xb = xi[jump_at - 1], xi[jump_at]
    while b - a > tol:
        c = 0.5 * (a + b)
        xc = settle(model, xa, input_vector(model, c, channel), s)
        if np.linalg.norm(xc - xb) < np.linalg.norm(xc - xa):
            b = c
        else:
            a, xa = c, xc
    # the tail of the grid beyond the jump is not needed for the bracket
    return BifurcationScan(grid[: jump_at + 1], np.array(xi), np.array(eta), (float(a), float(b)),
                           s0, s1)
