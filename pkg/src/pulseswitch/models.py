"""Benchmark vector fields and numeric Jacobians.

Every field is a numba-compiled function ``rhs(x, u, p)`` with ``p`` the
parameter vector in the order of :attr:`ModelDef.param_names`.  A
:class:`ModelDef` bundles the field with its parameter values, dimensions
and domain box; it is immutable, so derived systems (parameter variants,
bounding systems) are created with :meth:`ModelDef.with_params` or the
constructors in :mod:`pulseswitch.bounding`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np
from numba import njit

from .errors import ConfigError, DomainError, UnknownParameter


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; ``upper`` entries may be ``inf``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError("box bounds differ in length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_arrays(cls, lower, upper) -> "Box":
        return cls(tuple(np.asarray(lower, float)), tuple(np.asarray(upper, float)))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def bounded(self) -> bool:
        return all(math.isfinite(v) for v in self.lower + self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def intersect(self, other: "Box") -> "Box":
        return Box.from_arrays(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True, eq=False)
class ModelDef:
    """An ``n``-state, ``m``-input vector field with named parameters.

    ``sample_box`` is a finite box inside ``domain`` used wherever points
    have to be drawn (Newton starts, sign sampling).  ``hints`` carries
    per-model defaults such as the relaxation horizon or integration
    tolerances; nothing depends on it for correctness.
    """

    name: str
    dim: int
    n_inputs: int
    param_names: tuple[str, ...]
    params: Mapping[str, float]
    domain: Box
    rhs: Callable = field(repr=False)
    stiff: bool = False
    sample_box: Box | None = None
    hints: Mapping[str, object] = field(default_factory=dict, repr=False)
    input_matrix: tuple = ((1.0,),)
    domain_fn: Callable | None = field(default=None, repr=False)
    packer: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 1 or self.n_inputs < 1:
            raise ValueError("dim and n_inputs must be positive")
        missing = [k for k in self.param_names if k not in self.params]
        if missing:
            raise ConfigError(f"{self.name}: missing parameters {missing}")
        extra = [k for k in self.params if k not in self.param_names]
        if extra:
            raise UnknownParameter(f"{self.name}: unknown parameters {extra}")
        object.__setattr__(self, "params",
                           MappingProxyType({k: float(self.params[k]) for k in self.param_names}))
        object.__setattr__(self, "hints", MappingProxyType(dict(self.hints)))
        if self.domain.dim != self.dim:
            raise ValueError("domain dimension mismatch")
        if self.sample_box is None:
            hi = np.where(np.isfinite(self.domain.hi), self.domain.hi, self.domain.lo + 100.0)
            lo = np.where(np.isfinite(self.domain.lo), self.domain.lo, hi - 200.0)
            object.__setattr__(self, "sample_box", Box.from_arrays(lo, hi))

    @cached_property
    def p(self) -> np.ndarray:
        """Packed parameter vector passed to ``rhs``."""
        if self.packer is not None:
            return np.asarray(self.packer(self.params), float)
        return np.array([self.params[k] for k in self.param_names], float)

    @cached_property
    def input_columns(self) -> np.ndarray:
        """Nominal direction in which each input channel pushes the state."""
        return np.asarray(self.input_matrix, float).reshape(self.dim, self.n_inputs)

    def with_params(self, **values) -> "ModelDef":
        unknown = [k for k in values if k not in self.param_names]
        if unknown:
            raise UnknownParameter(f"{self.name}: unknown parameters {unknown}")
        params = dict(self.params)
        params.update({k: float(v) for k, v in values.items()})
        domain = self.domain_fn(params) if self.domain_fn is not None else self.domain
        sample_box = self.sample_box
        if self.domain_fn is not None:
            sample_box = None
            if "sample_box_fn" in self.hints:
                sample_box = self.hints["sample_box_fn"](params)
        return replace(self, params=params, domain=domain, sample_box=sample_box)

    def with_domain(self, domain: Box, sample_box: Box | None = None) -> "ModelDef":
        if sample_box is None and domain.bounded:
            sample_box = domain
        return replace(self, domain=domain, sample_box=sample_box or self.sample_box,
                       domain_fn=None)

    def __call__(self, x, u=None) -> np.ndarray:
        return eval_field(self, x, u)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "n_inputs": self.n_inputs,
            "params": dict(self.params),
            "domain": self.domain.to_dict(),
            "stiff": self.stiff,
        }


# ---------------------------------------------------------------------------
# compiled right-hand sides


@njit(cache=True, nogil=True)
def _hill_rep(x, k, n):
    r = x / k
    if r < 0.0 and n != np.floor(n):
        raise DomainError("negative state in a Hill term with non-integer exponent")
    return 1.0 / (1.0 + r ** n)


@njit(cache=True, nogil=True)
def decay_rhs(x, u, p):
    out = np.empty(1)
    out[0] = -p[0] * x[0] + u[0]
    return out


@njit(cache=True, nogil=True)
def toggle_rhs(x, u, p):
    out = np.empty(2)
    out[0] = p[0] * _hill_rep(x[1], p[1], p[2]) + p[3] - p[4] * x[0] + u[0]
    out[1] = p[5] * _hill_rep(x[0], p[6], p[7]) + p[8] - p[9] * x[1]
    return out


@njit(cache=True, nogil=True)
def lorenz_rhs(x, u, p):
    sigma, rho, beta = p[0], p[1], p[2]
    out = np.empty(3)
    out[0] = sigma * (x[1] - x[0]) + u[0]
    out[1] = x[0] * (rho - x[2]) - x[1] + u[0]
    out[2] = x[0] * x[1] - beta * x[2]
    return out


@njit(cache=True, nogil=True)
def perturbed3_rhs(x, u, p):
    if x[0] + 1.0 == 0.0:
        raise DomainError("Michaelis-Menten term singular at x1 = -1")
    out = np.empty(3)
    out[0] = 1000.0 / (1.0 + x[2] ** 2) - 0.4 * x[0]
    out[1] = 1000.0 / (1.0 + x[0] ** 4) - 4.0 * x[1] + u[0]
    out[2] = p[0] + p[1] * x[0] + p[2] * x[0] / (x[0] + 1.0) + 5.0 * x[1] - 0.3 * x[2]
    return out


@njit(cache=True, nogil=True)
def toxin_antitoxin_rhs(x, u, p):
    sigma_t, k0, beta_m, beta_c, sigma_a, gamma_a, k_t, k_tt, eps = (
        p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8])
    t_tot, a_tot, a_f, t_f = x[0], x[1], x[2], x[3]
    den = (1.0 + a_f * t_f / k0) * (1.0 + beta_m * t_f)
    complex1 = a_f * t_f / k_t
    complex2 = a_f * t_f * t_f / (k_t * k_tt)
    out = np.empty(4)
    out[0] = sigma_t / den - t_tot / (1.0 + beta_c * t_f)
    out[1] = sigma_a / den - gamma_a * a_tot + u[0]
    out[2] = (a_tot - (a_f + complex1 + complex2)) / eps
    out[3] = (t_tot - (t_f + complex1 + 2.0 * complex2)) / eps
    return out


@njit(cache=True, nogil=True)
def mass_action_rhs(x, u, p):
    k1, k2, k3, k4, beta = p[0], p[1], p[2], p[3], p[4]
    out = np.empty(2)
    out[0] = 2.0 * k1 * x[1] - k2 * x[0] ** 2 - k3 * x[0] * x[1] - k4 * x[0] + beta * u[0]
    out[1] = k2 * x[0] ** 2 - k1 * x[1]
    return out


@njit(cache=True, nogil=True)
def repressilator8_rhs(x, u, p):
    out = np.empty(8)
    for i in range(8):
        prev = x[(i + 7) % 8]
        out[i] = p[0] * _hill_rep(prev, p[1], p[2]) + p[3] - p[4] * x[i]
    out[0] += u[0]
    out[1] += u[1]
    return out


# ---------------------------------------------------------------------------
# registry

INF = math.inf


def _nonneg(n):
    return Box((0.0,) * n, (INF,) * n)


def _mass_action_domain(params):
    return Box((0.0, 0.0), (2.0 * params["k1"] / params["k3"], INF))


def _mass_action_sample_box(params):
    x1_max = 2.0 * params["k1"] / params["k3"]
    return Box((0.0, 0.0), (x1_max, params["k2"] * x1_max ** 2 / params["k1"]))


def _toggle(params):
    names = tuple(f"p{i}" for i in range(1, 11))
    defaults = dict(zip(names, (40.0, 1.0, 4.0, 0.05, 1.0, 30.0, 1.0, 4.0, 0.1, 1.0)))
    return ModelDef(
        name="toggle", dim=2, n_inputs=1, param_names=names,
        params={**defaults, **params}, domain=_nonneg(2), rhs=toggle_rhs,
        sample_box=Box((0.0, 0.0), (45.0, 35.0)),
        input_matrix=((1.0,), (0.0,)),
        hints={"t_end": 200.0, "mu_up": 100.0, "tau_range": (0.5, 50.0)},
    )


def _decay(params):
    return ModelDef(
        name="decay", dim=1, n_inputs=1, param_names=("k",),
        params={"k": 1.0, **params}, domain=Box((-INF,), (INF,)), rhs=decay_rhs,
        sample_box=Box((-10.0,), (10.0,)), input_matrix=((1.0,),),
    )


def _lorenz(params):
    return ModelDef(
        name="lorenz", dim=3, n_inputs=1, param_names=("sigma", "rho", "beta"),
        params={"sigma": 10.0, "rho": 21.0, "beta": 8.0 / 3.0, **params},
        domain=Box((-INF,) * 3, (INF,) * 3), rhs=lorenz_rhs,
        sample_box=Box((-30.0, -30.0, -30.0), (30.0, 30.0, 30.0)),
        input_matrix=((1.0,), (1.0,), (0.0,)),
        hints={"t_end": 600.0, "rtol": 1e-11, "atol": 1e-12, "mu_up": 60.0},
    )


def _perturbed3_freeze(params, i, j, value):
    # x1 enters only the third equation, through p2 x1 + p3 x1 / (x1 + 1)
    if (i, j) != (2, 0):
        return None
    out = dict(params)
    out["p1"] = params["p1"] + params["p2"] * value + params["p3"] * value / (value + 1.0)
    out["p2"] = out["p3"] = 0.0
    return out


def _perturbed3(params):
    return ModelDef(
        name="perturbed3", dim=3, n_inputs=1, param_names=("p1", "p2", "p3"),
        params={"p1": 0.0, "p2": 0.1, "p3": 0.0, **params},
        domain=_nonneg(3), rhs=perturbed3_rhs,
        sample_box=Box((0.0, 0.0, 0.0), (2600.0, 260.0, 4400.0)),
        input_matrix=((0.0,), (1.0,), (0.0,)),
        hints={"t_end": 300.0, "mu_up": 400.0, "tau_range": (5.0, 40.0),
               "freeze": _perturbed3_freeze},
    )


def _toxin_antitoxin(params):
    names = ("sigma_T", "K0", "beta_M", "beta_C", "sigma_A", "Gamma_A", "K_T", "K_TT", "eps")
    defaults = dict(zip(names, (166.28, 1.0, 0.16, 0.16, 100.0, 0.2, 0.3, 0.3, 1e-6)))
    return ModelDef(
        name="toxin_antitoxin", dim=4, n_inputs=1, param_names=names,
        params={**defaults, **params}, domain=_nonneg(4), rhs=toxin_antitoxin_rhs,
        stiff=True,
        sample_box=Box((0.0, 0.0, 0.0, 0.0), (250.0, 550.0, 300.0, 250.0)),
        input_matrix=((0.0,), (1.0,), (0.0,), (0.0,)),
        hints={"t_end": 1500.0, "rtol": 1e-6, "atol": 1e-8, "mu_up": 60.0},
    )


def _mass_action(params):
    merged = {"k1": 8.0, "k2": 1.0, "k3": 1.0, "k4": 1.0, "beta": 1.0, **params}
    return ModelDef(
        name="mass_action", dim=2, n_inputs=1,
        param_names=("k1", "k2", "k3", "k4", "beta"), params=merged,
        domain=_mass_action_domain(merged), rhs=mass_action_rhs,
        sample_box=_mass_action_sample_box(merged),
        input_matrix=((1.0,), (0.0,)),
        domain_fn=_mass_action_domain,
        hints={"t_end": 200.0, "mu_up": 100.0, "tau_range": (0.1, 10.0),
               "sample_box_fn": _mass_action_sample_box},
    )


def _repressilator8(params):
    names = ("p1", "p2", "p3", "p4", "p5")
    defaults = dict(zip(names, (40.0, 1.0, 3.0, 0.5, 1.0)))
    cols = [[0.0, 0.0] for _ in range(8)]
    cols[0][0] = 1.0
    cols[1][1] = 1.0
    return ModelDef(
        name="repressilator8", dim=8, n_inputs=2, param_names=names,
        params={**defaults, **params}, domain=_nonneg(8), rhs=repressilator8_rhs,
        sample_box=Box((0.0,) * 8, (45.0,) * 8),
        input_matrix=tuple(tuple(c) for c in cols),
        hints={"t_end": 300.0, "mu_up": 200.0, "tau_range": (0.5, 20.0)},
    )


# ---------------------------------------------------------------------------
# user models assembled from a fixed term library

TERM_KINDS = {"const": 0, "linear": 1, "hill_rep": 2, "mass_action": 3,
              "michaelis_menten": 4, "input": 5}
_TERM_WIDTH = 7  # kind, equation, var1, var2, coef, k, n


@njit(cache=True, nogil=True)
def term_rhs(x, u, p):
    n_terms = p.size // 7 - 1
    n = int(p[0])
    out = np.zeros(n)
    for t in range(n_terms):
        base = 7 * (t + 1)
        kind = int(p[base])
        eq = int(p[base + 1])
        a = int(p[base + 2])
        b = int(p[base + 3])
        c, k, h = p[base + 4], p[base + 5], p[base + 6]
        if kind == 0:
            out[eq] += c
        elif kind == 1:
            out[eq] += c * x[a]
        elif kind == 2:
            out[eq] += c * _hill_rep(x[a], k, h)
        elif kind == 3:
            out[eq] += c * x[a] * x[b]
        elif kind == 4:
            if x[a] + k == 0.0:
                raise DomainError("Michaelis-Menten term singular")
            out[eq] += c * x[a] / (x[a] + k)
        else:
            out[eq] += c * u[a]
    return out


def _term_value(v, params, what, problems):
    if isinstance(v, str):
        if v not in params:
            problems.append(f"{what} refers to undefined parameter {v!r}")
            return 0.0
        return v
    try:
        return float(v)
    except (TypeError, ValueError):
        problems.append(f"{what} must be a number or a parameter name")
        return 0.0


def custom_model(spec: Mapping) -> ModelDef:
    """Model from a term table.

    ``spec`` holds ``dim``, ``n_inputs``, ``params`` and a list of ``terms``;
    each term has ``kind`` (one of :data:`TERM_KINDS`), the target
    equation ``eq``, its variable(s) ``var`` / ``var2`` (the input channel
    for ``input`` terms) and ``coef``, ``k``, ``n`` given as numbers or
    parameter names.  All indices are 0-based.
    """
    problems: list[str] = []
    try:
        n = int(spec["dim"])
        m = int(spec.get("n_inputs", 1))
    except (KeyError, TypeError, ValueError):
        raise ConfigError("custom model needs an integer 'dim'") from None
    params = {str(k): float(v) for k, v in spec.get("params", {}).items()}
    rows = []
    for idx, term in enumerate(spec.get("terms", [])):
        what = f"term {idx}"
        kind = term.get("kind")
        if kind not in TERM_KINDS:
            problems.append(f"{what}: unknown kind {kind!r}; choose from {sorted(TERM_KINDS)}")
            continue
        eq, a = term.get("eq"), term.get("var", 0)
        b = term.get("var2", a)
        limit = m if kind == "input" else n
        if not isinstance(eq, int) or not 0 <= eq < n:
            problems.append(f"{what}: 'eq' must be an equation index below {n}")
        if kind != "const" and (not isinstance(a, int) or not 0 <= a < limit):
            problems.append(f"{what}: 'var' must be an index below {limit}")
        if kind == "mass_action" and (not isinstance(b, int) or not 0 <= b < n):
            problems.append(f"{what}: 'var2' must be a state index below {n}")
        vals = [_term_value(term.get(key, dflt), params, f"{what}.{key}", problems)
                for key, dflt in (("coef", 1.0), ("k", 1.0), ("n", 1.0))]
        rows.append((TERM_KINDS[kind], eq, a, b, *vals))
    if not rows:
        problems.append("custom model has no terms")
    if problems:
        raise ConfigError(problems)
    table = tuple(rows)

    def packer(values, table=table, n=n):
        flat = [float(n)] + [0.0] * (_TERM_WIDTH - 1)
        for kind, eq, a, b, *vals in table:
            flat += [kind, eq, a, b] + [values[v] if isinstance(v, str) else v for v in vals]
        return flat

    dom = spec.get("domain")
    domain = Box(tuple(dom["lower"]), tuple(dom["upper"])) if dom else _nonneg(n)
    sb = spec.get("sample_box")
    cols = np.zeros((n, m))
    for kind, eq, a, *_ in table:
        if kind == TERM_KINDS["input"]:
            cols[eq, a] = 1.0
    return ModelDef(
        name=str(spec.get("name", "custom")), dim=n, n_inputs=m,
        param_names=tuple(params), params=params, domain=domain, rhs=term_rhs,
        stiff=bool(spec.get("stiff", False)),
        sample_box=Box(tuple(sb["lower"]), tuple(sb["upper"])) if sb else None,
        input_matrix=tuple(map(tuple, cols)), packer=packer,
        hints=dict(spec.get("hints", {})),
    )


BUILTINS: dict[str, Callable[[dict], ModelDef]] = {
    "decay": _decay,
    "toggle": _toggle,
    "lorenz": _lorenz,
    "perturbed3": _perturbed3,
    "toxin_antitoxin": _toxin_antitoxin,
    "mass_action": _mass_action,
    "repressilator8": _repressilator8,
}


def get_model(name, **params) -> ModelDef:
    """Builtin model ``name`` (or a term-table mapping) with parameter overrides."""
    if isinstance(name, Mapping):
        model = custom_model(name)
        return model.with_params(**params) if params else model
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(BUILTINS)}") from None
    model = factory({})
    return model.with_params(**params) if params else model


def eval_field(model: ModelDef, x, u=None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ValueError(f"state has shape {x.shape}, expected ({model.dim},)")
    u = np.zeros(model.n_inputs) if u is None else np.ascontiguousarray(np.atleast_1d(u), float)
    if u.shape != (model.n_inputs,):
        raise ValueError(f"input has shape {u.shape}, expected ({model.n_inputs},)")
    return model.rhs(x, u, model.p)


def numeric_jacobian(model: ModelDef, x, u=None, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian ``[df/dx | df/du]`` of shape ``(n, n + m)``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, float)
    u = np.zeros(model.n_inputs) if u is None else np.atleast_1d(np.asarray(u, float))
    z = np.concatenate([x, u])
    n = model.dim
    J = np.empty((n, z.size))
    for j in range(z.size):
        step = h * max(1.0, abs(z[j]))
        zp = z.copy()
        zm = z.copy()
        zp[j] += step
        zm[j] -= step
        J[:, j] = (eval_field(model, zp[:n], zp[n:]) - eval_field(model, zm[:n], zm[n:])) / (2 * step)
    return J


def state_jacobian(model: ModelDef, x, u=None, h: float = 1e-6) -> np.ndarray:
    return numeric_jacobian(model, x, u, h)[:, : model.dim]


def param_jacobian(model: ModelDef, x, u=None, names=None, h: float = 1e-6) -> np.ndarray:
    """Central differences of the field with respect to named parameters."""
    names = list(model.param_names if names is None else names)
    J = np.empty((model.dim, len(names)))
    for k, name in enumerate(names):
        v = model.params[name]
        step = h * max(1.0, abs(v))
        fp = eval_field(model.with_params(**{name: v + step}), x, u)
        fm = eval_field(model.with_params(**{name: v - step}), x, u)
        J[:, k] = (fp - fm) / (2 * step)
    return J
