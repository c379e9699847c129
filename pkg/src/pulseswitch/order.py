"""Orthant orders and sampled Kamke-Mueller certificates."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .models import Box, ModelDef, numeric_jacobian


@dataclass(frozen=True)
class OrthantOrder:
    """Order induced by the cone ``P_x R^n_+`` with ``P_x = diag((-1)^eps)``."""

    state_signs: tuple[int, ...]
    input_signs: tuple[int, ...] = (0,)

    def __post_init__(self):
        eps = tuple(int(v) for v in self.state_signs)
        delta = tuple(int(v) for v in self.input_signs)
        if any(v not in (0, 1) for v in eps + delta):
            raise ValueError("orthant sign entries must be 0 or 1")
        object.__setattr__(self, "state_signs", eps)
        object.__setattr__(self, "input_signs", delta)

    @classmethod
    def positive(cls, n: int, m: int = 1) -> "OrthantOrder":
        return cls((0,) * n, (0,) * m)

    @property
    def Px(self) -> np.ndarray:
        return 1.0 - 2.0 * np.asarray(self.state_signs, float)

    @property
    def Pu(self) -> np.ndarray:
        return 1.0 - 2.0 * np.asarray(self.input_signs, float)

    def flipped(self) -> "OrthantOrder":
        """The same cone with reversed orientation."""
        return OrthantOrder(tuple(1 - e for e in self.state_signs),
                            tuple(1 - d for d in self.input_signs))

    def leq(self, x, y) -> bool:
        return leq(self, x, y)

    def to_dict(self) -> dict:
        return {"eps": list(self.state_signs), "delta": list(self.input_signs)}


def leq(o: OrthantOrder, x, y, tol: float = 0.0) -> bool:
    """``x`` precedes ``y``: ``P_x (y - x) >= 0`` componentwise."""
    d = o.Px * (np.asarray(y, float) - np.asarray(x, float))
    if d.shape != (len(o.state_signs),):
        raise ValueError("state dimension does not match the order")
    return bool(np.all(d >= -tol))


def lt(o: OrthantOrder, x, y, tol: float = 0.0) -> bool:
    return leq(o, x, y, tol) and not np.array_equal(np.asarray(x, float), np.asarray(y, float))


def in_interval(o: OrthantOrder, lo, z, hi, tol: float = 0.0) -> bool:
    return leq(o, lo, z, tol) and leq(o, z, hi, tol)


@dataclass(frozen=True, eq=False)
class Violation:
    x: np.ndarray
    u: np.ndarray
    entry: tuple  # ("x" | "u", i, j)
    value: float

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "u": self.u.tolist(), "entry": list(self.entry),
                "value": self.value}


@dataclass(frozen=True, eq=False)
class MonotonicityReport:
    holds: bool
    violations: tuple[Violation, ...]
    samples_checked: int
    order: OrthantOrder
    n_violations: int = 0

    def to_dict(self) -> dict:
        return {"holds": self.holds, "samples_checked": self.samples_checked,
                "n_violations": self.n_violations, "order": self.order.to_dict(),
                "violations": [v.to_dict() for v in self.violations]}


def _u_bounds(u_range, m: int) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(u_range, float)
    if arr.shape == (2,):
        arr = np.tile(arr, (m, 1))
    if arr.shape != (m, 2) or np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError(f"u_range must be an interval or an ({m}, 2) array of intervals")
    return arr[:, 0], arr[:, 1]


def sample_points(model: ModelDef, domain: Box | None, u_range, n_samples: int, seed: int = 0):
    """Scrambled Sobol points in ``domain x u_range``.

    Every fourth state point is projected onto a face of the box so that
    boundary behaviour is exercised; the box corners come first.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    box = domain or model.sample_box
    if not box.bounded:
        box = box.intersect(model.sample_box)
    n, m = model.dim, model.n_inputs
    ulo, uhi = _u_bounds(u_range, m)
    sob = qmc.Sobol(n + m, scramble=True, seed=seed)
    raw = sob.random_base2(max(0, int(np.ceil(np.log2(n_samples)))))[:n_samples]
    X = box.lo + raw[:, :n] * (box.hi - box.lo)
    U = ulo + raw[:, n:] * (uhi - ulo)
    rng = np.random.default_rng(seed)
    for k in range(3, n_samples, 4):
        i = rng.integers(n)
        X[k, i] = box.lo[i] if rng.random() < 0.5 else box.hi[i]
    n_corner = min(2 ** n, n_samples // 4) if n <= 10 else 0
    for k in range(n_corner):
        bits = [(k >> i) & 1 for i in range(n)]
        X[k] = np.where(bits, box.hi, box.lo)
    return X, U


def _jacobians(model: ModelDef, X, U):
    return [numeric_jacobian(model, x, u) for x, u in zip(X, U)]


def _tol(J) -> float:
    return 1e-9 * (1.0 + float(np.max(np.abs(J))))


def check_kamke_muller(model: ModelDef, o: OrthantOrder, domain: Box | None = None,
                       u_range=(0.0, 1.0), n_samples: int = 2000, seed: int = 0,
                       max_recorded: int = 50) -> MonotonicityReport:
    """Sampled check of the off-diagonal and input sign conditions."""
    n, m = model.dim, model.n_inputs
    if len(o.state_signs) != n or len(o.input_signs) != m:
        raise ValueError("order dimensions do not match the model")
    X, U = sample_points(model, domain, u_range, n_samples, seed)
    Px, Pu = o.Px, o.Pu
    S = np.concatenate([np.outer(Px, Px), np.outer(Px, Pu)], axis=1)
    mask = np.ones((n, n + m), bool)
    mask[np.arange(n), np.arange(n)] = False
    recorded: list[Violation] = []
    count = 0
    for x, u in zip(X, U):
        J = numeric_jacobian(model, x, u)
        signed = S * J
        bad = mask & (signed < -_tol(J))
        if bad.any():
            for i, j in zip(*np.nonzero(bad)):
                count += 1
                if len(recorded) < max_recorded:
                    entry = ("x", int(i), int(j)) if j < n else ("u", int(i), int(j - n))
                    recorded.append(Violation(x.copy(), u.copy(), entry, float(J[i, j])))
    return MonotonicityReport(count == 0, tuple(recorded), n_samples, o, count)


def sign_pattern(model: ModelDef, domain: Box | None = None, u_range=(0.0, 1.0),
                 n_samples: int = 2000, seed: int = 0) -> np.ndarray:
    """Observed signs of ``[df/dx | df/du]``: +1, -1, 0 (never nonzero) or 2 (both)."""
    X, U = sample_points(model, domain, u_range, n_samples, seed)
    n, m = model.dim, model.n_inputs
    pos = np.zeros((n, n + m), bool)
    neg = np.zeros((n, n + m), bool)
    for x, u in zip(X, U):
        J = numeric_jacobian(model, x, u)
        t = _tol(J)
        pos |= J > t
        neg |= J < -t
    out = np.where(pos, 1, 0) + np.where(neg, -1, 0)
    out[pos & neg] = 2
    return out


def orthant_from_signs(signs: np.ndarray, n: int) -> OrthantOrder | None:
    """Two-colour the interaction graph; ``None`` on mixed signs or an odd cycle."""
    m = signs.shape[1] - n
    nodes = n + m
    adj: list[list[tuple[int, int]]] = [[] for _ in range(nodes)]
    for i in range(n):
        for j in range(n + m):
            if j == i:
                continue
            s = signs[i, j]
            if s == 2:
                return None
            if s == 0:
                continue
            parity = 0 if s > 0 else 1
            adj[i].append((j, parity))
            adj[j].append((i, parity))
    colour = [-1] * nodes
    for root in range(nodes):
        if colour[root] >= 0:
            continue
        colour[root] = 0
        queue = deque([root])
        while queue:
            a = queue.popleft()
            for b, parity in adj[a]:
                want = colour[a] ^ parity
                if colour[b] < 0:
                    colour[b] = want
                    queue.append(b)
                elif colour[b] != want:
                    return None
    return OrthantOrder(tuple(colour[:n]), tuple(colour[n:]))


def infer_orthant(model: ModelDef, domain: Box | None = None, u_range=(0.0, 1.0),
                  n_samples: int = 2000, seed: int = 0) -> OrthantOrder | None:
    """Orthant order under which the sampled Jacobians are cooperative, if any.

    The first state coordinate is fixed to the positive orientation.
    """
    return orthant_from_signs(sign_pattern(model, domain, u_range, n_samples, seed), model.dim)
