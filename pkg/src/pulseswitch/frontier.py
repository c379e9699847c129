"""Pareto frontiers in the (mu, tau) plane and the error boxes between them.

Points are ``(mu, tau)`` pairs.  ``m_min`` holds non-switching pulses and
keeps its maximal elements; ``m_max`` holds switching pulses and keeps its
minimal elements.  Under a monotone separatrix everything below-left of an
``m_min`` point is non-switching and everything above-right of an ``m_max``
point switches; what is left in between is the undecided region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyFrontier

MAXIMAL = "maximal"
MINIMAL = "minimal"


@dataclass(frozen=True)
class Bounds:
    mu_lo: float
    mu_hi: float
    tau_lo: float
    tau_hi: float

    def __post_init__(self):
        if not (self.mu_hi >= self.mu_lo and self.tau_hi >= self.tau_lo):
            raise ValueError(f"bounds are inverted: {self}")

    @property
    def mu_span(self) -> float:
        return self.mu_hi - self.mu_lo

    @property
    def tau_span(self) -> float:
        return self.tau_hi - self.tau_lo

    def swapped(self) -> "Bounds":
        return Bounds(self.tau_lo, self.tau_hi, self.mu_lo, self.mu_hi)

    def to_dict(self) -> dict:
        return {"mu": [self.mu_lo, self.mu_hi], "tau": [self.tau_lo, self.tau_hi]}


@dataclass(frozen=True)
class Rect:
    mu_lo: float
    mu_hi: float
    tau_lo: float
    tau_hi: float

    @property
    def height(self) -> float:
        return self.mu_hi - self.mu_lo

    @property
    def width(self) -> float:
        return self.tau_hi - self.tau_lo

    def swapped(self) -> "Rect":
        return Rect(self.tau_lo, self.tau_hi, self.mu_lo, self.mu_hi)

    def to_dict(self) -> dict:
        return {"mu": [self.mu_lo, self.mu_hi], "tau": [self.tau_lo, self.tau_hi]}


@dataclass(frozen=True)
class ErrorBoxes:
    mu_err: float
    tau_err: float
    b_mu: Rect
    b_tau: Rect

    def to_dict(self) -> dict:
        return {"mu_err": self.mu_err, "tau_err": self.tau_err,
                "b_mu": self.b_mu.to_dict(), "b_tau": self.b_tau.to_dict()}


def _as_points(points) -> np.ndarray:
    arr = np.asarray(list(points), float)
    return arr.reshape(-1, 2)


def prune(points, keep: str = MAXIMAL) -> list[tuple[float, float]]:
    """Drop every point dominated by another one (set semantics), sorted by tau.

    ``keep='maximal'`` drops ``p`` when some other ``q >= p`` componentwise
    (the non-switching frontier); ``keep='minimal'`` drops ``p`` when some
    ``q <= p``.
    """
    if keep not in (MAXIMAL, MINIMAL):
        raise ValueError(f"keep must be {MAXIMAL!r} or {MINIMAL!r}")
    pts = _as_points(points)
    if pts.size == 0:
        return []
    sign = 1.0 if keep == MAXIMAL else -1.0
    q = sign * pts
    # scan by decreasing tau (then decreasing mu); a point survives if its mu
    # beats every point already seen
    idx = np.lexsort((-q[:, 0], -q[:, 1]))
    best = -np.inf
    out = []
    for k in idx:
        if q[k, 0] > best:
            best = q[k, 0]
            out.append((float(pts[k, 0]), float(pts[k, 1])))
    out.sort(key=lambda p: (p[1], p[0]))
    return out


def lower_envelope(m_min, tau: float, default: float) -> float:
    """Largest mu known to be non-switching at ``tau``."""
    best = default
    for a, t in m_min:
        if t >= tau and a > best:
            best = a
    return best


def upper_envelope(m_max, tau: float, default: float) -> float:
    """Smallest mu known to switch at ``tau``."""
    best = default
    for b, s in m_max:
        if s <= tau and b < best:
            best = b
    return best


def tau_gap(m_min, m_max, mu: float, bounds: Bounds) -> tuple[float, float]:
    """Undecided tau interval at magnitude ``mu``."""
    lo = bounds.tau_lo
    for a, t in m_min:
        if a >= mu and t > lo:
            lo = t
    hi = bounds.tau_hi
    for b, s in m_max:
        if b <= mu and s < hi:
            hi = s
    return min(lo, bounds.tau_hi), max(hi, bounds.tau_lo)


def mu_gap(m_min, m_max, tau: float, bounds: Bounds) -> tuple[float, float]:
    """Undecided mu interval at duration ``tau``."""
    lo = min(max(lower_envelope(m_min, tau, bounds.mu_lo), bounds.mu_lo), bounds.mu_hi)
    hi = max(min(upper_envelope(m_max, tau, bounds.mu_hi), bounds.mu_hi), bounds.mu_lo)
    return lo, hi


def _max_height_box(m_min: np.ndarray, m_max: np.ndarray, b: Bounds) -> Rect:
    """Tallest rectangle in the undecided region, widened over equal neighbours."""
    cuts = [b.tau_lo, b.tau_hi]
    cuts += [t for t in m_min[:, 1] if b.tau_lo < t < b.tau_hi]
    cuts += [s for s in m_max[:, 1] if b.tau_lo < s < b.tau_hi]
    cuts = np.unique(cuts)
    if cuts.size == 1:
        cuts = np.array([cuts[0], cuts[0]])
    # on the open cell (c_k, c_{k+1}) both envelopes are constant
    cells = []
    for k in range(cuts.size - 1):
        lo_t, hi_t = cuts[k], cuts[k + 1]
        vals = m_min[m_min[:, 1] >= hi_t, 0] if hi_t > lo_t else m_min[m_min[:, 1] >= lo_t, 0]
        L = max(b.mu_lo, vals.max()) if vals.size else b.mu_lo
        vals = m_max[m_max[:, 1] <= lo_t, 0]
        U = min(b.mu_hi, vals.min()) if vals.size else b.mu_hi
        L = min(L, b.mu_hi)
        U = max(U, b.mu_lo)
        cells.append((lo_t, hi_t, L, max(U, L)))
    heights = [c[3] - c[2] for c in cells]
    k = int(np.argmax(heights))
    lo_t, hi_t, L, U = cells[k]
    j = k
    while j > 0 and cells[j - 1][2] == L and cells[j - 1][3] == U:
        j -= 1
    lo_t = cells[j][0]
    j = k
    while j + 1 < len(cells) and cells[j + 1][2] == L and cells[j + 1][3] == U:
        j += 1
    hi_t = cells[j][1]
    return Rect(L, U, lo_t, hi_t)


def error_boxes_from(m_min, m_max, bounds: Bounds) -> ErrorBoxes:
    a = _as_points(m_min)
    c = _as_points(m_max)
    if a.size == 0 or c.size == 0:
        raise EmptyFrontier("error boxes need both frontiers to be nonempty")
    b_mu = _max_height_box(a, c, bounds)
    b_tau = _max_height_box(a[:, ::-1], c[:, ::-1], bounds.swapped()).swapped()
    return ErrorBoxes(b_mu.height, b_tau.width, b_mu, b_tau)


def error_boxes(est) -> ErrorBoxes:
    return error_boxes_from(est.m_min, est.m_max, est.bounds)


def relative_error(eb: ErrorBoxes, bounds: Bounds) -> float:
    if bounds.mu_span <= 0 or bounds.tau_span <= 0:
        raise ValueError("relative error needs nondegenerate bounds")
    return 0.5 * (eb.mu_err / bounds.mu_span + eb.tau_err / bounds.tau_span)


def sample_beta(a: float, b: float, support, rng: np.random.Generator, size=None):
    """Beta(a, b) variates mapped affinely onto ``support``."""
    lo, hi = float(support[0]), float(support[1])
    if not (a > 0 and b > 0):
        raise ValueError("Beta shape parameters must be positive")
    if not hi >= lo:
        raise ValueError("support must be an interval")
    return lo + (hi - lo) * rng.beta(a, b, size)


def sample_efficiency(est, n_total: int | None = None) -> float:
    """Share of generated samples that sit on one of the two frontiers."""
    n = est.n_samples if n_total is None else n_total
    if n < 1:
        raise ValueError("n_total must be >= 1")
    union = {tuple(p) for p in est.m_min} | {tuple(p) for p in est.m_max}
    return len(union) / n


@dataclass
class SeparatrixEstimate:
    """Bracketing frontiers plus the bookkeeping of how they were obtained."""

    m_min: list
    m_max: list
    bounds: Bounds
    history: list = field(default_factory=list)
    n_samples: int = 0
    samples: list = field(default_factory=list)  # (mu, tau, tag)
    violations: list = field(default_factory=list)
    algorithm: str = ""

    def add(self, mu: float, tau: float, tag: str) -> None:
        from .separatrix import REACHED_S0, REACHED_S1

        self.n_samples += 1
        self.samples.append((float(mu), float(tau), tag))
        if tag == REACHED_S1:
            self.m_max.append((float(mu), float(tau)))
        elif tag == REACHED_S0:
            self.m_min.append((float(mu), float(tau)))

    def prune(self) -> None:
        self.m_min = prune(self.m_min, MAXIMAL)
        self.m_max = prune(self.m_max, MINIMAL)

    def crossings(self) -> list[tuple[tuple, tuple]]:
        """Pairs where a non-switching point dominates a switching one."""
        out = []
        for a in self.m_min:
            for b in self.m_max:
                if a[0] >= b[0] and a[1] >= b[1]:
                    out.append((a, b))
        return out

    def error_boxes(self) -> ErrorBoxes:
        return error_boxes(self)

    def relative_error(self) -> float:
        return relative_error(self.error_boxes(), self.bounds)

    @property
    def undecided(self) -> list:
        from .separatrix import UNDECIDED

        return [(m, t) for m, t, tag in self.samples if tag == UNDECIDED]

    def to_csv(self) -> str:
        rows = ["tau,mu,label"]
        rows += [f"{t!r},{m!r},min" for m, t in self.m_min]
        rows += [f"{t!r},{m!r},max" for m, t in self.m_max]
        rows += [f"{t!r},{m!r},undecided" for m, t in self.undecided]
        return "\n".join(rows) + "\n"

    def to_dict(self) -> dict:
        d = {
            "algorithm": self.algorithm,
            "bounds": self.bounds.to_dict(),
            "n_samples": self.n_samples,
            "m_min": [list(p) for p in self.m_min],
            "m_max": [list(p) for p in self.m_max],
            "n_undecided": len(self.undecided),
            "history": [list(h) for h in self.history],
            "violations": [[list(a), list(b)] for a, b in self.violations],
            "sample_efficiency": sample_efficiency(self) if self.n_samples else None,
        }
        if self.m_min and self.m_max:
            eb = self.error_boxes()
            d["error_boxes"] = eb.to_dict()
            d["relative_error"] = relative_error(eb, self.bounds) \
                if self.bounds.mu_span > 0 and self.bounds.tau_span > 0 else None
        return d
