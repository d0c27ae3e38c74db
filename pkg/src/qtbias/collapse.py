"""Quality of finite-size-scaling data collapses.

Curves ``A(h, L)`` assumed to follow ``A = h^a f(h / L^b)`` collapse when
plotted as ``y = A h^-a`` against ``x = h L^-b``. Exponents are signed: a
collapse written as ``A h^2`` against ``h L`` corresponds to ``a = -2``,
``b = -1`` in this convention.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import EmptyMeasureError, NoOverlapError, PerfectCollapseError

DEN_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class CollapseSet:
    l: float
    h: np.ndarray
    a_value: np.ndarray


@dataclass(frozen=True, eq=False)
class CollapseDataset:
    sets: tuple

    def __post_init__(self):
        if len(self.sets) < 2:
            raise ValueError("a collapse dataset needs at least two sets")
        for s in self.sets:
            if s.l <= 0:
                raise ValueError(f"system size must be positive, got {s.l}")
            if len(s.h) < 4:
                raise ValueError(f"set L={s.l} has fewer than 4 points")
            if np.any(s.h <= 0):
                raise ValueError(f"set L={s.l} has non-positive h")
            if np.any(np.diff(s.h) <= 0):
                raise ValueError(f"h is not strictly increasing in set L={s.l}")

    @classmethod
    def from_points(cls, rows):
        """Build from ``(L, h, A)`` triples (any order)."""
        groups = {}
        for l, h, a in rows:
            groups.setdefault(float(l), []).append((float(h), float(a)))
        sets = []
        for l in sorted(groups):
            pts = sorted(groups[l])
            sets.append(CollapseSet(l, np.array([p[0] for p in pts]), np.array([p[1] for p in pts])))
        return cls(tuple(sets))

    @property
    def n_points(self):
        return sum(len(s.h) for s in self.sets)


@dataclass(frozen=True)
class CollapseResult:
    a: float
    b: float
    m_value: float
    evaluations: int
    excluded_points: int = 0

    def to_dict(self):
        return {"a": self.a, "b": self.b, "m_value": self.m_value,
                "excluded_points": self.excluded_points, "evaluations": self.evaluations}


def read_collapse_csv(path):
    """Read ``L,h,A`` rows; lines starting with ``#`` are skipped."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        return CollapseDataset.from_points((r["L"], r["h"], r["A"]) for r in reader)


def rescale(ds, a, b):
    """List of ``(x, y)`` array pairs, one per set."""
    return [(s.h * s.l ** (-b), s.a_value * s.h ** (-a)) for s in ds.sets]


def measure_known(ds, f, a, b):
    """RMS relative deviation of the rescaled data from a known scaling function."""
    terms = []
    for x, y in rescale(ds, a, b):
        fx = np.asarray(f(x), dtype=float)
        keep = np.abs(fx) >= DEN_EPS
        terms.extend((((y[keep] - fx[keep]) / fx[keep]) ** 2).tolist())
    if not terms:
        raise EmptyMeasureError("every point was excluded by the denominator guard")
    return math.sqrt(math.fsum(terms) / len(terms))


def measure_details(ds, a, b):
    """Interpolation measure with bookkeeping: ``(value, n_points, excluded)``."""
    scaled = rescale(ds, a, b)
    terms = []
    excluded = 0
    for p, (xp, yp) in enumerate(scaled):
        lo, hi = xp[0], xp[-1]
        for i, (x, y) in enumerate(scaled):
            if i == p:
                continue
            inside = (x >= lo) & (x <= hi)
            if not inside.any():
                continue
            e = np.interp(x[inside], xp, yp)
            keep = np.abs(e) >= DEN_EPS
            excluded += int(np.count_nonzero(~keep))
            terms.extend((((y[inside][keep] - e[keep]) / e[keep]) ** 2).tolist())
    if not terms:
        raise NoOverlapError(f"no overlapping points at a={a}, b={b}", a=a, b=b)
    # fsum keeps the value independent of set order
    return math.sqrt(math.fsum(terms) / len(terms)), len(terms), excluded


def measure(ds, a, b):
    return measure_details(ds, a, b)[0]


def quality_factor(m_noisy, m_ideal):
    """Ratio ``m_ideal / m_noisy`` of collapse measures."""
    if m_noisy == 0:
        raise PerfectCollapseError("reference measure is zero (perfect collapse); Q = +inf")
    return m_ideal / m_noisy


def fit_exponents(ds, a_range, b_range, grid=41):
    """Grid scan of the measure followed by Nelder-Mead refinement."""
    evaluations = 0

    def objective(params):
        nonlocal evaluations
        evaluations += 1
        try:
            return measure(ds, params[0], params[1])
        except NoOverlapError:
            return math.inf

    a_grid = np.linspace(a_range[0], a_range[1], grid)
    b_grid = np.linspace(b_range[0], b_range[1], grid)
    best = (math.inf, a_grid[0], b_grid[0])
    for a in a_grid:
        for b in b_grid:
            val = objective((a, b))
            if val < best[0]:
                best = (val, a, b)
    if not math.isfinite(best[0]):
        raise NoOverlapError("no grid point produced overlapping sets")
    step = np.array([(a_range[1] - a_range[0]) / (grid - 1), (b_range[1] - b_range[0]) / (grid - 1)])
    x0 = np.array(best[1:])
    simplex = np.array([x0, x0 + [step[0], 0.0], x0 + [0.0, step[1]]])
    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-7, "fatol": 1e-12, "maxiter": 2000})
    a, b = (float(v) for v in res.x) if res.fun <= best[0] else (float(best[1]), float(best[2]))
    value, _, excluded = measure_details(ds, a, b)
    return CollapseResult(a, b, value, evaluations, excluded)
