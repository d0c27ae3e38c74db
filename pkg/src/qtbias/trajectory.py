"""Trajectory sampling, likelihoods and classical Fisher information.

Outcome strings are stored in collision order (first collision first). All
probabilities are accumulated step by step in log space.

The derivative of ``log P`` with respect to ``omega`` is a central finite
difference in which the whole tilted map (Kraus operators *and* G-matrices)
is rebuilt at ``omega +- delta`` while the bias data ``(s, b)`` stays fixed.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bias import TiltedSchedule, tilted_schedule_for
from .collision import GROUND
from .errors import (EnumerationCapError, NumericalDegradationError,
                     UndefinedDerivativeError)
from .streams import UNBIASED_STREAM, TrajectoryStreams, check_seed

DEFAULT_CHUNK = 4096
DEFAULT_ENUMERATION_CAP = 24
PREFIX_BITS = 8
PROB_TOL = 1e-12
COMPLETE_TOL = 1e-10


def default_fd_step(omega):
    return 1e-4 * max(1.0, abs(omega))


def fd_consistent(d_full, d_half):
    """Quadratic FD error budget between steps ``delta`` and ``delta / 2``."""
    return np.abs(d_full - d_half) <= np.maximum(1e-6 * np.abs(d_full), 1e-8)


@dataclass(frozen=True)
class TrajectoryRecord:
    outcomes: tuple
    logp: float
    dlogp: float
    f_m: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(int(x) for x in self.outcomes))
        object.__setattr__(self, "f_m", float(self.dlogp) ** 2)

    @property
    def bitstring(self):
        return "".join(str(x) for x in self.outcomes)


@dataclass(frozen=True)
class FIEstimate:
    mean: float
    stderr: float
    n_traj: int
    n_batches: int
    seed: int
    fd_flagged: int = 0

    @property
    def rel_error(self):
        if self.mean == 0:
            return 0.0 if self.stderr == 0 else math.inf
        return self.stderr / abs(self.mean)

    def to_dict(self):
        return {"mean": self.mean, "stderr": self.stderr, "n_traj": self.n_traj,
                "n_batches": self.n_batches, "seed": self.seed, "fd_flagged": self.fd_flagged}


@dataclass(frozen=True)
class EnumerationResult:
    fi: float
    mass: float
    n_collisions: int

    def __float__(self):
        return self.fi


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    prob: np.ndarray
    mean_fi: float


# ---------------------------------------------------------------------------
# vectorised propagation


def _resolve_map(kmap, psi0=None):
    """Return ``(ops, psi)``: operators ``(N, 2, 2, 2)`` and the normalised start state."""
    if isinstance(kmap, TiltedSchedule):
        return kmap.operators(), np.asarray(kmap.psi0_tilted, complex)
    ops = np.stack([p.stacked() for p in kmap])
    psi = GROUND if psi0 is None else np.asarray(psi0, complex)
    return ops, psi / np.linalg.norm(psi)


def _both_branches(k, a, c):
    a0 = k[0, 0, 0] * a + k[0, 0, 1] * c
    c0 = k[0, 1, 0] * a + k[0, 1, 1] * c
    a1 = k[1, 0, 0] * a + k[1, 0, 1] * c
    c1 = k[1, 1, 0] * a + k[1, 1, 1] * c
    return a0, c0, a1, c1


def _sq(z):
    return z.real * z.real + z.imag * z.imag


def _branch_total(a0, c0, a1, c1):
    # For a complete map this is <psi|psi> = 1 up to rounding; dividing by it makes
    # a certain outcome contribute log p = 0 exactly. Incomplete maps (e.g. a raw
    # first-order pair) are left unnormalised.
    total = _sq(a0) + _sq(c0) + _sq(a1) + _sq(c1)
    return np.where(np.abs(total - 1.0) <= COMPLETE_TOL, total, 1.0)


def _renormalise(a, c, p):
    scale = np.zeros_like(p)
    np.divide(1.0, np.sqrt(p), out=scale, where=p > 0)
    return a * scale, c * scale


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def _log_probabilities(ops, psi, outcomes):
    outcomes = np.asarray(outcomes, dtype=bool)
    m = outcomes.shape[0]
    a = np.full(m, psi[0], dtype=complex)
    c = np.full(m, psi[1], dtype=complex)
    logp = np.zeros(m)
    for n in range(ops.shape[0]):
        a0, c0, a1, c1 = _both_branches(ops[n], a, c)
        bit = outcomes[:, n]
        a = np.where(bit, a1, a0)
        c = np.where(bit, c1, c0)
        p = _sq(a) + _sq(c)
        logp += _log(p / _branch_total(a0, c0, a1, c1))
        a, c = _renormalise(a, c, p)
    return logp


def _sample_core(ops, psi, u):
    m, n_steps = u.shape
    a = np.full(m, psi[0], dtype=complex)
    c = np.full(m, psi[1], dtype=complex)
    outcomes = np.zeros((m, n_steps), dtype=np.uint8)
    logp = np.zeros(m)
    for n in range(n_steps):
        a0, c0, a1, c1 = _both_branches(ops[n], a, c)
        norm = _sq(a) + _sq(c)
        p1 = (_sq(a1) + _sq(c1)) / norm
        if p1.size and (p1.min() < -PROB_TOL or p1.max() > 1 + PROB_TOL):
            raise NumericalDegradationError(
                f"click probability outside [0, 1] at collision {n + 1}: "
                f"[{p1.min():.3e}, {p1.max():.3e}]", step=n + 1)
        click = u[:, n] < p1
        outcomes[:, n] = click
        a = np.where(click, a1, a0)
        c = np.where(click, c1, c0)
        p = _sq(a) + _sq(c)
        logp += _log(p / _branch_total(a0, c0, a1, c1))
        a, c = _renormalise(a, c, p)
    return outcomes, logp, np.stack([a, c], axis=1)


# ---------------------------------------------------------------------------
# single trajectories


def sample_trajectory(kmap, rng_stream, psi0=None):
    """Sample one outcome string with the Born rule.

    Parameters
    ----------
    kmap : TiltedSchedule or sequence of KrausPair
    rng_stream : numpy.random.Generator
        Consumes exactly one uniform per collision.
    psi0 : array_like, optional
        Start state for a plain Kraus sequence (default ``|g>``).

    Returns
    -------
    outcomes : tuple of int
    state : ndarray
        Normalised conditional state after the last collision.
    """
    ops, psi = _resolve_map(kmap, psi0)
    u = rng_stream.random((1, ops.shape[0]))
    outcomes, _, state = _sample_core(ops, psi, u)
    return tuple(int(x) for x in outcomes[0]), state[0]


def trajectory_logprob(kmap, m, psi0=None):
    """Log-probability of ``m``; ``-inf`` for an impossible string."""
    ops, psi = _resolve_map(kmap, psi0)
    m = np.asarray(m, dtype=bool).reshape(1, -1)
    if m.shape[1] != ops.shape[0]:
        raise ValueError(f"outcome string has length {m.shape[1]}, expected {ops.shape[0]}")
    return float(_log_probabilities(ops, psi, m)[0])


def _check_delta(model, delta):
    delta = default_fd_step(model.omega) if delta is None else float(delta)
    if not delta > 0:
        raise ValueError(f"finite-difference step must be > 0, got {delta}")
    return delta


def shifted_schedule(model, sched, domega):
    return tilted_schedule_for(model.replace(omega=model.omega + domega), sched)


def dlogp_domega(model, sched, m, delta=None):
    delta = _check_delta(model, delta)
    lp_plus = trajectory_logprob(shifted_schedule(model, sched, delta), m)
    lp_minus = trajectory_logprob(shifted_schedule(model, sched, -delta), m)
    if not (np.isfinite(lp_plus) and np.isfinite(lp_minus)):
        raise UndefinedDerivativeError(
            "trajectory has zero probability at a shifted frequency",
            logp_plus=lp_plus, logp_minus=lp_minus)
    return (lp_plus - lp_minus) / (2 * delta)


def trajectory_precision(model, sched, m, delta=None):
    logp = trajectory_logprob(tilted_schedule_for(model, sched), m)
    return TrajectoryRecord(tuple(m), logp, dlogp_domega(model, sched, m, delta))


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Vectorised trajectory records of one sampled ensemble."""

    outcomes: np.ndarray
    logp: np.ndarray
    dlogp: np.ndarray
    dlogp_half: np.ndarray
    seed: int

    @property
    def f(self):
        return self.dlogp ** 2

    def __len__(self):
        return self.outcomes.shape[0]

    @property
    def fd_flagged(self):
        return int(np.count_nonzero(~fd_consistent(self.dlogp, self.dlogp_half)))

    def head(self, n):
        return TrajectoryBatch(self.outcomes[:n], self.logp[:n], self.dlogp[:n],
                               self.dlogp_half[:n], self.seed)

    def records(self):
        return [TrajectoryRecord(tuple(o), float(lp), float(d))
                for o, lp, d in zip(self.outcomes, self.logp, self.dlogp)]

    def estimate(self, n_batches):
        return fi_from_values(self.f, n_batches, self.seed, self.fd_flagged)

    def max_precision(self):
        return _argmax_lexicographic(self.f, self.outcomes)


def fi_from_values(f, n_batches, seed, fd_flagged=0):
    f = np.asarray(f, dtype=float)
    n_traj = f.size
    if n_batches < 2 or n_traj < n_batches:
        raise ValueError(f"need n_traj >= n_batches >= 2 (got {n_traj}, {n_batches})")
    means = np.array([np.mean(chunk) for chunk in np.array_split(f, n_batches)])
    stderr = float(np.std(means, ddof=1) / np.sqrt(n_batches))
    return FIEstimate(float(np.mean(f)), stderr, int(n_traj), int(n_batches), int(seed), int(fd_flagged))


def _argmax_lexicographic(f, outcomes):
    f = np.asarray(f)
    if f.size == 0:
        raise ValueError("no trajectories to select from")
    best = np.flatnonzero(f == f.max())
    keys = ["".join(map(str, outcomes[i])) for i in best]
    return tuple(int(x) for x in outcomes[best[int(np.argmin(keys))]])


def _chunks(start, stop, chunk):
    # boundaries fixed at absolute multiples of ``chunk``
    edges = [start] + list(range((start // chunk + 1) * chunk, stop, chunk)) + [stop]
    return [(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def _map_ordered(fn, items, threads):
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def sample_batch(model, sched, n_traj, seed, *, stream=UNBIASED_STREAM, delta=None,
                 threads=1, chunk=DEFAULT_CHUNK):
    """Sample ``n_traj`` trajectories of the tilted map and their precisions.

    Trajectory ``i`` always uses the same random substream, so results are
    identical for any thread count and a larger ``n_traj`` extends a smaller
    run rather than replacing it.
    """
    seed = check_seed(seed)
    delta = _check_delta(model, delta)
    shifted = {d: tilted_schedule_for(model.replace(omega=model.omega + d), sched)
               for d in (delta, -delta, 0.5 * delta, -0.5 * delta)}
    ops0, psi0 = _resolve_map(tilted_schedule_for(model, sched))
    resolved = {d: _resolve_map(ts) for d, ts in shifted.items()}
    streams = TrajectoryStreams(seed, stream)
    n_steps = model.n_collisions

    def work(bounds):
        lo, hi = bounds
        outcomes, logp, _ = _sample_core(ops0, psi0, streams.uniforms(lo, hi, n_steps))
        lps = {d: _log_probabilities(*resolved[d], outcomes) for d in resolved}
        bad = ~np.isfinite(np.stack(list(lps.values())))
        if bad.any():
            raise UndefinedDerivativeError(
                "sampled trajectory has zero probability at a shifted frequency")
        d_full = (lps[delta] - lps[-delta]) / (2 * delta)
        d_half = (lps[0.5 * delta] - lps[-0.5 * delta]) / delta
        return outcomes, logp, d_full, d_half

    parts = _map_ordered(work, _chunks(0, int(n_traj), chunk), threads)
    if not parts:
        raise ValueError("n_traj must be positive")
    return TrajectoryBatch(*(np.concatenate([p[i] for p in parts]) for i in range(4)), seed)


def estimate_fi_mc(model, sched, n_traj, n_batches, seed, *, delta=None, threads=1,
                   stream=UNBIASED_STREAM):
    """Monte Carlo Fisher information of the map's own trajectory ensemble."""
    if not n_traj >= n_batches >= 2:
        raise ValueError(f"need n_traj >= n_batches >= 2 (got {n_traj}, {n_batches})")
    batch = sample_batch(model, sched, n_traj, seed, stream=stream, delta=delta, threads=threads)
    return batch.estimate(n_batches)


# ---------------------------------------------------------------------------
# exhaustive enumeration


def _expand(ops, a, c, logp, start, stop):
    """Append all outcomes of collisions ``start..stop-1``; index = parent * 2 + bit."""
    for n in range(start, stop):
        a0, c0, a1, c1 = _both_branches(ops[n], a, c)
        p0 = _sq(a0) + _sq(c0)
        p1 = _sq(a1) + _sq(c1)
        total = p0 + p1
        a0, c0 = _renormalise(a0, c0, p0)
        a1, c1 = _renormalise(a1, c1, p1)
        a = np.stack([a0, a1], axis=1).ravel()
        c = np.stack([c0, c1], axis=1).ravel()
        logp = np.stack([logp + _log(p0 / total), logp + _log(p1 / total)], axis=1).ravel()
    return a, c, logp


def _root(psi):
    return np.array([psi[0]]), np.array([psi[1]]), np.zeros(1)


def exact_fi_enumerate(model, sched, delta=None, cap=DEFAULT_ENUMERATION_CAP, threads=1):
    """Fisher information by summing over all ``2^N`` outcome strings.

    Returns an :class:`EnumerationResult` holding the information and the total
    probability mass (a correctness check, should be 1).
    """
    n = model.n_collisions
    if n > cap:
        raise EnumerationCapError(f"N = {n} exceeds the enumeration cap {cap}", n=n, cap=cap)
    delta = _check_delta(model, delta)
    maps = [_resolve_map(tilted_schedule_for(model.replace(omega=model.omega + d), sched))
            for d in (0.0, delta, -delta)]
    k = min(PREFIX_BITS, n)
    prefix_states = [_expand(ops, *_root(psi), 0, k) for ops, psi in maps]

    def work(idx):
        lps = []
        for (ops, _), (a, c, lp) in zip(maps, prefix_states):
            lps.append(_expand(ops, a[idx:idx + 1], c[idx:idx + 1], lp[idx:idx + 1], k, n)[2])
        lp0, lpp, lpm = lps
        live = np.isfinite(lp0)
        if np.any(live & ~(np.isfinite(lpp) & np.isfinite(lpm))):
            raise UndefinedDerivativeError("outcome string with zero probability at a shifted frequency")
        prob = np.exp(lp0[live])
        dl = (lpp[live] - lpm[live]) / (2 * delta)
        return float(np.sum(prob * dl * dl)), float(np.sum(prob))

    parts = _map_ordered(work, list(range(2 ** k)), threads)
    return EnumerationResult(math.fsum(p[0] for p in parts), math.fsum(p[1] for p in parts), n)


def enumerate_outcomes(n):
    """All ``2^n`` outcome strings in enumeration order (first collision most significant)."""
    idx = np.arange(2 ** n)[:, None]
    return ((idx >> np.arange(n - 1, -1, -1)) & 1).astype(np.uint8)


# ---------------------------------------------------------------------------
# histograms


def _f_values(records):
    if isinstance(records, TrajectoryBatch):
        return records.f
    return np.array([r.f_m for r in records], dtype=float)


def fm_histogram(records, bins=40, scale="linear"):
    """Probability-normalised histogram of per-trajectory precisions.

    ``bins`` is a bin count or an explicit edge array; ``scale="log"`` spaces a
    bin count logarithmically between the smallest positive and largest value.
    """
    f = _f_values(records)
    if f.size == 0:
        raise ValueError("no records to histogram")
    if scale == "log" and np.ndim(bins) == 0:
        pos = f[f > 0]
        lo = pos.min() if pos.size else 1.0
        hi = max(f.max(), lo)
        if hi == lo:
            hi = lo * 10
        edges = np.geomspace(lo, hi, int(bins) + 1)
        counts, edges = np.histogram(np.clip(f, lo, hi), bins=edges)
    else:
        counts, edges = np.histogram(f, bins=bins)
    return Histogram(edges, counts / counts.sum(), float(np.mean(f)))


__all__ = [
    "TrajectoryRecord", "FIEstimate", "EnumerationResult", "Histogram",
    "TrajectoryBatch", "sample_trajectory", "trajectory_logprob", "dlogp_domega",
    "trajectory_precision", "sample_batch", "estimate_fi_mc", "exact_fi_enumerate",
    "fm_histogram", "default_fd_step", "enumerate_outcomes",
]
