"""Bias-selection strategies and bias-strength sweeps.

``run_global`` samples the unbiased ensemble, picks the most sensitive
trajectory and biases towards it with ``b_n = (-1)^{m_n}``.
``run_local`` builds ``b`` one collision at a time from single-step tilted maps
(``G_1 = 1``), following the conditional state along the favoured outcome.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bias import BiasSchedule, dual_tilted_map
from .collision import IDENTITY, kraus_pair
from .errors import DegenerateScheduleError, QTBiasError
from .qmath import SINGULAR_TOL, min_eigenvalue
from .streams import BIASED_STREAM, UNBIASED_STREAM
from .trajectory import _argmax_lexicographic, _check_delta, sample_batch

log = logging.getLogger(__name__)

STRATEGIES = ("global", "local")
SENSITIVITY_MODES = ("branch", "one_step_fi", "weighted")


@dataclass(frozen=True)
class ConvergenceRow:
    ensemble: str
    n_traj: int
    mean: float
    stderr: float


@dataclass(frozen=True, eq=False)
class OptimizationReport:
    strategy: str
    s: float
    b: tuple
    m_max: tuple
    fi_biased: object
    fi_unbiased: object
    diagnostics: tuple = ()
    warnings: tuple = ()
    batch_biased: object = field(default=None, repr=False)
    batch_unbiased: object = field(default=None, repr=False)

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "s": self.s,
            "b": list(self.b),
            "m_max": "".join(map(str, self.m_max)),
            "fi_biased": self.fi_biased.to_dict(),
            "fi_unbiased": self.fi_unbiased.to_dict(),
            "diagnostics": [vars(r) for r in self.diagnostics],
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class UnbiasedReference:
    estimate: object
    batch: object
    diagnostics: tuple
    converged: bool


def select_max_precision_trajectory(records):
    """Outcome string of the most precise record; ties go to the smallest bitstring."""
    records = list(records)
    if not records:
        raise ValueError("no trajectory records")
    f = np.array([r.f_m for r in records])
    outcomes = np.array([r.outcomes for r in records], dtype=np.uint8)
    return _argmax_lexicographic(f, outcomes)


def convergence_table(batch, label, n_batches):
    n = len(batch)
    sizes = [10 ** k for k in range(2, 12) if 10 ** k < n and 10 ** k >= n_batches] + [n]
    rows = []
    for size in sizes:
        est = batch.head(size).estimate(n_batches)
        rows.append(ConvergenceRow(label, size, est.mean, est.stderr))
    return rows


def unbiased_reference(model, n_traj, n_batches, seed, *, rel_tol=0.01, max_traj=10 ** 6,
                       delta=None, threads=1, grow=True):
    """Unbiased FI estimate, doubling ``n_traj`` until ``rel_error <= rel_tol``."""
    sched = BiasSchedule.unbiased(model.n_collisions)
    n = int(n_traj)
    rows = []
    while True:
        batch = sample_batch(model, sched, n, seed, stream=UNBIASED_STREAM, delta=delta,
                             threads=threads)
        est = batch.estimate(n_batches)
        rows.append(ConvergenceRow("unbiased", n, est.mean, est.stderr))
        if not grow or est.rel_error <= rel_tol:
            return UnbiasedReference(est, batch, tuple(rows), est.rel_error <= rel_tol)
        if n >= max_traj:
            warnings.warn(f"unbiased FI relative error {est.rel_error:.3%} exceeds "
                          f"{rel_tol:.1%} at the trajectory cap {max_traj}", RuntimeWarning)
            return UnbiasedReference(est, batch, tuple(rows), False)
        n = min(2 * n, int(max_traj))
        log.info("growing unbiased sample to %d trajectories", n)


def _notes(ref, rel_tol):
    if ref.converged:
        return ()
    return (f"unbiased FI did not reach relative error {rel_tol:.1%} "
            f"(got {ref.estimate.rel_error:.3%} with {ref.estimate.n_traj} trajectories)",)


def run_global(model, s, n_traj, n_batches, seed, *, rel_tol=0.01, max_traj=10 ** 6,
               delta=None, threads=1, reference=None):
    ref = reference or unbiased_reference(model, n_traj, n_batches, seed, rel_tol=rel_tol,
                                          max_traj=max_traj, delta=delta, threads=threads)
    m_max = ref.batch.max_precision()
    sched = BiasSchedule.from_outcomes(s, m_max)
    biased = sample_batch(model, sched, n_traj, seed, stream=BIASED_STREAM, delta=delta,
                          threads=threads)
    return OptimizationReport(
        "global", float(s), sched.b, m_max, biased.estimate(n_batches), ref.estimate,
        tuple(ref.diagnostics) + tuple(convergence_table(biased, "biased", n_batches)),
        _notes(ref, rel_tol), biased, ref.batch)


def _one_step_probs(pair, tilt, psi):
    g2 = dual_tilted_map(IDENTITY, pair, tilt)
    norm = float(np.vdot(psi, g2 @ psi).real)
    weights = (1.0, np.exp(-tilt))
    return [w * float(np.vdot(k @ psi, k @ psi).real) / norm
            for w, k in zip(weights, (pair.k0, pair.k1))], g2


def _sensitivity(pairs, tilt, psi, target, delta, mode):
    (p_mid, g2), (p_plus, _), (p_minus, _) = (_one_step_probs(pairs[d], tilt, psi)
                                              for d in (0.0, delta, -delta))
    lam = min_eigenvalue(g2)
    if lam < SINGULAR_TOL:
        return None, lam
    if p_mid[target] <= 0:
        return -np.inf, lam

    def score(m):
        if p_plus[m] <= 0 or p_minus[m] <= 0:
            return None
        return ((np.log(p_plus[m]) - np.log(p_minus[m])) / (2 * delta)) ** 2

    if mode == "branch":
        val = score(target)
    elif mode == "weighted":
        val = score(target)
        val = None if val is None else p_mid[target] * val
    else:
        val = sum(p_mid[m] * score(m) for m in (0, 1) if p_mid[m] > 0 and score(m) is not None)
    return (-np.inf if val is None else float(val)), lam


def local_bias_pattern(model, s, delta=None, sensitivity_mode="branch"):
    """Greedy single-step choice of ``b``.

    Returns ``(b, m_max)`` where ``m_max`` is the sequence of favoured outcomes
    (``1`` for ``b_n = -1``, ``0`` for ``b_n = +1``).
    """
    if sensitivity_mode not in SENSITIVITY_MODES:
        raise ValueError(f"unknown sensitivity mode {sensitivity_mode!r}")
    delta = _check_delta(model, delta)
    pairs = {d: kraus_pair(model.replace(omega=model.omega + d)) for d in (0.0, delta, -delta)}
    psi = model.state
    b, m_max = [], []
    for step in range(1, model.n_collisions + 1):
        best = None
        for b_n, target in ((-1.0, 1), (1.0, 0)):
            sens, lam = _sensitivity(pairs, s * b_n, psi, target, delta, sensitivity_mode)
            if sens is None:
                raise DegenerateScheduleError(step, lam)
            # ties favour b_n = +1
            if best is None or sens >= best[0]:
                best = (sens, b_n, target)
        _, b_n, target = best
        b.append(b_n)
        m_max.append(target)
        k = pairs[0.0].k1 if target else pairs[0.0].k0
        psi = k @ psi
        psi = psi / np.linalg.norm(psi)
    return tuple(b), tuple(m_max)


def run_local(model, s, n_traj, n_batches, seed, delta=None, *, sensitivity_mode="branch",
              threads=1, reference=None):
    b, m_max = local_bias_pattern(model, s, delta, sensitivity_mode)
    sched = BiasSchedule(s, b)
    ref = reference or unbiased_reference(model, n_traj, n_batches, seed, delta=delta,
                                          threads=threads, grow=False)
    biased = sample_batch(model, sched, n_traj, seed, stream=BIASED_STREAM, delta=delta,
                          threads=threads)
    return OptimizationReport(
        "local", float(s), sched.b, m_max, biased.estimate(n_batches), ref.estimate,
        tuple(ref.diagnostics) + tuple(convergence_table(biased, "biased", n_batches)),
        (), biased, ref.batch)


@dataclass(frozen=True)
class SweepPoint:
    s: float
    report: object = None
    error: dict = None


@dataclass(frozen=True, eq=False)
class SweepResult:
    strategy: str
    points: tuple
    reference: object

    def successful(self):
        return [p for p in self.points if p.report is not None]

    def argmax(self):
        ok = self.successful()
        if not ok:
            raise ValueError("no successful sweep points")
        return max(ok, key=lambda p: p.report.fi_biased.mean)

    def has_interior_maximum(self):
        ok = sorted(self.successful(), key=lambda p: p.s)
        best = self.argmax()
        return len(ok) >= 3 and ok[0].s < best.s < ok[-1].s

    def rows(self):
        ref = self.reference.estimate
        out = []
        for p in self.points:
            if p.report is None:
                out.append((p.s, float("nan"), float("nan"), ref.mean, ref.stderr, 0))
            else:
                fi = p.report.fi_biased
                out.append((p.s, fi.mean, fi.stderr, ref.mean, ref.stderr, fi.n_traj))
        return out


def parse_s_values(s_values):
    """Ensure the ``s = 0`` baseline is present (prepended when missing)."""
    values = [float(s) for s in s_values]
    if 0.0 not in values:
        values.insert(0, 0.0)
    return values


def sweep_bias_strength(model, strategy, s_values, n_traj, n_batches, seed, *, rel_tol=0.01,
                        max_traj=10 ** 6, delta=None, threads=1, sensitivity_mode="branch"):
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    grow = strategy == "global"
    ref = unbiased_reference(model, n_traj, n_batches, seed, rel_tol=rel_tol, max_traj=max_traj,
                             delta=delta, threads=threads, grow=grow)
    points = []
    for s in parse_s_values(s_values):
        try:
            if strategy == "global":
                rep = run_global(model, s, n_traj, n_batches, seed, rel_tol=rel_tol,
                                 delta=delta, threads=threads, reference=ref)
            else:
                rep = run_local(model, s, n_traj, n_batches, seed, delta,
                                sensitivity_mode=sensitivity_mode, threads=threads, reference=ref)
            points.append(SweepPoint(s, rep))
        except QTBiasError as exc:
            log.warning("sweep point s=%g failed: %s", s, exc)
            points.append(SweepPoint(s, error=exc.to_dict()))
    return SweepResult(strategy, tuple(points), ref)
