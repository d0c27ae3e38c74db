"""Tilted (biased) measurement maps.

A bias schedule ``(s, b)`` reweights every outcome string ``m`` by
``exp(-s * sum_n b_n m_n)``. The reweighted ensemble is realised by a
collision-dependent, trace-preserving Kraus map obtained from a backward
recursion of Hermitian matrices ``G_n`` (``G_N = 1``)::

    G_{n-1}^2 = K0^+ G_n^2 K0 + exp(-s b_n) K1^+ G_n^2 K1
    K0~_n = G_n K0 G_{n-1}^{-1}
    K1~_n = exp(-s b_n / 2) G_n K1 G_{n-1}^{-1}

together with the modified initial state ``G_0 psi0 / |G_0 psi0|``.

Note on the click operator: the small-``dt`` tilted click operator is built
from the lowering operator ``sigma_minus`` (the only choice compatible with the
untilted ``K1 ~ sqrt(gamma dt) sigma_minus`` and with completeness), not from
``sigma_plus sigma_minus``.
"""

from dataclasses import dataclass

import numpy as np

from .collision import (EXCITED_PROJECTOR, IDENTITY, SIGMA_MINUS, SIGMA_X,
                        KrausPair, kraus_pair)
from .errors import DegenerateScheduleError
from .qmath import SINGULAR_TOL, dagger, max_norm, min_eigenvalue, psd_inverse, psd_sqrt


@dataclass(frozen=True)
class BiasSchedule:
    s: float
    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if not np.isfinite(self.s) or not np.all(np.isfinite(self.b)):
            raise ValueError("bias factors must be finite")

    @classmethod
    def unbiased(cls, n):
        return cls(0.0, (1.0,) * n)

    @classmethod
    def uniform(cls, s, n, value=1.0):
        return cls(s, (value,) * n)

    @classmethod
    def from_outcomes(cls, s, outcomes):
        """``b_n = (-1)^{m_n}``: reward clicks where ``outcomes`` clicked."""
        return cls(s, tuple(-1.0 if int(m) else 1.0 for m in outcomes))

    @property
    def n(self):
        return len(self.b)

    @property
    def is_unbiased(self):
        return self.s == 0.0

    def tilts(self):
        """Per-collision exponents ``s * b_n``."""
        return self.s * np.asarray(self.b, dtype=float)


@dataclass(frozen=True, eq=False)
class TiltedStep:
    k0_tilde: np.ndarray
    k1_tilde: np.ndarray
    g: np.ndarray


@dataclass(frozen=True, eq=False)
class TiltedSchedule:
    steps: tuple
    g0: np.ndarray
    psi0_tilted: np.ndarray
    norm0: float

    @property
    def n_collisions(self):
        return len(self.steps)

    def operators(self):
        """Array of shape ``(N, 2, 2, 2)`` indexed ``[step, outcome]``."""
        return np.stack([np.stack([st.k0_tilde, st.k1_tilde]) for st in self.steps])

    def completeness_defects(self):
        return [max_norm(dagger(st.k0_tilde) @ st.k0_tilde
                         + dagger(st.k1_tilde) @ st.k1_tilde - IDENTITY)
                for st in self.steps]


def bias_energy(b, m):
    b = np.asarray(b, dtype=float)
    m = np.asarray(m, dtype=float)
    if b.shape != m.shape:
        raise ValueError(f"length mismatch: {b.shape} vs {m.shape}")
    return float(np.dot(b, m))


def dual_tilted_map(x, pair, tilt):
    """``K0^+ x K0 + exp(-tilt) K1^+ x K1``."""
    k0, k1 = pair.k0, pair.k1
    return dagger(k0) @ x @ k0 + np.exp(-tilt) * (dagger(k1) @ x @ k1)


def build_tilted_schedule(kraus_per_step, sched, psi0):
    """Backward G recursion and the resulting trace-preserving tilted map.

    Parameters
    ----------
    kraus_per_step : KrausPair or sequence of KrausPair
        Untilted operators of every collision (a single pair is repeated).
    sched : BiasSchedule
    psi0 : array_like
        Normalised initial sensor state.

    Raises
    ------
    DegenerateScheduleError
        If some ``G_{n-1}^2`` has minimum eigenvalue below ``1e-12``.
    """
    n = sched.n
    if isinstance(kraus_per_step, KrausPair):
        pairs = [kraus_per_step] * n
    else:
        pairs = list(kraus_per_step)
    if len(pairs) != n or n < 1:
        raise ValueError(f"need {n} Kraus pairs, got {len(pairs)}")
    psi0 = np.asarray(psi0, dtype=complex)

    if sched.is_unbiased:
        steps = tuple(TiltedStep(np.asarray(p.k0, complex), np.asarray(p.k1, complex), IDENTITY.copy())
                      for p in pairs)
        norm0 = float(np.vdot(psi0, psi0).real)
        return TiltedSchedule(steps, IDENTITY.copy(), psi0 / np.sqrt(norm0), norm0)

    tilts = sched.tilts()
    g = [None] * (n + 1)
    g[n] = IDENTITY.copy()
    for step in range(n, 0, -1):
        g2 = dual_tilted_map(g[step] @ g[step], pairs[step - 1], tilts[step - 1])
        g2 = 0.5 * (g2 + dagger(g2))
        lam = min_eigenvalue(g2)
        if lam < SINGULAR_TOL:
            raise DegenerateScheduleError(step, lam)
        g[step - 1] = psd_sqrt(g2)

    steps = []
    for step in range(1, n + 1):
        inv_prev = psd_inverse(g[step - 1])
        p = pairs[step - 1]
        steps.append(TiltedStep(
            g[step] @ p.k0 @ inv_prev,
            np.exp(-0.5 * tilts[step - 1]) * (g[step] @ p.k1 @ inv_prev),
            g[step],
        ))
    phi = g[0] @ psi0
    norm0 = float(np.vdot(phi, phi).real)
    return TiltedSchedule(tuple(steps), g[0], phi / np.sqrt(norm0), norm0)


def tilted_schedule_for(p, sched):
    """Tilted map for the collision model ``p`` (operators chosen by ``p.kraus``)."""
    if sched.n != p.n_collisions:
        raise ValueError(f"bias schedule has {sched.n} entries, model has {p.n_collisions} collisions")
    return build_tilted_schedule(kraus_pair(p), sched, p.state)


def tilted_trajectory_probability(ts, m):
    """Probability of outcome string ``m`` (collision order) under the tilted map."""
    m = [int(x) for x in m]
    if len(m) != ts.n_collisions:
        raise ValueError(f"outcome string has length {len(m)}, expected {ts.n_collisions}")
    psi = ts.psi0_tilted
    for st, bit in zip(ts.steps, m):
        psi = (st.k1_tilde if bit else st.k0_tilde) @ psi
    return float(np.vdot(psi, psi).real)


def closed_form_g_squared(n, sched, p):
    """Small-``dt`` closed form of ``G_n^2``.

    ``G_n^2 = 1 - A_n gamma dt |e><e|`` with
    ``A_n = (N - n) - sum_{i=n+1}^{N} exp(-s b_i)``; valid when
    ``N gamma dt`` and ``omega dt`` are small.
    """
    big_n = sched.n
    if not 0 <= n <= big_n:
        raise ValueError(f"step index {n} outside 0..{big_n}")
    tail = sched.tilts()[n:]
    a_n = (big_n - n) - float(np.sum(np.exp(-tail)))
    return IDENTITY - a_n * p.gamma * p.dt * EXCITED_PROJECTOR


def small_dt_tilted_kraus(p, s_n):
    """First-order tilted pair: the untilted form with ``gamma -> gamma exp(-s_n)``."""
    rate = p.gamma * np.exp(-s_n)
    k0 = IDENTITY - 1j * p.omega * p.dt * SIGMA_X - 0.5 * rate * p.dt * EXCITED_PROJECTOR
    k1 = np.sqrt(rate * p.dt) * SIGMA_MINUS
    return KrausPair(k0, k1)
