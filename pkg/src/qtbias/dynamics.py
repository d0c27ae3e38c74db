"""Continuous-time references: Lindblad master equation and jump unravelling.

The generator is ``L[rho] = -i[omega sigma_x, rho] + gamma (sigma_- rho sigma_+
- 1/2 {sigma_+ sigma_-, rho})`` with detector efficiency fixed at one.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .collision import EXCITED_PROJECTOR, SIGMA_MINUS, SIGMA_PLUS, SIGMA_X, apply_channel, exact_kraus
from .errors import StepSizeError
from .qmath import trace_norm
from .streams import SSE_STREAM, check_seed, step_uniforms


@dataclass(frozen=True, eq=False)
class EvolutionTrace:
    times: np.ndarray
    states: np.ndarray
    channel_counts: np.ndarray = None

    def excited_population(self):
        if self.states.ndim == 3:
            return self.states[:, 0, 0].real
        return np.abs(self.states[:, 0]) ** 2

    def coherence(self):
        if self.states.ndim == 3:
            return self.states[:, 0, 1]
        return self.states[:, 0] * np.conj(self.states[:, 1])


def lindblad_rhs(rho, omega, gamma):
    h = omega * SIGMA_X
    jump = SIGMA_MINUS @ rho @ SIGMA_PLUS
    anti = EXCITED_PROJECTOR @ rho + rho @ EXCITED_PROJECTOR
    return -1j * (h @ rho - rho @ h) + gamma * (jump - 0.5 * anti)


def _n_steps(t_final, dt):
    n = int(round(t_final / dt))
    if n < 1 or abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise StepSizeError(f"step {dt} does not divide t_final {t_final}", dt=dt, t_final=t_final)
    return n


def integrate_lme(model, t_final, dt_int, rho0=None, record_every=1):
    """Fixed-step RK4 solution of the master equation.

    ``model.dt`` and ``model.n_collisions`` are ignored; ``rho0`` defaults to
    the projector onto ``model.psi0``.
    """
    if model.gamma * dt_int > 1e-2 or abs(model.omega) * dt_int > 1e-2:
        raise StepSizeError(f"integrator step {dt_int} too large for gamma={model.gamma}, "
                            f"omega={model.omega}", dt_int=dt_int)
    n = _n_steps(t_final, dt_int)
    if rho0 is None:
        psi = model.state
        rho0 = np.outer(psi, psi.conj())
    rho = np.array(rho0, dtype=complex)
    om, ga, h = model.omega, model.gamma, dt_int
    times, states = [0.0], [rho.copy()]
    for k in range(1, n + 1):
        k1 = lindblad_rhs(rho, om, ga)
        k2 = lindblad_rhs(rho + 0.5 * h * k1, om, ga)
        k3 = lindblad_rhs(rho + 0.5 * h * k2, om, ga)
        k4 = lindblad_rhs(rho + h * k3, om, ga)
        rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % record_every == 0 or k == n:
            times.append(k * h)
            states.append(rho.copy())
    return EvolutionTrace(np.array(times), np.array(states))


def _sse_run(model, n_traj, n_steps, dt, draw, record_every):
    """Vectorised jump unravelling; ``draw(k)`` returns ``n_traj`` uniforms for step ``k``."""
    a = np.full(n_traj, model.psi0[0], dtype=complex)
    c = np.full(n_traj, model.psi0[1], dtype=complex)
    ga = model.gamma
    # no-jump drift d psi = -i H_eff psi dt, integrated exactly over one step
    drift = expm(-1j * dt * (model.omega * SIGMA_X - 0.5j * ga * EXCITED_PROJECTOR))
    clicks = np.zeros(n_traj, dtype=np.int64)
    click_time = np.full(n_traj, np.nan)
    times, snaps, counts = [0.0], [np.stack([a, c], 1)], [clicks.copy()]
    for k in range(1, n_steps + 1):
        p1 = ga * dt * np.abs(a) ** 2
        if p1.max(initial=0.0) > 0.1:
            raise StepSizeError(f"jump probability {p1.max():.3f} > 0.1 per step", dt_int=dt)
        jump = draw(k) < p1
        a_n = drift[0, 0] * a + drift[0, 1] * c
        c_n = drift[1, 0] * a + drift[1, 1] * c
        # jump: sigma_- psi = (0, a)
        a, c = np.where(jump, 0.0, a_n), np.where(jump, a, c_n)
        norm = np.sqrt(np.abs(a) ** 2 + np.abs(c) ** 2)
        a, c = a / norm, c / norm
        first = jump & (clicks == 0)
        click_time[first] = k * dt
        clicks += jump
        if k % record_every == 0 or k == n_steps:
            times.append(k * dt)
            snaps.append(np.stack([a, c], 1))
            counts.append(clicks.copy())
    return np.array(times), np.array(snaps), np.array(counts), click_time


def sample_sse(model, t_final, dt_int, rng_stream, record_every=1):
    """One jump trajectory; ``channel_counts`` is the cumulative click tally."""
    if model.gamma * dt_int > 1e-3:
        raise StepSizeError(f"gamma * dt_int = {model.gamma * dt_int} exceeds 1e-3", dt_int=dt_int)
    n = _n_steps(t_final, dt_int)
    times, snaps, counts, _ = _sse_run(model, 1, n, dt_int, lambda k: rng_stream.random(1),
                                       record_every)
    return EvolutionTrace(times, snaps[:, 0, :], counts[:, 0])


@dataclass(frozen=True, eq=False)
class SSEEnsemble:
    times: np.ndarray
    pop_e: np.ndarray
    pop_e_stderr: np.ndarray
    coherence: np.ndarray
    clicks: np.ndarray          # total clicks across the ensemble up to each time
    first_click_times: np.ndarray


def sse_ensemble(model, t_final, dt_int, n_traj, seed, record_every=1):
    """Ensemble statistics of ``n_traj`` jump trajectories (counter-based per-step streams)."""
    if model.gamma * dt_int > 1e-3:
        raise StepSizeError(f"gamma * dt_int = {model.gamma * dt_int} exceeds 1e-3", dt_int=dt_int)
    seed = check_seed(seed)
    n = _n_steps(t_final, dt_int)
    times, snaps, counts, first = _sse_run(
        model, n_traj, n, dt_int, lambda k: step_uniforms(seed, SSE_STREAM, k, n_traj), record_every)
    pop = np.abs(snaps[:, :, 0]) ** 2
    coh = np.mean(snaps[:, :, 0] * np.conj(snaps[:, :, 1]), axis=1)
    return SSEEnsemble(times, pop.mean(axis=1), pop.std(axis=1, ddof=1) / np.sqrt(n_traj),
                       coh, counts.sum(axis=1), first)


def population_deviation(ensemble, lme_population, min_clicks=10):
    """Standardised deviation of the jump-ensemble population from the master equation.

    Returns ``(z, resolved)`` per recorded time. Until the ensemble has recorded
    ``min_clicks`` clicks the sample spread does not see the jump branch at all
    (every trajectory may still be identical), so there the error scale is the
    worst case ``sqrt(mu (1 - mu) / n)`` for a mean of values in ``[0, 1]``
    instead of the sample standard error.
    """
    mu = ensemble.pop_e
    n = ensemble.first_click_times.size
    resolved = ensemble.clicks >= min_clicks
    worst = np.sqrt(np.clip(mu * (1.0 - mu), 0.0, None) / n)
    scale = np.where(resolved, ensemble.pop_e_stderr, worst)
    diff = np.abs(mu - np.asarray(lme_population))
    z = np.zeros_like(diff)
    np.divide(diff, scale, out=z, where=scale > 0)
    z[(scale == 0) & (diff > 1e-12)] = np.inf
    return z, resolved


def collision_limit_error(model, t_final, dt_list, dt_int=None):
    """Trace distance between the exact collision channel and the master equation at ``t_final``.

    Returns a list of ``(dt, error)`` pairs.
    """
    if dt_int is None:
        dt_int = 1e-3 / max(1.0, model.gamma, abs(model.omega))
    ref = integrate_lme(model, t_final, dt_int, record_every=10 ** 9).states[-1]
    psi = model.state
    out = []
    for dt in dt_list:
        n = _n_steps(t_final, dt)
        pair = exact_kraus(model.replace(dt=dt))
        rho = np.outer(psi, psi.conj())
        for _ in range(n):
            rho = apply_channel(rho, pair)
        out.append((float(dt), 0.5 * trace_norm(rho - ref)))
    return out
