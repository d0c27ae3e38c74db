"""Qubit-ancilla collision model.

Basis conventions used throughout the package:

* sensor qubit: index 0 is the excited state ``|e>``, index 1 the ground state
  ``|g>``; ``sigma_minus = |g><e|`` and ``sigma_plus sigma_minus = |e><e|``.
* joint space: sensor (first factor) times ancilla, ordered
  ``|e,1>, |e,0>, |g,1>, |g,0>``. The ancilla starts in ``|0>`` and outcome
  ``m = 1`` means a quantum was transferred to it ("click").
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidDensityMatrixError
from .qmath import dagger, herm_eig, max_norm, unitary_propagator

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()
EXCITED_PROJECTOR = SIGMA_PLUS @ SIGMA_MINUS
IDENTITY = np.eye(2, dtype=complex)

EXCITED = np.array([1, 0], dtype=complex)
GROUND = np.array([0, 1], dtype=complex)

# ancilla index of |0> and |1> in the joint basis ordering above
_ANC0, _ANC1 = 1, 0

KRAUS_KINDS = ("exact", "first_order")


def _as_state(psi):
    return tuple(complex(z) for z in np.asarray(psi, dtype=complex).ravel())


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the driven, monitored qubit.

    ``kraus`` selects the per-collision operators used when a full map is
    built from these parameters: ``"exact"`` (default, valid at any
    ``gamma * dt``) or the ``"first_order"`` small-``dt`` expansion.
    """

    omega: float = 10.0
    gamma: float = 1.0
    dt: float = 1.0
    n_collisions: int = 20
    psi0: tuple = field(default=(0j, 1 + 0j))
    kraus: str = "exact"

    def __post_init__(self):
        object.__setattr__(self, "psi0", _as_state(self.psi0))
        if not np.isfinite(self.omega):
            raise ValueError("omega must be finite")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if int(self.n_collisions) != self.n_collisions or self.n_collisions < 1:
            raise ValueError(f"n_collisions must be a positive integer, got {self.n_collisions}")
        if len(self.psi0) != 2:
            raise ValueError("psi0 must have two components")
        norm = np.linalg.norm(self.psi0)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"psi0 must be normalised (norm {norm!r})")
        if self.kraus not in KRAUS_KINDS:
            raise ValueError(f"kraus must be one of {KRAUS_KINDS}, got {self.kraus!r}")

    @property
    def state(self):
        return np.array(self.psi0, dtype=complex)

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class KrausPair:
    """No-click (``k0``) and click (``k1``) operators of one collision."""

    k0: np.ndarray
    k1: np.ndarray

    def stacked(self):
        return np.stack([np.asarray(self.k0, complex), np.asarray(self.k1, complex)])


def build_hamiltonian(p):
    """Joint sensor-ancilla Hamiltonian (4x4, joint basis of the module doc)."""
    coupling = np.sqrt(p.gamma / p.dt)
    return (p.omega * np.kron(SIGMA_X, IDENTITY)
            + coupling * (np.kron(SIGMA_PLUS, SIGMA_MINUS) + np.kron(SIGMA_MINUS, SIGMA_PLUS)))


def exact_kraus(p):
    u = unitary_propagator(build_hamiltonian(p), p.dt).reshape(2, 2, 2, 2)
    # u[s_out, a_out, s_in, a_in]
    return KrausPair(u[:, _ANC0, :, _ANC0].copy(), u[:, _ANC1, :, _ANC0].copy())


def first_order_kraus(p):
    k0 = IDENTITY - 1j * p.omega * p.dt * SIGMA_X - 0.5 * p.gamma * p.dt * EXCITED_PROJECTOR
    k1 = np.sqrt(p.gamma * p.dt) * SIGMA_MINUS
    return KrausPair(k0, k1)


def kraus_pair(p):
    """Kraus pair selected by ``p.kraus``."""
    return exact_kraus(p) if p.kraus == "exact" else first_order_kraus(p)


def completeness_defect(k):
    k0, k1 = np.asarray(k.k0), np.asarray(k.k1)
    return max_norm(dagger(k0) @ k0 + dagger(k1) @ k1 - IDENTITY)


def validate_density_matrix(rho, tol=1e-10):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise InvalidDensityMatrixError(f"shape {rho.shape}", float("nan"))
    herm = max_norm(rho - dagger(rho))
    if herm > tol:
        raise InvalidDensityMatrixError("not Hermitian", herm)
    tr = abs(np.trace(rho) - 1.0)
    if tr > tol:
        raise InvalidDensityMatrixError("trace differs from 1", tr)
    lam = herm_eig(rho, tol=tol)[0][0]
    if lam < -tol:
        raise InvalidDensityMatrixError("negative eigenvalue", -lam)
    return rho


def apply_channel(rho, k):
    """Unconditional update ``sum_m K_m rho K_m^dagger``."""
    rho = validate_density_matrix(rho)
    k0, k1 = np.asarray(k.k0), np.asarray(k.k1)
    return k0 @ rho @ dagger(k0) + k1 @ rho @ dagger(k1)
