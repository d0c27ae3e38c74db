"""Small dense complex linear algebra for 2x2 and 4x4 Hermitian matrices."""

import numpy as np

from .errors import IndefiniteMatrixError, NonHermitianError, SingularMatrixError

HERMITIAN_TOL = 1e-12
PSD_CLAMP = 1e-10
SINGULAR_TOL = 1e-12


def dagger(m):
    return np.conj(np.swapaxes(m, -1, -2))


def max_norm(m):
    """Largest absolute entry."""
    return float(np.max(np.abs(m)))


def hermitian_defect(m):
    m = np.asarray(m)
    return max_norm(m - dagger(m))


def herm_eig(m, tol=HERMITIAN_TOL):
    """Eigendecomposition of a Hermitian matrix.

    Parameters
    ----------
    m : array_like, shape (d, d)
        Hermitian matrix.
    tol : float
        Largest tolerated ``max|m - m^H|``.

    Returns
    -------
    w : ndarray
        Real eigenvalues in ascending order.
    v : ndarray
        Unitary matrix whose columns are the eigenvectors.
    """
    m = np.asarray(m, dtype=complex)
    defect = hermitian_defect(m)
    if defect > tol:
        raise NonHermitianError(defect)
    return np.linalg.eigh(0.5 * (m + dagger(m)))


def unitary_propagator(h, t):
    """``exp(-i h t)`` for Hermitian ``h``."""
    w, v = herm_eig(h)
    return (v * np.exp(-1j * w * t)) @ dagger(v)


def _hermitize(m):
    return 0.5 * (m + dagger(m))


def psd_sqrt(m):
    """Principal square root of a positive semidefinite matrix.

    Eigenvalues in ``[-1e-10, 0)`` are treated as rounding noise and clamped.
    """
    w, v = herm_eig(m)
    if w[0] < -PSD_CLAMP:
        raise IndefiniteMatrixError(float(w[0]))
    w = np.clip(w, 0.0, None)
    return _hermitize((v * np.sqrt(w)) @ dagger(v))


def psd_inverse(m):
    w, v = herm_eig(m)
    if w[0] < SINGULAR_TOL:
        raise SingularMatrixError(float(w[0]))
    return _hermitize((v / w) @ dagger(v))


def min_eigenvalue(m):
    return float(herm_eig(m)[0][0])


def trace_norm(m):
    """Trace norm of a Hermitian matrix (sum of absolute eigenvalues)."""
    return float(np.sum(np.abs(herm_eig(m, tol=1e-9)[0])))


def operator_norm(m):
    return float(np.linalg.norm(np.asarray(m), 2))
