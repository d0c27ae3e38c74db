import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qtbias.collision import SIGMA_X, ModelParams, build_hamiltonian
from qtbias.errors import IndefiniteMatrixError, NonHermitianError, SingularMatrixError
from qtbias.qmath import (dagger, herm_eig, max_norm, operator_norm, psd_inverse, psd_sqrt,
                          trace_norm, unitary_propagator)

from conftest import expm_oracle, random_psd

finite = st.floats(-5, 5, allow_nan=False)


def hermitian_2x2(a, b, c, d):
    return np.array([[a, b + 1j * c], [b - 1j * c, d]])


def faddeev_leverrier(m):
    """Characteristic polynomial coefficients (highest power first)."""
    n = m.shape[0]
    coeffs = [1.0 + 0j]
    k = np.zeros_like(m)
    for j in range(1, n + 1):
        k = m @ k + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(m @ k) / j)
    return np.array(coeffs)


def test_herm_eig_identity():
    w, v = herm_eig(np.eye(2))
    assert np.allclose(w, [1, 1])
    assert max_norm(dagger(v) @ v - np.eye(2)) < 1e-11


def test_herm_eig_pauli_x():
    w, _ = herm_eig(SIGMA_X)
    assert np.allclose(w, [-1, 1], atol=1e-14)


def test_herm_eig_hamiltonian_matches_characteristic_polynomial():
    h = build_hamiltonian(ModelParams())
    w, v = herm_eig(h)
    roots = np.sort(np.roots(faddeev_leverrier(h)).real)
    assert np.allclose(w, roots, atol=1e-9)
    assert max_norm(v @ np.diag(w) @ dagger(v) - h) < 1e-11
    assert max_norm(dagger(v) @ v - np.eye(4)) < 1e-11


def test_herm_eig_rejects_non_hermitian():
    with pytest.raises(NonHermitianError) as err:
        herm_eig(np.array([[0, 1], [0, 0]], dtype=complex))
    assert err.value.details["defect"] == pytest.approx(1.0)


@given(finite, finite, finite, finite)
def test_herm_eig_reconstruction(a, b, c, d):
    m = hermitian_2x2(a, b, c, d)
    w, v = herm_eig(m)
    assert np.all(np.diff(w) >= 0)
    assert max_norm(v @ np.diag(w) @ dagger(v) - m) <= 1e-11 * max(1.0, np.abs(m).max())
    assert max_norm(dagger(v) @ v - np.eye(2)) <= 1e-11


def test_propagator_zero_hamiltonian():
    assert max_norm(unitary_propagator(np.zeros((2, 2)), 3.0) - np.eye(2)) == 0


def test_propagator_pauli_x_half_period():
    u = unitary_propagator(SIGMA_X, np.pi)
    assert max_norm(u + np.eye(2)) < 1e-14


def test_propagator_closed_form_rotation():
    t = 0.37
    expected = np.cos(t) * np.eye(2) - 1j * np.sin(t) * SIGMA_X
    assert max_norm(unitary_propagator(SIGMA_X, t) - expected) < 1e-15


@pytest.mark.parametrize("omega,gamma,dt", [(10, 1, 1), (1, 0.3, 0.01), (0, 2, 0.5)])
def test_propagator_matches_scaling_and_squaring(omega, gamma, dt):
    h = build_hamiltonian(ModelParams(omega=omega, gamma=gamma, dt=dt))
    u = unitary_propagator(h, dt)
    assert max_norm(u - expm_oracle(h, dt)) < 1e-10
    assert max_norm(dagger(u) @ u - np.eye(4)) < 1e-11


@settings(max_examples=50)
@given(finite, finite, finite, finite, st.floats(-10, 10))
def test_propagator_inverse_in_time(a, b, c, d, t):
    m = hermitian_2x2(a, b, c, d)
    assert max_norm(unitary_propagator(m, t) @ unitary_propagator(m, -t) - np.eye(2)) < 1e-10


def test_psd_sqrt_diagonal_cases():
    assert max_norm(psd_sqrt(np.eye(2)) - np.eye(2)) < 1e-15
    assert max_norm(psd_sqrt(np.diag([4.0, 9.0])) - np.diag([2.0, 3.0])) < 1e-14


def test_psd_sqrt_random_square_and_compare():
    rng = np.random.default_rng(1)
    for _ in range(200):
        m = random_psd(rng)
        r = psd_sqrt(m)
        assert max_norm(r @ r - m) < 1e-10
        assert max_norm(r - dagger(r)) == 0
        assert herm_eig(r)[0][0] >= 0


def test_psd_sqrt_idempotent_consistency():
    rng = np.random.default_rng(2)
    for _ in range(200):
        m = random_psd(rng)
        r = psd_sqrt(m)
        r4 = r @ r @ r @ r
        assert max_norm(psd_sqrt(r4) - r @ r) < 1e-9 * max(1.0, max_norm(m))


def test_psd_sqrt_clamps_tiny_negative_and_rejects_indefinite():
    r = psd_sqrt(np.diag([-5e-11, 1.0]))
    assert max_norm(r - np.diag([0.0, 1.0])) == 0
    with pytest.raises(IndefiniteMatrixError) as err:
        psd_sqrt(np.diag([-1e-6, 1.0]))
    assert err.value.details["eigenvalue"] == pytest.approx(-1e-6)


def test_psd_inverse_cases():
    assert max_norm(psd_inverse(np.eye(2)) - np.eye(2)) < 1e-15
    assert max_norm(psd_inverse(np.diag([2.0, 5.0])) - np.diag([0.5, 0.2])) < 1e-15
    with pytest.raises(SingularMatrixError):
        psd_inverse(np.diag([1e-13, 1.0]))


def test_psd_inverse_multiply_back_on_tilted_g0():
    from qtbias.bias import BiasSchedule, tilted_schedule_for
    p = ModelParams(n_collisions=3)
    g0 = tilted_schedule_for(p, BiasSchedule.uniform(1.0, 3)).g0
    assert max_norm(g0 @ psd_inverse(g0) - np.eye(2)) < 1e-10


def test_norms():
    m = np.diag([3.0, -1.0])
    assert trace_norm(m) == pytest.approx(4.0)
    assert operator_norm(m) == pytest.approx(3.0)


def test_bit_identical_repeat():
    h = build_hamiltonian(ModelParams())
    assert np.array_equal(unitary_propagator(h, 1.0), unitary_propagator(h, 1.0))
