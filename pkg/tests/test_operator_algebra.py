"""Tests for the operator algebra module."""

import math

import numpy as np
import pytest

from diqkd.chsh import build_chsh
from diqkd.operator_algebra import (
    QuantumChannel,
    adjoint_apply,
    apply_channel,
    as_state,
    born_sample,
    generalized_x,
    hermitian_eig,
    identity,
    identity_channel,
    is_psd,
    min_eigenvalue,
    pauli,
    phase,
    projector,
    random_channel,
    random_hermitian,
    random_state,
    tensor,
)
from diqkd.squash import build_squash


@pytest.fixture
def rng():
    """Create a seeded random generator."""
    return np.random.default_rng(20240611)


def test_pauli_z_matches_stored_basis():
    """Z is the bit flip in the y-basis."""
    np.testing.assert_array_equal(pauli("z"), np.array([[0, 1], [1, 0]]))
    np.testing.assert_array_equal(pauli("x"), np.array([[0, -1j], [1j, 0]]))
    np.testing.assert_array_equal(pauli("y"), np.diag([1, -1]))


def test_pauli_algebra():
    """Paulis square to identity and anticommute pairwise."""
    for axis in ("x", "y", "z"):
        np.testing.assert_allclose(pauli(axis) @ pauli(axis), identity(2), atol=1e-14)
    for a, b in (("x", "y"), ("y", "z"), ("x", "z")):
        anticommutator = pauli(a) @ pauli(b) + pauli(b) @ pauli(a)
        np.testing.assert_allclose(anticommutator, np.zeros((2, 2)), atol=1e-14)


def test_pauli_products():
    """XZ = -iY and YZ = iX in the stored basis."""
    np.testing.assert_allclose(pauli("x") @ pauli("z"), -1j * pauli("y"), atol=1e-14)
    np.testing.assert_allclose(pauli("y") @ pauli("z"), 1j * pauli("x"), atol=1e-14)


def test_pauli_rejects_unknown_axis():
    """Reject axes other than x, y and z."""
    with pytest.raises(ValueError, match="Unsupported axis"):
        pauli("w")


def test_generalized_x_special_cases():
    """X = X_{-i} and Z = X_1."""
    np.testing.assert_allclose(generalized_x(-1j), pauli("x"))
    np.testing.assert_allclose(generalized_x(1), pauli("z"))


def test_generalized_x_eigenvalues():
    """A unit-modulus off-diagonal gives eigenvalues +-1."""
    eigenvalues = hermitian_eig(generalized_x(phase(math.pi / 7))).eigenvalues
    np.testing.assert_allclose(eigenvalues, [1, -1], atol=1e-12)


def test_generalized_x_rejects_non_unit_modulus():
    """Reject parameters off the unit circle."""
    with pytest.raises(ValueError, match="unit modulus"):
        generalized_x(1.01)


def test_generalized_x_rejects_non_finite():
    """Reject NaN parameters."""
    with pytest.raises(ValueError, match="finite"):
        generalized_x(complex(math.nan, 0))


def test_tensor_properties():
    """Kronecker products of identities, traces and mixed products."""
    z = pauli("z")
    eye = identity(2)
    np.testing.assert_array_equal(tensor(eye, eye), identity(4))
    assert np.trace(tensor(z, z)) == 0
    np.testing.assert_allclose(tensor(z, eye) @ tensor(eye, z), tensor(z, z))


def test_tensor_rejects_dimension_mismatch():
    """Only single-qubit factors are accepted."""
    with pytest.raises(ValueError, match="2x2"):
        tensor(identity(4), pauli("z"))


def test_hermitian_eig_spectra():
    """Eigenvalues come back in descending order."""
    np.testing.assert_allclose(hermitian_eig(pauli("z")).eigenvalues, [1, -1], atol=1e-14)
    z = pauli("z")
    np.testing.assert_allclose(
        hermitian_eig(tensor(z, z)).eigenvalues, [1, 1, -1, -1], atol=1e-14
    )
    chsh = build_chsh(-1j, -1j).operator
    np.testing.assert_allclose(
        hermitian_eig(chsh).eigenvalues, [1 / math.sqrt(2), 0, 0, -1 / math.sqrt(2)], atol=1e-12
    )


def test_hermitian_eig_round_trip(rng):
    """Random Hermitian matrices are rebuilt from their eigensystem."""
    for _ in range(10_000):
        matrix = random_hermitian(4, rng)
        system = hermitian_eig(matrix)
        assert np.max(np.abs(system.reconstruct() - matrix)) <= 1e-10
        gram = system.eigenvectors.conj().T @ system.eigenvectors
        assert np.max(np.abs(gram - identity(4))) <= 1e-10


def test_hermitian_eig_rejects_non_hermitian():
    """Reject non-Hermitian input."""
    with pytest.raises(ValueError, match="not Hermitian"):
        hermitian_eig(np.array([[0, 1], [0, 0]]))


def test_min_eigenvalue_examples():
    """Smallest eigenvalues of I and X X."""
    x = pauli("x")
    assert min_eigenvalue(identity(4)) == pytest.approx(1)
    assert min_eigenvalue(tensor(x, x)) == pytest.approx(-1)


def test_is_psd_uses_tolerance():
    """Projectors are PSD and small negative eigenvalues pass only within tol."""
    x = pauli("x")
    assert is_psd((identity(2) + x) / 2)
    assert not is_psd(x)
    assert is_psd(-1e-12 * identity(2))
    assert not is_psd(-1e-6 * identity(2))
    assert is_psd(-1e-6 * identity(2), tol=1e-5)


def test_identity_channel_preserves_states(rng):
    """The identity channel and its adjoint change nothing."""
    rho = random_state(4, rng)
    np.testing.assert_allclose(apply_channel(identity_channel(4), rho), rho, atol=1e-14)
    np.testing.assert_allclose(
        adjoint_apply(identity_channel(4), tensor(pauli("z"), identity(2))),
        tensor(pauli("z"), identity(2)),
    )


def test_squash_output_is_a_state():
    """The squash maps a Bell state to a valid two-qubit state."""
    bell = np.array([0, 1, 1, 0]) / math.sqrt(2)
    output = apply_channel(build_squash(-1j, -1j).channel, projector(bell))
    assert np.trace(output).real == pytest.approx(1, abs=1e-10)
    assert min_eigenvalue(output) >= -1e-10
    as_state(output)


def test_channel_duality(rng):
    """Tr[O F(rho)] equals Tr[F^dagger(O) rho] for random triples."""
    for _ in range(1000):
        channel = random_channel(4, 4, 3, rng)
        rho = random_state(4, rng)
        observable = random_hermitian(4, rng)
        lhs = np.trace(observable @ apply_channel(channel, rho))
        rhs = np.trace(adjoint_apply(channel, observable) @ rho)
        assert abs(lhs - rhs) <= 1e-10


def test_adjoint_of_trace_preserving_channel_is_unital(rng):
    """Trace preservation makes the adjoint unital."""
    for _ in range(100):
        channel = random_channel(2, 4, 2, rng)
        np.testing.assert_allclose(adjoint_apply(channel, identity(4)), identity(2), atol=1e-10)
        assert np.trace(apply_channel(channel, random_state(2, rng))).real == pytest.approx(1)


def test_channel_rejects_incomplete_kraus_set():
    """Kraus sets must be complete."""
    with pytest.raises(ValueError, match="trace preserving"):
        QuantumChannel(2, 2, (0.5 * identity(2),))


def test_apply_channel_rejects_dimension_mismatch(rng):
    """States must live on the input space."""
    with pytest.raises(ValueError, match="dimension"):
        apply_channel(identity_channel(2), random_state(4, rng))


def test_born_sample_pure_state(rng):
    """A pure state always yields its own outcome."""
    zero = np.diag([1, 0])
    one = np.diag([0, 1])
    draws = born_sample(zero, [zero, one], rng, size=1000)
    assert np.all(draws == 0)
    assert born_sample(zero, [zero, one], rng) == 0


def test_born_sample_maximally_mixed_frequency(rng):
    """Frequencies of a fair qubit measurement stay within 4 sigma of 1/2."""
    draws = born_sample(identity(2) / 2, [np.diag([1, 0]), np.diag([0, 1])], rng, size=100_000)
    sigma = math.sqrt(0.25 / 100_000)
    assert abs(np.mean(draws == 0) - 0.5) <= 4 * sigma


def test_born_sample_bell_projectors(rng):
    """A CHSH eigenvector is found with its Born-rule probability."""
    m = build_chsh(-1j, -1j)
    psi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    elements = [projector(m.bell_basis[:, k]) for k in range(4)]
    expected = abs(np.vdot(m.bell_state("psi_plus"), psi)) ** 2
    assert expected == pytest.approx((1 + 1 / math.sqrt(2)) / 2)
    draws = born_sample(projector(psi), elements, rng, size=20_000)
    sigma = math.sqrt(expected * (1 - expected) / 20_000)
    assert abs(np.mean(draws == 0) - expected) <= 4 * sigma


def test_born_sample_rejects_non_povm(rng):
    """Elements must sum to identity."""
    with pytest.raises(ValueError, match="sum to identity"):
        born_sample(identity(2) / 2, [np.diag([1, 0])], rng)
