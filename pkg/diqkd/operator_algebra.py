"""Dense complex linear algebra for qubit and two-qubit operators and channels."""

import cmath
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
POST_TOL = 1e-10
Axis = Literal["x", "y", "z"]

# Stored basis: the y-basis, so Y is diagonal and Z is the bit flip.
PAULI_MATRICES: dict[Axis, np.ndarray] = {
    "x": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "y": np.array([[1, 0], [0, -1]], dtype=complex),
    "z": np.array([[0, 1], [1, 0]], dtype=complex),
}


def as_complex(value: complex, name: str = "value") -> complex:
    """
    Convert a scalar to a finite Python complex number.

    Raises:
        ValueError: If either component is NaN or infinite.
    """
    value = complex(value)
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


def as_unit_complex(value: complex, name: str = "alpha") -> complex:
    """
    Convert a scalar to a complex number of unit modulus.

    Raises:
        ValueError: If the modulus differs from 1 by more than the input tolerance.
    """
    value = as_complex(value, name)
    if abs(abs(value) - 1.0) > HERMITIAN_TOL:
        raise ValueError(f"{name} must have unit modulus, got |{name}| = {abs(value)}")
    return value


def phase(theta: float) -> complex:
    """Return the unit complex number e^{i theta}."""
    return cmath.exp(1j * theta)


def as_hermitian(
    matrix: np.ndarray, dim: int | None = None, tol: float = HERMITIAN_TOL
) -> np.ndarray:
    """
    Validate a square matrix as a Hermitian operator.

    Args:
        matrix: The candidate operator.
        dim: The expected dimension, if any.
        tol: The largest tolerated entry of ``matrix - matrix^dagger``.

    Returns:
        The operator as a complex128 array.

    Raises:
        ValueError: If the matrix is not square, has the wrong dimension, contains
            non-finite entries or is not Hermitian within ``tol``.
    """
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"Operator must be a square matrix, got shape {matrix.shape}")
    if dim is not None and matrix.shape[0] != dim:
        raise ValueError(f"Operator must have dimension {dim}, got {matrix.shape[0]}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("Operator entries must be finite")
    if np.max(np.abs(matrix - matrix.conj().T), initial=0.0) > tol:
        raise ValueError("Operator is not Hermitian")
    return matrix


def as_state(rho: np.ndarray, dim: int | None = None) -> np.ndarray:
    """
    Validate a density matrix.

    Raises:
        ValueError: If ``rho`` is not Hermitian, not of unit trace or has an
            eigenvalue below ``-POST_TOL``.
    """
    rho = as_hermitian(rho, dim)
    trace = np.trace(rho).real
    if abs(trace - 1.0) > POST_TOL:
        raise ValueError(f"Density matrix must have unit trace, got {trace}")
    if min_eigenvalue(rho) < -POST_TOL:
        raise ValueError("Density matrix must be positive semidefinite")
    return rho


def identity(dim: int) -> np.ndarray:
    """Return the identity operator of the given dimension."""
    return np.eye(dim, dtype=complex)


def pauli(axis: Axis) -> np.ndarray:
    """
    Return a Pauli matrix in the stored y-basis.

    Raises:
        ValueError: If ``axis`` is not one of "x", "y" or "z".
    """
    if axis not in PAULI_MATRICES:
        raise ValueError(f"Unsupported axis '{axis}'. Use one of: x, y, z")
    return PAULI_MATRICES[axis].copy()


def generalized_x(alpha: complex) -> np.ndarray:
    """Return X_alpha = [[0, alpha], [conj(alpha), 0]] for a unit-modulus alpha."""
    alpha = as_unit_complex(alpha, "alpha")
    return np.array([[0, alpha], [alpha.conjugate(), 0]], dtype=complex)


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Return the Kronecker product of two single-qubit operators.

    Raises:
        ValueError: If either factor is not a 2x2 matrix.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != (2, 2) or b.shape != (2, 2):
        raise ValueError(
            f"tensor expects two 2x2 operators, got shapes {a.shape} and {b.shape}"
        )
    return np.kron(a, b)


def projector(vector: np.ndarray) -> np.ndarray:
    """Return the rank-one projector onto a normalized vector."""
    vector = np.asarray(vector, dtype=complex)
    return np.outer(vector, vector.conj())


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Eigenvalues in descending order and eigenvectors as matrix columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """Return the operator sum of eigenvalue-weighted eigenprojectors."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.conj().T


def hermitian_eig(matrix: np.ndarray) -> EigenSystem:
    """
    Diagonalize a Hermitian operator.

    Args:
        matrix: A Hermitian operator.

    Returns:
        The eigensystem with eigenvalues sorted in descending order.

    Raises:
        ValueError: If the operator is not Hermitian.
    """
    matrix = as_hermitian(matrix)
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    return EigenSystem(eigenvalues[::-1].copy(), eigenvectors[:, ::-1].copy())


def min_eigenvalue(matrix: np.ndarray) -> float:
    """Return the smallest eigenvalue of a Hermitian operator."""
    matrix = as_hermitian(matrix)
    return float(np.linalg.eigvalsh(matrix)[0])


def is_psd(matrix: np.ndarray, tol: float = POST_TOL) -> bool:
    """Return whether a Hermitian operator is positive semidefinite within ``tol``."""
    return min_eigenvalue(matrix) >= -tol


@dataclass(frozen=True, eq=False)
class QuantumChannel:
    """
    A completely positive trace-preserving map in Kraus form.

    Each Kraus operator is an ``out_dim x in_dim`` matrix and the set satisfies
    sum K^dagger K = I within ``completeness_tol``.
    """

    in_dim: int
    out_dim: int
    kraus: tuple[np.ndarray, ...]
    completeness_tol: float = field(default=POST_TOL, repr=False)

    def __post_init__(self):
        kraus = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not kraus:
            raise ValueError("A channel needs at least one Kraus operator")
        for k in kraus:
            if k.shape != (self.out_dim, self.in_dim):
                raise ValueError(
                    f"Kraus operator shape {k.shape} does not match "
                    f"({self.out_dim}, {self.in_dim})"
                )
        completeness = sum(k.conj().T @ k for k in kraus)
        residual = np.max(np.abs(completeness - identity(self.in_dim)))
        if residual > self.completeness_tol:
            raise ValueError(
                f"Kraus operators are not trace preserving (residual {residual:.3e})"
            )
        object.__setattr__(self, "kraus", kraus)


def identity_channel(dim: int) -> QuantumChannel:
    """Return the identity channel on a space of dimension ``dim``."""
    return QuantumChannel(dim, dim, (identity(dim),))


def apply_channel(channel: QuantumChannel, rho: np.ndarray) -> np.ndarray:
    """
    Apply a channel to a density matrix.

    Raises:
        ValueError: If ``rho`` is not a valid state on the channel's input space.
    """
    rho = as_state(rho, channel.in_dim)
    output = sum(k @ rho @ k.conj().T for k in channel.kraus)
    return (output + output.conj().T) / 2


def adjoint_apply(channel: QuantumChannel, observable: np.ndarray) -> np.ndarray:
    """
    Apply the Heisenberg-picture adjoint of a channel to an observable.

    Raises:
        ValueError: If the observable is not Hermitian on the output space.
    """
    observable = as_hermitian(observable, channel.out_dim)
    output = sum(k.conj().T @ observable @ k for k in channel.kraus)
    return (output + output.conj().T) / 2


def _validate_povm(elements: Sequence[np.ndarray], dim: int) -> list[np.ndarray]:
    elements = [as_hermitian(e, dim) for e in elements]
    if not elements:
        raise ValueError("A POVM needs at least one element")
    for element in elements:
        if min_eigenvalue(element) < -POST_TOL:
            raise ValueError("POVM elements must be positive semidefinite")
    residual = np.max(np.abs(sum(elements) - identity(dim)))
    if residual > POST_TOL:
        raise ValueError(f"POVM elements do not sum to identity (residual {residual:.3e})")
    return elements


def born_probabilities(rho: np.ndarray, elements: Sequence[np.ndarray]) -> np.ndarray:
    """
    Return the Born-rule outcome distribution of a POVM on a state.

    Probabilities within ``POST_TOL`` below zero are clipped and the result is
    renormalized.

    Raises:
        ValueError: If the elements do not form a POVM or a probability is more
            negative than ``POST_TOL``.
    """
    rho = as_state(rho)
    elements = _validate_povm(elements, rho.shape[0])
    probabilities = np.array([np.trace(e @ rho).real for e in elements])
    if probabilities.min() < -POST_TOL:
        raise ValueError(f"Negative outcome probability {probabilities.min():.3e}")
    probabilities = np.clip(probabilities, 0.0, None)
    return probabilities / probabilities.sum()


def born_sample(
    rho: np.ndarray,
    elements: Sequence[np.ndarray],
    rng: np.random.Generator,
    size: int | None = None,
) -> int | np.ndarray:
    """
    Sample measurement outcomes by the Born rule.

    Args:
        rho: The measured state.
        elements: POVM elements; index ``k`` is returned for element ``k``.
        rng: Caller-owned random generator.
        size: Number of independent draws. A single index is returned when None.

    Returns:
        An outcome index, or an array of indices when ``size`` is given.
    """
    probabilities = born_probabilities(rho, elements)
    outcomes = rng.choice(len(probabilities), size=size, p=probabilities)
    return int(outcomes) if size is None else outcomes


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Return a Haar-random unitary from the QR decomposition of a Ginibre matrix."""
    ginibre = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(ginibre)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Return a random Hermitian operator with Gaussian entries."""
    ginibre = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (ginibre + ginibre.conj().T) / 2


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Return a random full-rank density matrix."""
    ginibre = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = ginibre @ ginibre.conj().T
    return rho / np.trace(rho).real


def random_channel(
    in_dim: int, out_dim: int, n_kraus: int, rng: np.random.Generator
) -> QuantumChannel:
    """Return a random channel from a random isometry split into Kraus blocks."""
    isometry = random_unitary(n_kraus * out_dim, rng)[:, :in_dim]
    kraus = tuple(
        isometry[k * out_dim : (k + 1) * out_dim] for k in range(n_kraus)
    )
    return QuantumChannel(in_dim, out_dim, kraus)
