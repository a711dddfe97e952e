"""CHSH measurement operator, its Bell eigenbasis and the dominating operator M'."""

import logging
import math
from dataclasses import dataclass

import numpy as np
import xarray

from diqkd.operator_algebra import (
    as_state,
    as_unit_complex,
    generalized_x,
    identity,
    pauli,
    phase,
    projector,
    tensor,
)

TSIRELSON_VALUE = 1 / math.sqrt(2)
BELL_LABELS = ("psi_plus", "psi_minus", "phi_plus", "phi_minus")

# Basis codes shared with the protocol simulator; "zp" is Bob's key basis.
BASIS_CODES = {"z": 0, "x": 1, "zp": 2}
Z_CODE, X_CODE, ZP_CODE = BASIS_CODES["z"], BASIS_CODES["x"], BASIS_CODES["zp"]


def bell_test_sign(c_a, c_b):
    """
    Return (-1)^t for the CHSH estimator, where t = 1 only when both bases are x.

    Works elementwise on arrays of basis codes.
    """
    both_x = (np.asarray(c_a) == X_CODE) & (np.asarray(c_b) == X_CODE)
    return np.where(both_x, -1, 1)


def chsh_operator(alpha: complex, beta: complex) -> np.ndarray:
    """Return 1/4 (Z Z + Z X_beta + X_alpha Z - X_alpha X_beta)."""
    z = pauli("z")
    x_alpha = generalized_x(alpha)
    x_beta = generalized_x(beta)
    return (
        tensor(z, z) + tensor(z, x_beta) + tensor(x_alpha, z) - tensor(x_alpha, x_beta)
    ) / 4


def _bell_phase(amplitude: complex) -> complex:
    if abs(amplitude) == 0.0:
        return 1.0 + 0j
    return amplitude.conjugate() / abs(amplitude)


def bell_vectors(mu: complex, nu: complex) -> np.ndarray:
    """
    Return the eigenbasis of the CHSH operator as columns in ``BELL_LABELS`` order.

    The Psi vectors span {|00>, |11>} and carry eigenvalues +-|mu|; the Phi vectors
    span {|01>, |10>} and carry +-|nu|.
    """
    psi_phase = _bell_phase(mu)
    phi_phase = _bell_phase(nu)
    vectors = np.zeros((4, 4), dtype=complex)
    for column, sign in ((0, 1), (1, -1)):
        vectors[0, column] = 1
        vectors[3, column] = sign * psi_phase
        vectors[1, column + 2] = 1
        vectors[2, column + 2] = sign * phi_phase
    return vectors / math.sqrt(2)


@dataclass(frozen=True, eq=False)
class CHSHMeasurement:
    """The CHSH operator for detector parameters (alpha, beta) and its spectrum."""

    alpha: complex
    beta: complex
    operator: np.ndarray
    mu: complex
    nu: complex
    bell_basis: np.ndarray

    @property
    def abs_mu(self) -> float:
        return abs(self.mu)

    @property
    def abs_nu(self) -> float:
        return abs(self.nu)

    @property
    def phi(self) -> float:
        """Angle with cos(phi) = |mu| + |nu| and sin(phi) = |mu| - |nu|."""
        return math.atan2(self.abs_mu - self.abs_nu, self.abs_mu + self.abs_nu)

    @property
    def bell_eigenvalues(self) -> np.ndarray:
        """Eigenvalues matching the columns of ``bell_basis``."""
        return np.array([self.abs_mu, -self.abs_mu, self.abs_nu, -self.abs_nu])

    def bell_state(self, label: str) -> np.ndarray:
        """Return the Bell eigenvector with the given label."""
        if label not in BELL_LABELS:
            raise ValueError(
                f"Unsupported Bell label '{label}'. Use one of: {', '.join(BELL_LABELS)}"
            )
        return self.bell_basis[:, BELL_LABELS.index(label)].copy()


def build_chsh(alpha: complex, beta: complex) -> CHSHMeasurement:
    """
    Build the CHSH measurement for unit-modulus detector parameters.

    Args:
        alpha: Parameter of Alice's generalized X operator.
        beta: Parameter of Bob's generalized X operator.

    Returns:
        The measurement with mu = (1 + alpha + beta - alpha beta)/4 and
        nu = (1 + alpha + conj(beta) - alpha conj(beta))/4.

    Raises:
        ValueError: If either parameter is not of unit modulus.
    """
    alpha = as_unit_complex(alpha, "alpha")
    beta = as_unit_complex(beta, "beta")
    mu = (1 + alpha + beta - alpha * beta) / 4
    nu = (1 + alpha + beta.conjugate() - alpha * beta.conjugate()) / 4
    return CHSHMeasurement(
        alpha=alpha,
        beta=beta,
        operator=chsh_operator(alpha, beta),
        mu=mu,
        nu=nu,
        bell_basis=bell_vectors(mu, nu),
    )


def spectral_reconstruction(m: CHSHMeasurement) -> np.ndarray:
    """Rebuild the CHSH operator from its Bell eigenbasis."""
    return (m.bell_basis * m.bell_eigenvalues) @ m.bell_basis.conj().T


def chsh_povm(m: CHSHMeasurement) -> tuple[np.ndarray, np.ndarray]:
    """Return the POVM elements (I + M)/2 and (I - M)/2 of the +-1 CHSH outcome."""
    eye = identity(4)
    return (eye + m.operator) / 2, (eye - m.operator) / 2


def local_observables(m: CHSHMeasurement) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Return Alice's and Bob's +-1 observables keyed by basis code."""
    z = pauli("z")
    alice = {Z_CODE: z, X_CODE: generalized_x(m.alpha)}
    bob = {Z_CODE: z, X_CODE: generalized_x(m.beta)}
    return alice, bob


def povm_equals_local_mixture(m: CHSHMeasurement, rho: np.ndarray) -> dict[str, float]:
    """
    Compare the CHSH POVM with a uniform mixture of local projective measurements.

    The mixture picks each of the four basis pairs with probability 1/4, measures
    the spectral projectors (I + r A)/2 and (I + r B)/2 and maps the outcome pair
    to s = r_A r_B (-1)^t.

    Returns:
        The probability of s = +1 computed both ways and their absolute difference.
    """
    rho = as_state(rho, 4)
    e_plus, _ = chsh_povm(m)
    povm_probability = float(np.trace(e_plus @ rho).real)

    alice, bob = local_observables(m)
    eye = identity(2)
    mixture_probability = 0.0
    for c_a, a in alice.items():
        for c_b, b in bob.items():
            sign = int(bell_test_sign(c_a, c_b))
            for r_a in (1, -1):
                for r_b in (1, -1):
                    if r_a * r_b * sign != 1:
                        continue
                    p = tensor((eye + r_a * a) / 2, (eye + r_b * b) / 2)
                    mixture_probability += np.trace(p @ rho).real / 4

    return {
        "povm_probability": povm_probability,
        "mixture_probability": float(mixture_probability),
        "difference": abs(povm_probability - float(mixture_probability)),
    }


def mprime(m: CHSHMeasurement) -> tuple[np.ndarray, float]:
    """
    Return the operator M' = M + 2|mu| P(psi_minus) + 2|nu| P(phi_minus) and phi.

    M' dominates M and equals (cos(phi) I + sin(phi) Y Y)/2.
    """
    operator = (
        m.operator
        + 2 * m.abs_mu * projector(m.bell_state("psi_minus"))
        + 2 * m.abs_nu * projector(m.bell_state("phi_minus"))
    )
    return (operator + operator.conj().T) / 2, m.phi


def mprime_closed_form(phi: float) -> np.ndarray:
    """Return (cos(phi) I + sin(phi) Y Y)/2."""
    y = pauli("y")
    return (math.cos(phi) * identity(4) + math.sin(phi) * tensor(y, y)) / 2


def unit_circle_angles(grid_size: int) -> np.ndarray:
    """Return ``grid_size`` equally spaced phase angles starting at 0."""
    if grid_size < 2:
        raise ValueError(f"grid_size must be at least 2, got {grid_size}")
    return 2 * np.pi * np.arange(grid_size) / grid_size


def spectrum_grid(grid_size: int) -> xarray.Dataset:
    """
    Scan the CHSH spectrum over a grid of detector phases.

    Args:
        grid_size: Number of phase angles for each of alpha and beta.

    Returns:
        A Dataset over (alpha_angle, beta_angle) with |mu|, |nu|, phi, the
        normalization error of |mu|^2 + |nu|^2, the spectral reconstruction error,
        the largest eigenvalue magnitude and the smallest eigenvalue of M' - M.
    """
    angles = unit_circle_angles(grid_size)
    shape = (grid_size, grid_size)
    fields = {
        name: np.empty(shape)
        for name in (
            "abs_mu",
            "abs_nu",
            "phi",
            "normalization_error",
            "reconstruction_error",
            "max_abs_eigenvalue",
            "mprime_gap",
        )
    }
    for i, theta_a in enumerate(angles):
        for j, theta_b in enumerate(angles):
            m = build_chsh(phase(theta_a), phase(theta_b))
            op_prime, phi = mprime(m)
            fields["abs_mu"][i, j] = m.abs_mu
            fields["abs_nu"][i, j] = m.abs_nu
            fields["phi"][i, j] = phi
            fields["normalization_error"][i, j] = abs(m.abs_mu**2 + m.abs_nu**2 - 0.5)
            fields["reconstruction_error"][i, j] = np.max(
                np.abs(m.operator - spectral_reconstruction(m))
            )
            fields["max_abs_eigenvalue"][i, j] = np.max(
                np.abs(np.linalg.eigvalsh(m.operator))
            )
            fields["mprime_gap"][i, j] = np.linalg.eigvalsh(op_prime - m.operator)[0]

    logging.info(f"Scanned CHSH spectrum on a {grid_size}x{grid_size} grid")
    return xarray.Dataset(
        {name: (("alpha_angle", "beta_angle"), values) for name, values in fields.items()},
        coords={"alpha_angle": angles, "beta_angle": angles},
        attrs={"grid_size": grid_size},
    )
