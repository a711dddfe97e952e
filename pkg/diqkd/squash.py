"""
Bipartite squash channels for the CHSH test and the one-partite no-go check.

The bipartite squash maps the CHSH measurement onto a BB84-type test: its adjoint
keeps Z on Alice's side and sends X on both sides to a multiple of Y on both
sides. The one-partite check decides, through a Choi-matrix feasibility search,
whether any qubit channel reproduces a pair of observables.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import dask
import numpy as np
import scipy.optimize
import xarray

from diqkd.chsh import CHSHMeasurement, build_chsh, mprime, unit_circle_angles
from diqkd.operator_algebra import (
    HERMITIAN_TOL,
    POST_TOL,
    QuantumChannel,
    adjoint_apply,
    as_hermitian,
    as_state,
    generalized_x,
    identity,
    is_psd,
    min_eigenvalue,
    pauli,
    phase,
    tensor,
)

SQUASH_SLOPE = 1 + math.sqrt(2)
FEASIBLE_TOL = 1e-7
INFEASIBLE_GAP = 1e-4
STALL_IMPROVEMENT = 1e-9
STALL_ITERATIONS = 500
MAX_ITERATIONS = 100_000
POLISH_INTERVAL = 25
POLISH_GAP = 1e-3
# Rank-r polishing has 8r real unknowns against 24 real residuals.
MAX_POLISH_RANK = 3
FeasibilityStatus = Literal["feasible", "infeasible", "inconclusive"]


def z_rotation(theta: float) -> np.ndarray:
    """Return the rotation exp(-i theta Z / 2) about the Z axis."""
    return math.cos(theta / 2) * identity(2) - 1j * math.sin(theta / 2) * pauli("z")


def flip_amplitude(phi: float) -> float:
    """
    Return the Y Y amplitude a of the squash for angular parameter phi.

    a = Sign(sin phi) min(1, (1 + sqrt 2)|sin phi|), the sign that makes
    N = (1 + sqrt 2)(I - 2M') + a Y Y positive semidefinite in the stored basis.

    Raises:
        ValueError: If |phi| exceeds pi/4.
    """
    if abs(phi) > math.pi / 4 + HERMITIAN_TOL:
        raise ValueError(f"phi must satisfy |phi| <= pi/4, got {phi}")
    s = math.sin(phi)
    return math.copysign(min(1.0, SQUASH_SLOPE * abs(s)), s) if s != 0 else 0.0


@dataclass(frozen=True, eq=False)
class SquashChannel:
    """The squash F_{alpha,beta} with its CHSH measurement and flip amplitude."""

    alpha: complex
    beta: complex
    channel: QuantumChannel
    flip_amplitude: float
    phi: float
    measurement: CHSHMeasurement


def build_squash(alpha: complex, beta: complex) -> SquashChannel:
    """
    Build the squash for detector parameters (alpha, beta).

    Both sides are rotated by 90 degrees about Z; with probability (1 - a)/2 Bob
    is additionally rotated by 180 degrees.

    Raises:
        ValueError: If either parameter is not of unit modulus.
    """
    measurement = build_chsh(alpha, beta)
    a = flip_amplitude(measurement.phi)
    quarter = z_rotation(math.pi / 2)
    half = z_rotation(math.pi)
    kraus = (
        math.sqrt((1 + a) / 2) * tensor(quarter, quarter),
        math.sqrt((1 - a) / 2) * tensor(quarter, half @ quarter),
    )
    return SquashChannel(
        alpha=measurement.alpha,
        beta=measurement.beta,
        channel=QuantumChannel(4, 4, kraus),
        flip_amplitude=a,
        phi=measurement.phi,
        measurement=measurement,
    )


def squashed_test_operator(sq: SquashChannel) -> np.ndarray:
    """Return F^dagger(I + (sqrt 2 - 1) X X)."""
    x = pauli("x")
    return adjoint_apply(sq.channel, identity(4) + (math.sqrt(2) - 1) * tensor(x, x))


def verify_theorem2(sq: SquashChannel, tol: float = 1e-9) -> dict[str, float | bool]:
    """
    Check both squash conditions and the positivity certificate N.

    Returns:
        ``cond1_residual``: max entry of F^dagger(Z I) - Z I.
        ``cond2_min_eig``: smallest eigenvalue of F^dagger(I + (sqrt 2 - 1) X X) - 2M.
        ``n_min_eig``: smallest eigenvalue of (1 + sqrt 2)(I - 2M') + F^dagger(X X).
        ``mprime_gap``: smallest eigenvalue of M' - M.
        ``passed``: cond1 within ``tol`` and cond2 above ``-tol``.
    """
    z = pauli("z")
    x = pauli("x")
    z_on_alice = tensor(z, identity(2))
    m = sq.measurement
    op_prime, _ = mprime(m)

    cond1_residual = float(np.max(np.abs(adjoint_apply(sq.channel, z_on_alice) - z_on_alice)))
    cond2_min_eig = min_eigenvalue(squashed_test_operator(sq) - 2 * m.operator)
    n_operator = SQUASH_SLOPE * (identity(4) - 2 * op_prime) + adjoint_apply(
        sq.channel, tensor(x, x)
    )
    return {
        "cond1_residual": cond1_residual,
        "cond2_min_eig": cond2_min_eig,
        "n_min_eig": min_eigenvalue(n_operator),
        "mprime_gap": min_eigenvalue(op_prime - m.operator),
        "passed": cond1_residual <= tol and cond2_min_eig >= -tol,
    }


def squashed_test_value(sq: SquashChannel, rho: np.ndarray) -> dict[str, float]:
    """
    Compare the CHSH value of a state with the squashed-test value that bounds it.

    Returns:
        ``chsh_value`` Tr[M rho] and ``squashed_value``
        Tr[F^dagger(I + (sqrt 2 - 1) X X) rho] / 2.
    """
    rho = as_state(rho, 4)
    return {
        "chsh_value": float(np.trace(sq.measurement.operator @ rho).real),
        "squashed_value": float(np.trace(squashed_test_operator(sq) @ rho).real / 2),
    }


def theorem2_grid(grid_size: int, tol: float = 1e-9) -> xarray.Dataset:
    """Run ``verify_theorem2`` on a grid of detector phases."""
    angles = unit_circle_angles(grid_size)
    names = ("cond1_residual", "cond2_min_eig", "n_min_eig", "mprime_gap", "flip_amplitude")
    fields = {name: np.empty((grid_size, grid_size)) for name in names}
    passed = np.empty((grid_size, grid_size), dtype=bool)
    for i, theta_a in enumerate(angles):
        for j, theta_b in enumerate(angles):
            sq = build_squash(phase(theta_a), phase(theta_b))
            report = verify_theorem2(sq, tol)
            for name in names[:-1]:
                fields[name][i, j] = report[name]
            fields["flip_amplitude"][i, j] = sq.flip_amplitude
            passed[i, j] = report["passed"]

    logging.info(
        f"Verified squash conditions on {passed.size} cells, {int(passed.sum())} passed"
    )
    data_vars = {name: (("alpha_angle", "beta_angle"), v) for name, v in fields.items()}
    data_vars["passed"] = (("alpha_angle", "beta_angle"), passed)
    return xarray.Dataset(
        data_vars,
        coords={"alpha_angle": angles, "beta_angle": angles},
        attrs={"grid_size": grid_size, "tol": tol},
    )


@dataclass(frozen=True, eq=False)
class ChoiMatrix:
    """
    Choi matrix J = sum_ij |i><j| (x) F(|i><j|) with the input factor first.

    The channel is trace preserving iff the partial trace over the output is the
    identity, and completely positive iff J is positive semidefinite.
    """

    in_dim: int
    out_dim: int
    matrix: np.ndarray

    def __post_init__(self):
        size = self.in_dim * self.out_dim
        matrix = as_hermitian(self.matrix, size, tol=POST_TOL)
        object.__setattr__(self, "matrix", matrix)

    def partial_trace_output(self) -> np.ndarray:
        """Return Tr_out J, which is the identity for trace-preserving maps."""
        return choi_partial_trace(self.matrix, self.in_dim, self.out_dim)

    def is_trace_preserving(self, tol: float = POST_TOL) -> bool:
        residual = np.max(np.abs(self.partial_trace_output() - identity(self.in_dim)))
        return bool(residual <= tol)

    def is_completely_positive(self, tol: float = POST_TOL) -> bool:
        return is_psd(self.matrix, tol)


def choi_partial_trace(matrix: np.ndarray, in_dim: int, out_dim: int) -> np.ndarray:
    """Trace out the output factor of an input-first Choi matrix."""
    return matrix.reshape(in_dim, out_dim, in_dim, out_dim).trace(axis1=1, axis2=3)


def kraus_to_choi(channel: QuantumChannel) -> ChoiMatrix:
    """Return the Choi matrix of a channel given in Kraus form."""
    vectors = [k.T.reshape(-1) for k in channel.kraus]
    matrix = sum(np.outer(v, v.conj()) for v in vectors)
    return ChoiMatrix(channel.in_dim, channel.out_dim, matrix)


def choi_to_kraus(choi: ChoiMatrix, tol: float = 1e-6) -> QuantumChannel:
    """
    Recover Kraus operators from a positive semidefinite Choi matrix.

    Eigenvalues below ``POST_TOL`` are dropped; completeness is checked with ``tol``.
    """
    eigenvalues, eigenvectors = np.linalg.eigh(choi.matrix)
    kraus = tuple(
        math.sqrt(value) * eigenvectors[:, k].reshape(choi.in_dim, choi.out_dim).T
        for k, value in enumerate(eigenvalues)
        if value > POST_TOL
    )
    return QuantumChannel(choi.in_dim, choi.out_dim, kraus, completeness_tol=tol)


def choi_adjoint_apply(choi: ChoiMatrix, observable: np.ndarray) -> np.ndarray:
    """Return F^dagger(O) = (Tr_out[(I (x) O) J])^T."""
    lifted = np.kron(identity(choi.in_dim), observable) @ choi.matrix
    return choi_partial_trace(lifted, choi.in_dim, choi.out_dim).T


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    """Outcome of the one-partite squash feasibility search."""

    status: FeasibilityStatus
    residual: float
    iterations: int
    witness: ChoiMatrix | None = None
    gap: float = math.nan


def _constraint_system(mx: np.ndarray, mz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear map J -> (F^dagger(I), F^dagger(X), F^dagger(Z)) on vec(J), and targets."""
    observables = (identity(2), pauli("x"), pauli("z"))
    columns = []
    for p in range(4):
        for q in range(4):
            basis = np.zeros((4, 4), dtype=complex)
            basis[p, q] = 1
            columns.append(
                np.concatenate(
                    [
                        choi_partial_trace(np.kron(identity(2), o) @ basis, 2, 2).T.reshape(-1)
                        for o in observables
                    ]
                )
            )
    operator = np.array(columns).T
    target = np.concatenate([identity(2).reshape(-1), mx.reshape(-1), mz.reshape(-1)])
    return operator, target


def _project_psd(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, eigenvectors = np.linalg.eigh((matrix + matrix.conj().T) / 2)
    return (eigenvectors * np.clip(eigenvalues, 0.0, None)) @ eigenvectors.conj().T


def _polish(
    iterate: np.ndarray, operator: np.ndarray, target: np.ndarray
) -> np.ndarray | None:
    """
    Search the faces of the PSD cone near ``iterate`` for an exact solution.

    For each rank r, fits J = V V^dagger with V a 4 x r factor seeded from the top
    eigenpairs of the iterate, so the candidate is positive semidefinite by
    construction.
    """
    eigenvalues, eigenvectors = np.linalg.eigh(iterate)
    for rank in range(1, MAX_POLISH_RANK + 1):
        seed = eigenvectors[:, -rank:] * np.sqrt(np.clip(eigenvalues[-rank:], 0.0, None))

        def residuals(params, rank=rank):
            factor = (params[: 4 * rank] + 1j * params[4 * rank :]).reshape(4, rank)
            diff = operator @ (factor @ factor.conj().T).reshape(-1) - target
            return np.concatenate([diff.real, diff.imag])

        x0 = np.concatenate([seed.real.reshape(-1), seed.imag.reshape(-1)])
        solution = scipy.optimize.least_squares(
            residuals, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15
        )
        if np.max(np.abs(solution.fun)) <= FEASIBLE_TOL:
            params = solution.x
            factor = (params[: 4 * rank] + 1j * params[4 * rank :]).reshape(4, rank)
            return factor @ factor.conj().T
    return None


def onepartite_squash_feasibility(
    mx: np.ndarray, mz: np.ndarray, max_iterations: int = MAX_ITERATIONS
) -> FeasibilityReport:
    """
    Decide whether a qubit channel F exists with F^dagger(X) = Mx and F^dagger(Z) = Mz.

    Runs Dykstra's alternating projections between the affine set of Choi matrices
    meeting the trace-preserving and adjoint constraints and the PSD cone, starting
    from I/2. Every ``POLISH_INTERVAL`` iterations, once the two iterates are close,
    low-rank faces are searched for an exact witness.

    Args:
        mx: Target for F^dagger(X).
        mz: Target for F^dagger(Z).
        max_iterations: Iteration cap before reporting "inconclusive".

    Returns:
        "feasible" with a witness Choi matrix when the constraints are met within
        ``FEASIBLE_TOL``; "infeasible" when the distance between the sets stalls
        above ``INFEASIBLE_GAP``; "inconclusive" otherwise.

    Raises:
        ValueError: If an input is not Hermitian or has spectrum outside [-1, 1].
    """
    mx = as_hermitian(mx, 2)
    mz = as_hermitian(mz, 2)
    for name, target_op in (("Mx", mx), ("Mz", mz)):
        if np.max(np.abs(np.linalg.eigvalsh(target_op))) > 1 + HERMITIAN_TOL:
            raise ValueError(f"{name} must have spectrum in [-1, 1]")

    operator, target = _constraint_system(mx, mz)
    pseudo_inverse = np.linalg.pinv(operator)

    def affine_residual(matrix: np.ndarray) -> float:
        return float(np.max(np.abs(operator @ matrix.reshape(-1) - target)))

    x = identity(4) / 2
    p = np.zeros((4, 4), dtype=complex)
    q = np.zeros((4, 4), dtype=complex)
    best_gap = math.inf
    stall = 0
    gap = math.inf
    for iteration in range(1, max_iterations + 1):
        shifted = x + p
        y = shifted - (pseudo_inverse @ (operator @ shifted.reshape(-1) - target)).reshape(4, 4)
        y = (y + y.conj().T) / 2
        p = shifted - y
        x = _project_psd(y + q)
        q = y + q - x

        residual = affine_residual(x)
        gap = float(np.linalg.norm(x - y))
        if residual <= FEASIBLE_TOL:
            logging.info(f"Squash feasibility: feasible after {iteration} iterations")
            return FeasibilityReport("feasible", residual, iteration, ChoiMatrix(2, 2, x), gap)

        if iteration % POLISH_INTERVAL == 0 and gap < POLISH_GAP:
            witness = _polish(x, operator, target)
            if witness is not None:
                logging.info(
                    f"Squash feasibility: feasible after {iteration} iterations (polished)"
                )
                return FeasibilityReport(
                    "feasible",
                    affine_residual(witness),
                    iteration,
                    ChoiMatrix(2, 2, witness),
                    gap,
                )

        if gap < best_gap - STALL_IMPROVEMENT:
            best_gap = gap
            stall = 0
        else:
            stall += 1
        if stall >= STALL_ITERATIONS and best_gap > INFEASIBLE_GAP:
            logging.info(
                f"Squash feasibility: infeasible after {iteration} iterations, gap {best_gap:.3e}"
            )
            return FeasibilityReport("infeasible", residual, iteration, None, best_gap)

    logging.warning(f"Squash feasibility: inconclusive after {max_iterations} iterations")
    return FeasibilityReport("inconclusive", affine_residual(x), max_iterations, None, gap)


def nogo_alphas(grid_size: int) -> list[complex]:
    """
    Return ``grid_size`` phases at half steps around the circle, followed by i and -i.

    The half-step grid itself contains +-i only when ``grid_size`` is 2 modulo 4.
    """
    if grid_size < 1:
        raise ValueError(f"grid_size must be positive, got {grid_size}")
    angles = 2 * np.pi * (np.arange(grid_size) + 0.5) / grid_size
    return [phase(theta) for theta in angles] + [1j, -1j]


def nogo_scan(alphas: Sequence[complex]) -> list[FeasibilityReport]:
    """Run the feasibility search for Mx = X_alpha, Mz = Z at each alpha in parallel."""
    tasks = [
        dask.delayed(onepartite_squash_feasibility)(generalized_x(alpha), pauli("z"))
        for alpha in alphas
    ]
    return list(dask.compute(*tasks))
