"""Tests for the squash module."""

import math

import numpy as np
import pytest

from diqkd.operator_algebra import (
    adjoint_apply,
    apply_channel,
    generalized_x,
    identity,
    pauli,
    phase,
    random_channel,
    random_hermitian,
    random_state,
    tensor,
)
from diqkd.squash import (
    SQUASH_SLOPE,
    ChoiMatrix,
    build_squash,
    choi_adjoint_apply,
    choi_to_kraus,
    flip_amplitude,
    kraus_to_choi,
    nogo_alphas,
    nogo_scan,
    onepartite_squash_feasibility,
    squashed_test_value,
    theorem2_grid,
    verify_theorem2,
)


@pytest.fixture
def rng():
    """Create a seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture(scope="module")
def grid():
    """Verify the squash conditions on the 64x64 grid once for the module."""
    return theorem2_grid(64)


def test_flip_amplitude_examples():
    """The amplitude saturates at +-1 and vanishes at phi = 0."""
    assert flip_amplitude(math.pi / 4) == 1.0
    assert flip_amplitude(-math.pi / 4) == -1.0
    assert flip_amplitude(0.0) == 0.0
    assert flip_amplitude(0.1) == pytest.approx(SQUASH_SLOPE * math.sin(0.1))


def test_flip_amplitude_rejects_large_phi():
    """Angles beyond pi/4 are outside the CHSH range."""
    with pytest.raises(ValueError, match="phi must satisfy"):
        flip_amplitude(1.0)


def test_squash_at_aligned_detectors():
    """At alpha = beta = 1 the flip amplitude is zero."""
    sq = build_squash(1, 1)
    assert sq.phi == pytest.approx(0, abs=1e-15)
    assert sq.flip_amplitude == 0.0
    assert len(sq.channel.kraus) == 2


def test_squash_maps_xx_to_yy_at_ideal_alignment():
    """At alpha = beta = -i the adjoint sends X X to Y Y."""
    sq = build_squash(-1j, -1j)
    assert sq.flip_amplitude == pytest.approx(1.0)
    x = pauli("x")
    y = pauli("y")
    np.testing.assert_allclose(adjoint_apply(sq.channel, tensor(x, x)), tensor(y, y), atol=1e-12)


def test_alice_z_is_preserved_for_random_phases(rng):
    """F^dagger(Z I) = Z I for random detector phases."""
    for theta_a, theta_b in rng.uniform(0, 2 * math.pi, size=(100, 2)):
        report = verify_theorem2(build_squash(phase(theta_a), phase(theta_b)))
        assert report["cond1_residual"] <= 1e-12
        assert report["passed"]


def test_theorem2_holds_on_grid(grid):
    """Both squash conditions hold on every grid cell."""
    assert bool(grid["passed"].all())
    assert float(grid["cond1_residual"].max()) <= 1e-12
    assert float(grid["cond2_min_eig"].min()) >= -1e-9


def test_positivity_certificate_on_grid(grid):
    """The certificate N and M' - M are positive semidefinite on the grid."""
    assert float(grid["n_min_eig"].min()) >= -1e-9
    assert float(grid["mprime_gap"].min()) >= -1e-10
    assert float(np.abs(grid["flip_amplitude"]).max()) <= 1.0


def test_squashed_value_bounds_chsh_value(rng):
    """The squashed test never reports less than the CHSH value."""
    for _ in range(100):
        theta_a, theta_b = rng.uniform(0, 2 * math.pi, size=2)
        sq = build_squash(phase(theta_a), phase(theta_b))
        values = squashed_test_value(sq, random_state(4, rng))
        assert values["squashed_value"] >= values["chsh_value"] - 1e-9


def test_squash_choi_is_trace_preserving_and_cp():
    """The Choi matrix of a squash is a valid channel."""
    choi = kraus_to_choi(build_squash(phase(0.4), phase(2.5)).channel)
    assert choi.is_trace_preserving()
    assert choi.is_completely_positive()
    np.testing.assert_allclose(choi.partial_trace_output(), identity(4), atol=1e-12)


def test_choi_round_trip_preserves_action(rng):
    """Kraus -> Choi -> Kraus keeps the channel action."""
    for _ in range(20):
        channel = random_channel(2, 2, 3, rng)
        rebuilt = choi_to_kraus(kraus_to_choi(channel))
        rho = random_state(2, rng)
        np.testing.assert_allclose(
            apply_channel(rebuilt, rho), apply_channel(channel, rho), atol=1e-10
        )


def test_choi_adjoint_matches_kraus_adjoint(rng):
    """Adjoint actions agree between Choi and Kraus forms."""
    for _ in range(20):
        channel = random_channel(2, 4, 2, rng)
        observable = random_hermitian(4, rng)
        np.testing.assert_allclose(
            choi_adjoint_apply(kraus_to_choi(channel), observable),
            adjoint_apply(channel, observable),
            atol=1e-10,
        )


def test_choi_matrix_rejects_non_hermitian():
    """Choi matrices must be Hermitian."""
    matrix = np.zeros((4, 4))
    matrix[0, 1] = 1
    with pytest.raises(ValueError, match="not Hermitian"):
        ChoiMatrix(2, 2, matrix)


@pytest.mark.parametrize("alpha", [1j, -1j])
def test_onepartite_squash_feasible_at_plus_minus_i(alpha):
    """X_alpha and Z are reachable from a qubit channel when alpha = +-i."""
    mx = generalized_x(alpha)
    mz = pauli("z")
    report = onepartite_squash_feasibility(mx, mz)
    assert report.status == "feasible"
    assert report.witness.is_completely_positive()
    assert report.witness.is_trace_preserving(tol=1e-6)
    np.testing.assert_allclose(choi_adjoint_apply(report.witness, pauli("x")), mx, atol=1e-6)
    channel = choi_to_kraus(report.witness)
    np.testing.assert_allclose(adjoint_apply(channel, pauli("x")), mx, atol=1e-6)
    np.testing.assert_allclose(adjoint_apply(channel, mz), mz, atol=1e-6)


def test_onepartite_squash_infeasible_off_axis():
    """No qubit channel reproduces X_alpha and Z at alpha = e^{i pi/4}."""
    report = onepartite_squash_feasibility(generalized_x(phase(math.pi / 4)), pauli("z"))
    assert report.status == "infeasible"
    assert report.witness is None
    assert report.gap > 1e-4


def test_onepartite_squash_rejects_non_hermitian():
    """Targets must be Hermitian."""
    with pytest.raises(ValueError, match="not Hermitian"):
        onepartite_squash_feasibility(np.array([[0, 1], [0, 0]]), pauli("z"))


def test_onepartite_squash_rejects_large_spectrum():
    """Targets must have spectrum in [-1, 1]."""
    with pytest.raises(ValueError, match="spectrum"):
        onepartite_squash_feasibility(pauli("x"), 2 * pauli("z"))


def test_nogo_alphas_layout():
    """Grid phases avoid +-i and the two special points come last."""
    alphas = nogo_alphas(16)
    assert len(alphas) == 18
    assert alphas[-2:] == [1j, -1j]
    assert min(abs(abs(a.imag) - 1) for a in alphas[:-2]) > 1e-3


def test_nogo_scan_on_grid():
    """Only alpha = +-i is feasible across the scan."""
    alphas = nogo_alphas(16)
    reports = nogo_scan(alphas)
    statuses = [r.status for r in reports]
    assert statuses[:-2] == ["infeasible"] * 16
    assert statuses[-2:] == ["feasible", "feasible"]
