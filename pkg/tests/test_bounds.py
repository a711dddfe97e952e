"""Tests for the security bounds and key-rate formulas."""

import math

import pytest

from diqkd.bounds import (
    RATE_QBER_LIMIT,
    SQUASH_SLOPE,
    ProtocolParams,
    asymptotic_rate,
    azuma_tail,
    binary_entropy,
    chernoff_abort_bound,
    delta_s,
    device_dependent_rate,
    device_dependent_threshold,
    expected_chsh,
    finite_key_length,
    finite_key_rate,
    hmin_bound_lemma3,
    leftover_bound,
    mu_prime,
    mu_statistical,
    phase_error_threshold,
    qber_from_chsh,
    qber_threshold,
    satisfies_security_condition,
    squashed_test_threshold,
    syndrome_budget,
)


def make_params(n=10**10, q=0.1, S0=0.69, p_est=0.01, delta=0.01, eps=1e-9, f_ec=1.0):
    """Build protocol parameters with the syndrome budget for ``p_est``."""
    return ProtocolParams(
        n=n,
        q=q,
        delta=delta,
        S0=S0,
        eps=eps,
        eps_cor=1e-9,
        l_syn=syndrome_budget(n, f_ec, p_est),
        f_ec=f_ec,
    )


def test_binary_entropy_values():
    """Endpoints, the maximum and a reference value."""
    assert binary_entropy(0) == 0
    assert binary_entropy(1) == 0
    assert binary_entropy(0.5) == pytest.approx(1)
    assert binary_entropy(0.11) == pytest.approx(0.499916, abs=1e-6)


def test_binary_entropy_rejects_out_of_range():
    """Probabilities outside [0, 1] are rejected."""
    with pytest.raises(ValueError, match="binary_entropy expects p"):
        binary_entropy(1.2)


def test_asymptotic_rate_examples():
    """Rate 1 at p = 0 and about 0.499 at p = 0.02."""
    assert asymptotic_rate(0) == pytest.approx(1)
    assert asymptotic_rate(0.02, 1) == pytest.approx(0.49908, abs=1e-4)
    assert asymptotic_rate(0.02, 1.2) < asymptotic_rate(0.02, 1)


def test_asymptotic_rate_rejects_bad_inputs():
    """Negative p, too large a phase error or f_ec < 1 are rejected."""
    with pytest.raises(ValueError, match="non-negative"):
        asymptotic_rate(-0.01)
    with pytest.raises(ValueError, match="must not exceed 1"):
        asymptotic_rate(0.4)
    with pytest.raises(ValueError, match="f_ec must be at least 1"):
        asymptotic_rate(0.01, 0.9)


def test_qber_threshold_is_a_root():
    """The threshold is where the asymptotic rate changes sign."""
    threshold = qber_threshold()
    assert 0.05 < threshold < 0.06
    assert abs(asymptotic_rate(threshold)) <= 1e-9
    assert asymptotic_rate(threshold - 1e-3) > 0
    assert asymptotic_rate(min(threshold + 1e-3, RATE_QBER_LIMIT)) < 0
    assert qber_threshold(1.2) < threshold


def test_device_dependent_threshold():
    """The BB84 reference curve vanishes near 11%."""
    threshold = device_dependent_threshold()
    assert threshold == pytest.approx(0.110028, abs=1e-5)
    assert device_dependent_rate(threshold) == pytest.approx(0, abs=1e-9)
    assert device_dependent_threshold() > qber_threshold()


def test_chsh_and_qber_are_inverse():
    """The depolarizing-model CHSH value and QBER convert both ways."""
    assert expected_chsh(0) == pytest.approx(1 / math.sqrt(2))
    assert expected_chsh(0.5) == pytest.approx(0)
    for p in (0.0, 0.01, 0.05, 0.2):
        assert qber_from_chsh(expected_chsh(p)) == pytest.approx(p, abs=1e-15)


def test_protocol_params_derived_counts():
    """N and l_smp follow from n, q and delta."""
    params = ProtocolParams(n=10**6, q=0.1, delta=0.01, S0=0.69, eps=1e-9, eps_cor=1e-9, l_syn=0)
    assert params.l_smp == 12346
    assert params.N == math.ceil(10**6 / 0.99 / 0.81)
    assert params.to_dict()["l_smp"] == 12346


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"q": 0.0}, "q must lie"),
        ({"q": 0.6}, "q must lie"),
        ({"delta": 1.0}, "delta must lie"),
        ({"S0": 0.8}, "S0 must not exceed"),
        ({"eps": 0.0}, "eps must lie"),
        ({"l_syn": -1}, "l_syn must be non-negative"),
        ({"n": 0}, "n must be at least 1"),
    ],
)
def test_protocol_params_validation(overrides, message):
    """Invalid protocol configurations are rejected."""
    kwargs = {"n": 1000, "q": 0.1, "delta": 0.1, "S0": 0.6, "eps": 1e-9, "eps_cor": 1e-9, "l_syn": 0}
    kwargs.update(overrides)
    with pytest.raises(ValueError, match=message):
        ProtocolParams(**kwargs)


def test_mu_prime_combines_deviations():
    """mu' equals (1 + sqrt 2) delta_s + mu at eps' = eps / 3."""
    for n, l_smp, eps in ((10**6, 12346, 1e-9), (10**10, 123456791, 1e-6), (500, 10, 0.5)):
        expected = SQUASH_SLOPE * delta_s(l_smp, eps / 3) + mu_statistical(n, l_smp, eps / 3)
        assert mu_prime(n, l_smp, eps) == pytest.approx(expected, rel=1e-12)


def test_delta_s_rejects_bad_inputs():
    """Sample sizes must be positive and eps' must lie in (0, 1]."""
    with pytest.raises(ValueError, match="l_smp must be at least 1"):
        delta_s(0, 1e-9)
    with pytest.raises(ValueError, match="eps_prime must lie"):
        delta_s(100, 0.0)


def test_thresholds_agree():
    """The phase-error rate is half the X X sample deficit."""
    assert phase_error_threshold(1 / math.sqrt(2), 0) == pytest.approx(0, abs=1e-15)
    assert squashed_test_threshold(1 / math.sqrt(2), 0) == pytest.approx(1)
    for s0, deviation in ((0.69, 0.01), (0.6, 0.0), (0.7, 0.05)):
        c = squashed_test_threshold(s0, deviation)
        assert phase_error_threshold(s0, deviation) == pytest.approx((1 - c) / 2)


def test_finite_key_length_no_key_at_small_n():
    """At n = 1e6 the phase-error argument exceeds 1/2 and no key is produced."""
    report = finite_key_length(make_params(n=10**6))
    assert report.l == 0
    assert report.phase_error_argument == pytest.approx(0.80, abs=0.01)
    assert report.reason == "phase-error argument exceeds 1/2"
    assert report.components["leading"] == 0.0


def test_finite_key_length_positive_key():
    """At n = 1e10 the key length matches a direct evaluation of the formula."""
    params = make_params()
    report = finite_key_length(params)
    argument = SQUASH_SLOPE * (1 / math.sqrt(2) - params.S0) + mu_prime(
        params.n, params.l_smp, params.eps
    )
    expected = (
        params.n * (1 - binary_entropy(argument))
        - 2 * params.l_smp
        - params.l_syn
        - math.log2(1 / params.eps_cor)
        - 2 * math.log2(3 / params.eps)
    )
    assert report.l > 0
    assert report.reason is None
    assert abs(report.l - math.floor(expected)) <= 1
    assert report.phase_error_argument == pytest.approx(argument)
    assert report.to_dict()["components"]["syndrome"] == params.l_syn
    assert finite_key_rate(params) == pytest.approx(report.l / params.N)


def test_finite_key_length_matches_min_entropy_bound():
    """l = floor(hmin - 2 log2(3/eps)) and the leftover distance is at most eps."""
    params = make_params()
    report = finite_key_length(params)
    eps_prime = params.eps / 3
    hmin = hmin_bound_lemma3(params, eps_prime)
    assert report.hmin_bound == pytest.approx(hmin)
    assert abs(report.l - math.floor(hmin - 2 * math.log2(3 / params.eps))) <= 1
    assert leftover_bound(hmin, report.l, eps_prime) <= params.eps * (1 + 1e-6)


def test_leftover_bound_identity():
    """Extracting hmin - 2 log2(3/eps) bits leaves distance exactly eps."""
    eps = 1e-9
    hmin = 1e6
    assert leftover_bound(hmin, hmin - 2 * math.log2(3 / eps), eps / 3) == pytest.approx(eps)


def test_security_condition_is_stricter():
    """The eps/4 condition needs six extra bits beyond 2 log2(1/eps)."""
    params = make_params()
    report = finite_key_length(params)
    hmin = report.hmin_bound
    assert not satisfies_security_condition(hmin, report.l, params.eps)
    assert satisfies_security_condition(hmin, report.l - 3, params.eps)


def test_finite_key_rate_approaches_asymptotic_rate():
    """With q = n^-0.4 the gap to the asymptotic rate shrinks below 0.01."""
    p = 0.02
    f_ec = 1.0
    target = asymptotic_rate(p, f_ec)
    gaps = []
    for exponent in range(10, 55, 5):
        n = 10**exponent
        params = make_params(
            n=n, q=n**-0.4, S0=expected_chsh(p), p_est=p, delta=1e-3, f_ec=f_ec
        )
        gaps.append(target - finite_key_rate(params))
    assert finite_key_length(make_params(n=10**8, q=10**-3.2, S0=expected_chsh(p), p_est=p)).l == 0
    assert all(later <= earlier + 1e-12 for earlier, later in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.01
    assert gaps[0] == pytest.approx(target)


def test_chernoff_abort_bound_values():
    """The printed bound and the corrected union bound."""
    params = make_params(n=10**4, q=0.3, delta=0.1)
    bound = chernoff_abort_bound(params)
    assert bound["printed"] == pytest.approx(2 * math.exp(-((0.1 * 0.3) ** 2) / 2))
    assert 0 < bound["corrected"] <= 1
    assert bound["sifted_margin"] > 0
    assert bound["sample_margin"] > 0


def test_azuma_tail_value():
    """exp(-l_smp delta_s^2 / 48) at l_smp = 4800 and delta_s = 0.1 is 1/e."""
    assert azuma_tail(4800, 0.1) == pytest.approx(math.exp(-1))
