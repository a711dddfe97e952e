"""Scalar security formulas: entropies, key rates, finite-size key length and tail bounds."""

import logging
import math
from dataclasses import asdict, dataclass, field

import scipy.optimize
import scipy.special

SQUASH_SLOPE = 1 + math.sqrt(2)
TSIRELSON_VALUE = 1 / math.sqrt(2)
SAMPLE_DEVIATION_PREFACTOR = 4 * math.sqrt(3) * SQUASH_SLOPE
# Largest p for which (2 + sqrt 2) p stays on the increasing branch of h.
RATE_QBER_LIMIT = 1 / (2 * (2 + math.sqrt(2)))


def binary_entropy(p: float) -> float:
    """
    Return h(p) = -p log2 p - (1 - p) log2 (1 - p), with h(0) = h(1) = 0.

    Raises:
        ValueError: If p lies outside [0, 1].
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"binary_entropy expects p in [0, 1], got {p}")
    return float((scipy.special.entr(p) + scipy.special.entr(1 - p)) / math.log(2))


def _check_f_ec(f_ec: float) -> None:
    if f_ec < 1:
        raise ValueError(f"f_ec must be at least 1, got {f_ec}")


def asymptotic_rate(p: float, f_ec: float = 1.0) -> float:
    """
    Return the asymptotic key rate 1 - h((2 + sqrt 2) p) - f_ec h(p).

    The value is not clamped and may be negative.

    Raises:
        ValueError: If p is negative, (2 + sqrt 2) p exceeds 1 or f_ec < 1.
    """
    _check_f_ec(f_ec)
    if p < 0:
        raise ValueError(f"p must be non-negative, got {p}")
    phase_error = (2 + math.sqrt(2)) * p
    if phase_error > 1 + 1e-12:
        raise ValueError(f"(2 + sqrt 2) p must not exceed 1, got {phase_error}")
    return 1 - binary_entropy(min(phase_error, 1.0)) - f_ec * binary_entropy(p)


def qber_threshold(f_ec: float = 1.0) -> float:
    """
    Return the QBER at which ``asymptotic_rate`` crosses zero.

    Raises:
        ValueError: If f_ec < 1 or the rate does not change sign.
    """
    _check_f_ec(f_ec)
    low, high = 0.0, RATE_QBER_LIMIT
    if asymptotic_rate(low, f_ec) * asymptotic_rate(high, f_ec) > 0:
        raise ValueError(f"Asymptotic rate has no sign change for f_ec={f_ec}")
    return float(scipy.optimize.bisect(asymptotic_rate, low, high, args=(f_ec,), xtol=1e-12))


def device_dependent_rate(p: float, f_ec: float = 1.0) -> float:
    """Return the device-dependent BB84 reference rate 1 - h(p) - f_ec h(p)."""
    _check_f_ec(f_ec)
    if not 0.0 <= p <= 0.5:
        raise ValueError(f"p must lie in [0, 1/2], got {p}")
    return 1 - binary_entropy(p) - f_ec * binary_entropy(p)


def device_dependent_threshold(f_ec: float = 1.0) -> float:
    """Return the QBER at which ``device_dependent_rate`` crosses zero."""
    _check_f_ec(f_ec)
    return float(
        scipy.optimize.bisect(device_dependent_rate, 0.0, 0.5, args=(f_ec,), xtol=1e-12)
    )


def expected_chsh(p: float) -> float:
    """Return the CHSH value (1 - 2p)/sqrt 2 of a depolarized source with QBER p."""
    return (1 - 2 * p) * TSIRELSON_VALUE


def qber_from_chsh(s: float) -> float:
    """Invert ``expected_chsh``: the QBER of the depolarized source with CHSH value s."""
    return (1 - math.sqrt(2) * s) / 2


def _check_sizes(**sizes: int) -> None:
    for name, value in sizes.items():
        if value < 1:
            raise ValueError(f"{name} must be at least 1, got {value}")


def _check_eps(**values: float) -> None:
    for name, value in values.items():
        if not 0 < value <= 1:
            raise ValueError(f"{name} must lie in (0, 1], got {value}")


def delta_s(l_smp: int, eps_prime: float) -> float:
    """Return the CHSH sampling deviation sqrt((48 / l_smp) ln(2 / eps'))."""
    _check_sizes(l_smp=l_smp)
    _check_eps(eps_prime=eps_prime)
    return math.sqrt(48 / l_smp * math.log(2 / eps_prime))


def mu_statistical(n: int, l_smp: int, eps_prime: float) -> float:
    """Return the random-sampling deviation between sample and key positions."""
    _check_sizes(n=n, l_smp=l_smp)
    _check_eps(eps_prime=eps_prime)
    return math.sqrt(
        (n + l_smp) / (n * l_smp) * (l_smp + 1) / l_smp * math.log(2 / eps_prime)
    )


def mu_prime(n: int, l_smp: int, eps: float) -> float:
    """
    Return the combined deviation of the key-length formula.

    Equals (1 + sqrt 2) delta_s + mu_statistical evaluated at eps' = eps / 3.
    """
    _check_sizes(n=n, l_smp=l_smp)
    _check_eps(eps=eps)
    return (
        SAMPLE_DEVIATION_PREFACTOR + math.sqrt((n + l_smp) * (l_smp + 1) / (n * l_smp))
    ) * math.sqrt(math.log(6 / eps) / l_smp)


def syndrome_budget(n: int, f_ec: float, p: float) -> int:
    """Return the conventional syndrome length ceil(f_ec n h(p))."""
    _check_f_ec(f_ec)
    return math.ceil(f_ec * n * binary_entropy(p))


@dataclass(frozen=True)
class ProtocolParams:
    """
    Protocol configuration with derived pulse and sample counts.

    ``N`` is the number of pulse pairs, ceil(n / (1 - delta) / (1 - q)^2), and
    ``l_smp`` the number of sample pairs, ceil(n (q / (1 - q))^2).
    """

    n: int
    q: float
    delta: float
    S0: float
    eps: float
    eps_cor: float
    l_syn: int
    f_ec: float = 1.0
    N: int = field(init=False)
    l_smp: int = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if not 0 < self.q <= 0.5:
            raise ValueError(f"q must lie in (0, 1/2], got {self.q}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.S0 > TSIRELSON_VALUE + 1e-12:
            raise ValueError(f"S0 must not exceed 1/sqrt(2), got {self.S0}")
        for name in ("eps", "eps_cor"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        _check_f_ec(self.f_ec)
        if self.l_syn < 0:
            raise ValueError(f"l_syn must be non-negative, got {self.l_syn}")
        object.__setattr__(
            self, "N", math.ceil(self.n / (1 - self.delta) / (1 - self.q) ** 2)
        )
        object.__setattr__(
            self, "l_smp", math.ceil(self.n * (self.q / (1 - self.q)) ** 2)
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class KeyLengthReport:
    """Secret-key length with the deviations and subtraction terms behind it."""

    l: int  # noqa: E741
    mu_prime: float
    delta_s: float
    mu: float
    hmin_bound: float
    phase_error_argument: float
    components: dict[str, float]
    reason: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def phase_error_threshold(S0: float, delta_s_value: float) -> float:
    """Return the tolerated phase-error rate (1 + sqrt 2)(1/sqrt 2 - (S0 - delta_s))."""
    return SQUASH_SLOPE * (TSIRELSON_VALUE - (S0 - delta_s_value))


def squashed_test_threshold(S0: float, delta_s_value: float) -> float:
    """Return the X X sample-average threshold equivalent to CHSH >= S0 - delta_s."""
    return (S0 - delta_s_value - 0.5) / (TSIRELSON_VALUE - 0.5)


def hmin_bound_lemma3(params: ProtocolParams, eps_prime: float) -> float:
    """
    Return the smooth min-entropy lower bound of the sifted key.

    The bound is n(1 - h(arg)) - 2 l_smp - l_syn - log2(1/eps_cor) with
    arg = (1 + sqrt 2)(1/sqrt 2 - (S0 - delta_s)) + mu, reported as 0 when arg
    exceeds 1/2.
    """
    deviation = delta_s(params.l_smp, eps_prime)
    mu = mu_statistical(params.n, params.l_smp, eps_prime)
    argument = phase_error_threshold(params.S0, deviation) + mu
    if argument > 0.5:
        return 0.0
    return (
        params.n * (1 - binary_entropy(max(argument, 0.0)))
        - 2 * params.l_smp
        - params.l_syn
        - math.log2(1 / params.eps_cor)
    )


def finite_key_length(params: ProtocolParams) -> KeyLengthReport:
    """
    Return the secret-key length that keeps the protocol eps-secure.

    l = n(1 - h((1 + sqrt 2)(1/sqrt 2 - S0) + mu')) - 2 l_smp - l_syn
        - log2(1/eps_cor) - 2 log2(3/eps), floored and clamped at 0.

    Args:
        params: The protocol configuration.

    Returns:
        The report, with ``reason`` set when no key can be extracted.
    """
    eps_prime = params.eps / 3
    combined = mu_prime(params.n, params.l_smp, params.eps)
    deviation = delta_s(params.l_smp, eps_prime)
    mu = mu_statistical(params.n, params.l_smp, eps_prime)
    argument = SQUASH_SLOPE * (TSIRELSON_VALUE - params.S0) + combined
    hmin = hmin_bound_lemma3(params, eps_prime)

    components = {
        "sample_cost": 2.0 * params.l_smp,
        "syndrome": float(params.l_syn),
        "correctness": math.log2(1 / params.eps_cor),
        "privacy_amplification": 2 * math.log2(3 / params.eps),
    }
    if argument > 0.5:
        components["leading"] = 0.0
        logging.info(f"No key: phase-error argument {argument:.4f} exceeds 1/2")
        return KeyLengthReport(
            0, combined, deviation, mu, hmin, argument, components,
            reason="phase-error argument exceeds 1/2",
        )

    components["leading"] = params.n * (1 - binary_entropy(max(argument, 0.0)))
    raw = components["leading"] - sum(
        value for name, value in components.items() if name != "leading"
    )
    length = max(0, math.floor(raw))
    reason = None if length > 0 else "subtraction terms exceed the leading term"
    return KeyLengthReport(length, combined, deviation, mu, hmin, argument, components, reason)


def finite_key_rate(params: ProtocolParams) -> float:
    """Return the secret-key bits per pulse pair, l / N."""
    return finite_key_length(params).l / params.N


def leftover_bound(hmin: float, l: int, eps_prime: float) -> float:  # noqa: E741
    """Return the leftover-hashing distance bound 2 eps' + 2^(-(hmin - l)/2)."""
    return 2 * eps_prime + 2 ** (-(hmin - l) / 2)


def satisfies_security_condition(hmin: float, l: int, eps: float) -> bool:  # noqa: E741
    """Return whether hmin >= l + 2 log2(1/eps) + 6, sufficient for eps-security."""
    return hmin >= l + 2 * math.log2(1 / eps) + 6


def chernoff_abort_bound(params: ProtocolParams) -> dict[str, float]:
    """
    Bound the probability that too few sample or sifted pairs are labelled.

    Returns:
        ``printed``: 2 exp(-(delta q)^2 / 2), which carries no sample-size factor.
        ``corrected``: the union of multiplicative Chernoff lower tails for the
        both-sample count (mean N q^2) and the both-sifted count (mean N (1-q)^2),
        capped at 1.
    """
    sifted_mean = params.N * (1 - params.q) ** 2
    sample_mean = params.N * params.q**2
    sifted_margin = 1 - params.n / sifted_mean
    sample_margin = 1 - params.l_smp / sample_mean

    def lower_tail(margin: float, mean: float) -> float:
        return math.exp(-(margin**2) * mean / 2) if margin > 0 else 1.0

    corrected = lower_tail(sifted_margin, sifted_mean) + lower_tail(sample_margin, sample_mean)
    return {
        "printed": 2 * math.exp(-((params.delta * params.q) ** 2) / 2),
        "corrected": min(1.0, corrected),
        "sifted_margin": sifted_margin,
        "sample_margin": sample_margin,
    }


def azuma_tail(l_smp: int, delta_s_value: float) -> float:
    """Return exp(-l_smp delta_s^2 / 48)."""
    _check_sizes(l_smp=l_smp)
    return math.exp(-l_smp * delta_s_value**2 / 48)
