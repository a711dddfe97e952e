"""
Monte Carlo simulation of the entanglement-based protocol with memoryless detectors.

Eve supplies a two-qubit state and detector parameters for every pulse pair.
Alice and Bob label each pulse as a sample or sifted pulse, measure, estimate the
CHSH value, sift, correct, verify and amplify. Error correction is an oracle that
accounts for the syndrome length without running a decoder.
"""

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import dask
import numpy as np

from diqkd.bounds import (
    ProtocolParams,
    azuma_tail,
    finite_key_length,
    qber_from_chsh,
    syndrome_budget,
)
from diqkd.chsh import (
    X_CODE,
    Z_CODE,
    ZP_CODE,
    CHSHMeasurement,
    bell_test_sign,
    build_chsh,
)
from diqkd.hashing import ToeplitzHash, hash_bits, pack_bits, sample_hash
from diqkd.operator_algebra import (
    as_state,
    as_unit_complex,
    born_probabilities,
    generalized_x,
    hermitian_eig,
    identity,
    pauli,
    projector,
    tensor,
)

SCHEMA_VERSION = 1
StrategyKind = Literal["iid_depolarizing", "constant_misalignment", "custom"]
AbortReason = Literal["insufficient_pulses", "chsh_failed", "verify_failed"]
ABORT_REASONS: tuple[AbortReason, ...] = (
    "insufficient_pulses",
    "chsh_failed",
    "verify_failed",
)
# Joint outcome order: (+,+), (+,-), (-,+), (-,-).
OUTCOME_SIGNS = ((1, 1), (1, -1), (-1, 1), (-1, -1))
AZUMA_CHUNK = 500


@dataclass(frozen=True, eq=False)
class Source:
    """One pulse-pair source: a state and the +-1 observables of each basis."""

    state: np.ndarray
    alice: dict[int, np.ndarray]
    bob: dict[int, np.ndarray]

    def outcome_table(self) -> np.ndarray:
        """Return outcome probabilities indexed by [Alice basis, Bob basis, outcome]."""
        table = np.zeros((2, 3, 4))
        eye = identity(2)
        for c_a in (Z_CODE, X_CODE):
            for c_b in (Z_CODE, X_CODE, ZP_CODE):
                elements = [
                    tensor((eye + r_a * self.alice[c_a]) / 2, (eye + r_b * self.bob[c_b]) / 2)
                    for r_a, r_b in OUTCOME_SIGNS
                ]
                table[c_a, c_b] = born_probabilities(self.state, elements)
        return table


def depolarize(rho: np.ndarray, p: float) -> np.ndarray:
    """Mix a two-qubit state with white noise so that a perfect key basis has QBER p."""
    return (1 - 2 * p) * rho + 2 * p * identity(4) / 4


def _calibrated_source(p: float) -> Source:
    z = pauli("z")
    x = pauli("x")
    # Joint +1 eigenstate of Z Z and X X.
    state = projector(hermitian_eig(tensor(z, z) + tensor(x, x)).eigenvectors[:, 0])
    return Source(
        state=depolarize(state, p),
        alice={Z_CODE: z, X_CODE: x},
        bob={Z_CODE: (z + x) / math.sqrt(2), X_CODE: (z - x) / math.sqrt(2), ZP_CODE: z},
    )


def _misaligned_source(rho: np.ndarray, alpha: complex, beta: complex) -> Source:
    z = pauli("z")
    return Source(
        state=rho,
        alice={Z_CODE: z, X_CODE: generalized_x(alpha)},
        bob={Z_CODE: z, X_CODE: generalized_x(beta), ZP_CODE: z},
    )


def optimal_chsh_state(m: CHSHMeasurement) -> np.ndarray:
    """Return the projector on the top Bell eigenvector of a CHSH measurement."""
    label = "psi_plus" if m.abs_mu >= m.abs_nu else "phi_plus"
    return projector(m.bell_state(label))


@dataclass(frozen=True, eq=False)
class EveStrategy:
    """
    How Eve prepares pulse pairs and sets the detectors.

    ``iid_depolarizing`` uses the calibrated frame: Alice measures Z and X, Bob
    measures (Z + X)/sqrt 2 and (Z - X)/sqrt 2 for samples and Z for the key.
    ``constant_misalignment`` uses X_alpha for Alice and X_beta for Bob on the
    state maximizing the CHSH value, depolarized by p. ``custom`` cycles through
    per-pulse states and parameters.
    """

    kind: StrategyKind
    p: float = 0.0
    alpha: complex = -1j
    beta: complex = -1j
    states: tuple[np.ndarray, ...] = ()
    alphas: tuple[complex, ...] = ()
    betas: tuple[complex, ...] = ()

    def __post_init__(self):
        if self.kind not in ("iid_depolarizing", "constant_misalignment", "custom"):
            raise ValueError(f"Unsupported strategy '{self.kind}'")
        if not 0 <= self.p <= 0.5:
            raise ValueError(f"p must lie in [0, 1/2], got {self.p}")
        as_unit_complex(self.alpha, "alpha")
        as_unit_complex(self.beta, "beta")
        if self.kind == "custom":
            if not self.states or not len(self.states) == len(self.alphas) == len(self.betas):
                raise ValueError("custom strategy needs equally many states, alphas and betas")
            for rho in self.states:
                as_state(rho, 4)
            for value in (*self.alphas, *self.betas):
                as_unit_complex(value)

    @classmethod
    def iid_depolarizing(cls, p: float) -> "EveStrategy":
        return cls("iid_depolarizing", p=p)

    @classmethod
    def constant_misalignment(cls, alpha: complex, beta: complex, p: float = 0.0) -> "EveStrategy":
        return cls("constant_misalignment", p=p, alpha=alpha, beta=beta)

    @classmethod
    def custom(
        cls,
        states: Sequence[np.ndarray],
        alphas: Sequence[complex],
        betas: Sequence[complex],
    ) -> "EveStrategy":
        return cls("custom", states=tuple(states), alphas=tuple(alphas), betas=tuple(betas))

    def sources(self, n_pulses: int) -> tuple[list[Source], np.ndarray]:
        """Return the distinct sources and the source index of every pulse."""
        if self.kind == "iid_depolarizing":
            return [_calibrated_source(self.p)], np.zeros(n_pulses, dtype=np.int64)
        if self.kind == "constant_misalignment":
            rho = depolarize(optimal_chsh_state(build_chsh(self.alpha, self.beta)), self.p)
            return (
                [_misaligned_source(rho, self.alpha, self.beta)],
                np.zeros(n_pulses, dtype=np.int64),
            )
        sources = [
            _misaligned_source(rho, alpha, beta)
            for rho, alpha, beta in zip(self.states, self.alphas, self.betas)
        ]
        return sources, np.arange(n_pulses, dtype=np.int64) % len(sources)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "p": self.p,
            "alpha": [self.alpha.real, self.alpha.imag],
            "beta": [self.beta.real, self.beta.imag],
            "custom_states": len(self.states),
        }


def measure_pulses(
    tables: np.ndarray,
    source_index: np.ndarray,
    c_a: np.ndarray,
    c_b: np.ndarray,
    uniforms: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw +-1 outcomes for each pulse by inverting its joint outcome distribution.

    Each pulse depends only on its own source, bases and uniform draw.

    Args:
        tables: Outcome tables stacked over sources, shape (sources, 2, 3, 4).
        source_index: Source of every pulse.
        c_a: Alice's basis code per pulse.
        c_b: Bob's basis code per pulse.
        uniforms: One uniform number in [0, 1) per pulse.

    Returns:
        Alice's and Bob's outcomes as int8 arrays.
    """
    cumulative = np.cumsum(tables[source_index, c_a, c_b], axis=1)
    outcome = (uniforms[:, None] >= cumulative[:, :3]).sum(axis=1)
    r_a = np.where(outcome < 2, 1, -1).astype(np.int8)
    r_b = np.where(outcome % 2 == 0, 1, -1).astype(np.int8)
    return r_a, r_b


def chsh_statistic(c_a, c_b, r_a, r_b) -> float:
    """
    Return the mean of r_A r_B (-1)^t over the given samples.

    Raises:
        ValueError: If no samples are given or the arrays differ in length.
    """
    c_a, c_b, r_a, r_b = (np.asarray(v) for v in (c_a, c_b, r_a, r_b))
    if not c_a.size:
        raise ValueError("CHSH estimate needs at least one sample")
    if not c_a.shape == c_b.shape == r_a.shape == r_b.shape:
        raise ValueError("Bases and outcomes must have equal lengths")
    return float(np.mean(r_a.astype(np.int64) * r_b * bell_test_sign(c_a, c_b)))


def qber(u, u_ref) -> float:
    """
    Return the fraction of positions where two bit strings differ.

    Raises:
        ValueError: If the strings differ in length or are empty.
    """
    u = np.asarray(u)
    u_ref = np.asarray(u_ref)
    if u.shape != u_ref.shape:
        raise ValueError(f"Bit strings differ in length: {u.size} and {u_ref.size}")
    if not u.size:
        raise ValueError("QBER of empty bit strings is undefined")
    return float(np.mean(u != u_ref))


def outcomes_to_bits(outcomes: np.ndarray) -> np.ndarray:
    """Map +1 to bit 0 and -1 to bit 1."""
    return (np.asarray(outcomes) < 0).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Transcript:
    """Everything one protocol run produced; read-only once returned."""

    params: ProtocolParams
    seed: int | tuple[int, ...]
    strategy: dict
    smp_a: np.ndarray
    smp_b: np.ndarray
    c_a: np.ndarray
    c_b: np.ndarray
    r_a: np.ndarray
    r_b: np.ndarray
    i_smp: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    i_sif: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    s_est: float | None = None
    abort: AbortReason | None = None
    sifted_key: np.ndarray | None = None
    bob_sifted_key: np.ndarray | None = None
    corrected_key: np.ndarray | None = None
    sifted_qber: float | None = None
    p_est: float | None = None
    syndrome_bits: int | None = None
    cor_hash: ToeplitzHash | None = None
    pa_hash: ToeplitzHash | None = None
    key_a: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    key_b: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    @property
    def key_length(self) -> int:
        return int(self.key_a.size)


def estimate_chsh(transcript: Transcript) -> float:
    """Recompute the CHSH estimate from the sample positions of a transcript."""
    i = transcript.i_smp
    return chsh_statistic(transcript.c_a[i], transcript.c_b[i], transcript.r_a[i], transcript.r_b[i])


def run_protocol(
    params: ProtocolParams,
    eve: EveStrategy,
    seed: int | Sequence[int] = 0,
    p_est: float | None = None,
    corrupt_bits: int = 0,
) -> Transcript:
    """
    Execute one protocol run.

    Args:
        params: The protocol configuration.
        eve: Source and detector behaviour.
        seed: Seed of the run's random generator.
        p_est: QBER estimate that sizes the syndrome. Defaults to the depolarized
            QBER implied by the CHSH estimate. When the syndrome exceeds
            ``params.l_syn`` correction fails and Bob keeps his raw sifted key.
        corrupt_bits: Number of bits flipped in Bob's key after correction, used to
            exercise the verification hash.

    Returns:
        The transcript; aborted runs carry their reason and no keys.
    """
    seed = seed if isinstance(seed, int) else tuple(seed)
    rng = np.random.default_rng(seed)
    pulses = params.N
    common = {"params": params, "seed": seed, "strategy": eve.describe()}

    smp_a = rng.random(pulses) < params.q
    smp_b = rng.random(pulses) < params.q
    c_a = np.where(smp_a, rng.integers(0, 2, pulses), Z_CODE).astype(np.int8)
    c_b = np.where(smp_b, rng.integers(0, 2, pulses), ZP_CODE).astype(np.int8)

    sources, source_index = eve.sources(pulses)
    tables = np.stack([source.outcome_table() for source in sources])
    r_a, r_b = measure_pulses(tables, source_index, c_a, c_b, rng.random(pulses))
    records = {"smp_a": smp_a, "smp_b": smp_b, "c_a": c_a, "c_b": c_b, "r_a": r_a, "r_b": r_b}

    both_smp = np.flatnonzero(smp_a & smp_b)
    both_sif = np.flatnonzero(~smp_a & ~smp_b)
    if both_smp.size < params.l_smp or both_sif.size < params.n:
        logging.info(
            f"Abort: {both_smp.size} sample and {both_sif.size} sifted pairs labelled"
        )
        return Transcript(**common, **records, abort="insufficient_pulses")
    i_smp = np.sort(rng.choice(both_smp, params.l_smp, replace=False))
    i_sif = np.sort(rng.choice(both_sif, params.n, replace=False))
    records.update(i_smp=i_smp, i_sif=i_sif)

    s_est = chsh_statistic(c_a[i_smp], c_b[i_smp], r_a[i_smp], r_b[i_smp])
    if s_est < params.S0:
        logging.info(f"Abort: CHSH estimate {s_est:.4f} below threshold {params.S0}")
        return Transcript(**common, **records, s_est=s_est, abort="chsh_failed")

    u = outcomes_to_bits(r_a[i_sif])
    u_bob = outcomes_to_bits(r_b[i_sif])
    if p_est is None:
        p_est = min(max(qber_from_chsh(s_est), 0.0), 0.5)
    syndrome_bits = syndrome_budget(params.n, params.f_ec, p_est)
    if syndrome_bits > params.l_syn:
        # No syndrome is sent; Bob keeps his raw sifted key.
        logging.warning(
            f"Syndrome of {syndrome_bits} bits exceeds the budget of {params.l_syn}; "
            "error correction fails"
        )
        u_corrected = u_bob.copy()
    else:
        u_corrected = u.copy()

    if corrupt_bits:
        flipped = rng.choice(params.n, min(corrupt_bits, params.n), replace=False)
        u_corrected[flipped] ^= 1

    cor_hash = sample_hash(params.n, min(params.n, math.ceil(math.log2(1 / params.eps_cor))), rng)
    keys = {
        "sifted_key": u,
        "bob_sifted_key": u_bob,
        "corrected_key": u_corrected,
        "sifted_qber": qber(u, u_bob),
        "p_est": p_est,
        "syndrome_bits": syndrome_bits,
        "cor_hash": cor_hash,
    }
    if not np.array_equal(hash_bits(cor_hash, u), hash_bits(cor_hash, u_corrected)):
        logging.info("Abort: verification hashes differ")
        return Transcript(**common, **records, s_est=s_est, abort="verify_failed", **keys)

    length = finite_key_length(params).l
    if length == 0:
        return Transcript(**common, **records, s_est=s_est, **keys)
    pa_hash = sample_hash(params.n, length, rng)
    return Transcript(
        **common,
        **records,
        s_est=s_est,
        **keys,
        pa_hash=pa_hash,
        key_a=hash_bits(pa_hash, u),
        key_b=hash_bits(pa_hash, u_corrected),
    )


def simulate_runs(
    params: ProtocolParams,
    eve: EveStrategy,
    runs: int,
    seed: int = 0,
    p_est: float | None = None,
    corrupt_bits: int = 0,
) -> list[Transcript]:
    """
    Run independent protocol executions in parallel with dask.

    Run ``k`` uses the generator seeded with ``(seed, k)``; results keep run order.
    """
    if runs < 1:
        raise ValueError(f"runs must be at least 1, got {runs}")
    run = functools.partial(
        run_protocol, params, eve, p_est=p_est, corrupt_bits=corrupt_bits
    )
    tasks = [dask.delayed(run)(seed=(seed, k)) for k in range(runs)]
    return list(dask.compute(*tasks))


def summarize_runs(transcripts: Sequence[Transcript]) -> dict:
    """Aggregate CHSH estimates, QBERs, abort rates and key lengths over runs."""
    s_values = np.array([t.s_est for t in transcripts if t.s_est is not None])
    qbers = np.array([t.sifted_qber for t in transcripts if t.sifted_qber is not None])
    return {
        "runs": len(transcripts),
        "s_est_mean": float(s_values.mean()) if s_values.size else None,
        "s_est_std": float(s_values.std(ddof=1)) if s_values.size > 1 else None,
        "sifted_qber_mean": float(qbers.mean()) if qbers.size else None,
        "abort_rates": {
            reason: sum(t.abort == reason for t in transcripts) / len(transcripts)
            for reason in ABORT_REASONS
        },
        "key_length_mean": float(np.mean([t.key_length for t in transcripts])),
    }


def transcript_to_dict(transcript: Transcript, include_records: bool = False) -> dict:
    """
    Serialize a transcript for JSON output.

    Bit strings are hex encoded little-endian within each byte; hash functions are
    stored as (seed, in_len, out_len).
    """

    def bits(value):
        return None if value is None else pack_bits(value)

    data = {
        "schema_version": SCHEMA_VERSION,
        "params": transcript.params.to_dict(),
        "seed": list(transcript.seed) if isinstance(transcript.seed, tuple) else transcript.seed,
        "strategy": transcript.strategy,
        "abort": transcript.abort,
        "s_est": transcript.s_est,
        "sifted_qber": transcript.sifted_qber,
        "p_est": transcript.p_est,
        "syndrome_bits": transcript.syndrome_bits,
        "sample_pairs": int(transcript.i_smp.size),
        "sifted_pairs": int(transcript.i_sif.size),
        "sifted_key": bits(transcript.sifted_key),
        "corrected_key": bits(transcript.corrected_key),
        "cor_hash": None if transcript.cor_hash is None else transcript.cor_hash.to_dict(),
        "pa_hash": None if transcript.pa_hash is None else transcript.pa_hash.to_dict(),
        "key_length": transcript.key_length,
        "key_a": pack_bits(transcript.key_a),
        "key_b": pack_bits(transcript.key_b),
    }
    if include_records:
        data["records"] = {
            "smp_a": pack_bits(transcript.smp_a),
            "smp_b": pack_bits(transcript.smp_b),
            "c_a": transcript.c_a.tolist(),
            "c_b": transcript.c_b.tolist(),
            "r_a": transcript.r_a.tolist(),
            "r_b": transcript.r_b.tolist(),
            "i_smp": transcript.i_smp.tolist(),
            "i_sif": transcript.i_sif.tolist(),
        }
    return data


def label_abort_frequency(
    params: ProtocolParams, trials: int, rng: np.random.Generator | int | None = None
) -> float:
    """Return the Monte Carlo frequency of too few sample or sifted labels."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    q = params.q
    counts = rng.multinomial(params.N, [q * q, (1 - q) ** 2, 2 * q * (1 - q)], size=trials)
    aborted = (counts[:, 0] < params.l_smp) | (counts[:, 1] < params.n)
    return float(aborted.mean())


def povm_noise_experiment(
    m: CHSHMeasurement,
    rho: np.ndarray,
    trials: int,
    rng: np.random.Generator | int | None = None,
    l_smp: int = 4800,
    delta_s: float = 0.1,
) -> dict:
    """
    Compare the noisy +-1 CHSH outcomes with their Bell-measurement conditional means.

    Each sample measures rho in the Bell eigenbasis of ``m``. The exact channel
    outputs the eigenvalue a|mu| or a|nu|; the noisy channel outputs b = +-1 with
    probability (1 + b times that eigenvalue)/2. Over ``trials`` blocks of
    ``l_smp`` samples the difference of the two averages is a martingale whose
    tail is compared with ``azuma_tail``.

    Returns:
        Mean averages of both channels, the empirical tail frequency and the bound.
    """
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    probabilities = born_probabilities(
        rho, [projector(m.bell_basis[:, k]) for k in range(4)]
    )
    eigenvalues = m.bell_eigenvalues

    exact_means = []
    noisy_means = []
    for start in range(0, trials, AZUMA_CHUNK):
        size = min(AZUMA_CHUNK, trials - start)
        exact = eigenvalues[rng.choice(4, size=(size, l_smp), p=probabilities)]
        noisy = np.where(rng.random((size, l_smp)) < (1 + exact) / 2, 1.0, -1.0)
        exact_means.append(exact.mean(axis=1))
        noisy_means.append(noisy.mean(axis=1))
    exact_means = np.concatenate(exact_means)
    noisy_means = np.concatenate(noisy_means)

    bound = azuma_tail(l_smp, delta_s)
    empirical = float(np.mean(np.abs(noisy_means - exact_means) >= delta_s))
    return {
        "trials": trials,
        "l_smp": l_smp,
        "delta_s": delta_s,
        "mean_exact": float(exact_means.mean()),
        "mean_noisy": float(noisy_means.mean()),
        "empirical_tail": empirical,
        "azuma_tail": bound,
        "within_bound": empirical <= bound,
    }
