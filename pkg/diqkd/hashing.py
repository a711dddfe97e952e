"""Toeplitz universal hashing for key verification and privacy amplification."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

SEED_BOUND = 2**64
# Below this many matrix entries the dense product is cheaper than the FFT path.
DENSE_LIMIT = 1 << 16


def _generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def as_bits(bits, name: str = "bits") -> np.ndarray:
    """
    Convert a sequence of 0/1 values to a uint8 bit array.

    Raises:
        ValueError: If any entry is not 0 or 1.
    """
    bits = np.asarray(bits)
    if bits.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {bits.shape}")
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return bits.astype(np.uint8)


def pack_bits(bits) -> str:
    """Serialize bits as hex, little-endian within each byte."""
    return np.packbits(as_bits(bits), bitorder="little").tobytes().hex()


def unpack_bits(hex_string: str, length: int) -> np.ndarray:
    """Inverse of ``pack_bits`` for a bit string of the given length."""
    packed = np.frombuffer(bytes.fromhex(hex_string), dtype=np.uint8)
    return np.unpackbits(packed, count=length, bitorder="little")


@dataclass(frozen=True, eq=False)
class ToeplitzHash:
    """
    A member of the Toeplitz hash family over GF(2).

    The ``out_len x in_len`` matrix has T[i, j] = diagonals[i - j + in_len - 1],
    and ``diagonals`` is generated deterministically from ``seed``.
    """

    in_len: int
    out_len: int
    seed: int
    diagonals: np.ndarray

    @classmethod
    def from_seed(cls, seed: int, in_len: int, out_len: int) -> "ToeplitzHash":
        """
        Expand a seed into a hash function.

        Raises:
            ValueError: Unless 0 < out_len <= in_len.
        """
        if not 0 < out_len <= in_len:
            raise ValueError(
                f"Hash lengths must satisfy 0 < out_len <= in_len, got {out_len} and {in_len}"
            )
        diagonals = np.random.default_rng(seed).integers(
            0, 2, size=in_len + out_len - 1, dtype=np.uint8
        )
        return cls(in_len, out_len, int(seed), diagonals)

    def matrix(self) -> np.ndarray:
        """Return the dense Toeplitz matrix."""
        rows = np.arange(self.out_len)[:, None]
        cols = np.arange(self.in_len)[None, :]
        return self.diagonals[rows - cols + self.in_len - 1]

    def __call__(self, bits) -> np.ndarray:
        return hash_bits(self, bits)

    def to_dict(self) -> dict[str, int]:
        return {"seed": self.seed, "in_len": self.in_len, "out_len": self.out_len}

    @classmethod
    def from_dict(cls, data: dict[str, int]) -> "ToeplitzHash":
        return cls.from_seed(data["seed"], data["in_len"], data["out_len"])


def sample_hash(
    in_len: int, out_len: int, rng: np.random.Generator | int | None = None
) -> ToeplitzHash:
    """
    Sample a Toeplitz hash with uniformly random diagonals.

    Args:
        in_len: Input length in bits.
        out_len: Output length in bits.
        rng: A generator, or an integer seed for a fresh generator.

    Returns:
        The sampled hash; its 64-bit seed is drawn from ``rng``.

    Raises:
        ValueError: Unless 0 < out_len <= in_len.
    """
    seed = int(_generator(rng).integers(0, SEED_BOUND, dtype=np.uint64))
    return ToeplitzHash.from_seed(seed, in_len, out_len)


def hash_bits(h: ToeplitzHash, bits) -> np.ndarray:
    """
    Return T x over GF(2).

    Raises:
        ValueError: If the input length differs from ``h.in_len``.
    """
    bits = as_bits(bits)
    if bits.size != h.in_len:
        raise ValueError(f"Hash input must have {h.in_len} bits, got {bits.size}")
    if h.in_len * h.out_len <= DENSE_LIMIT:
        products = h.matrix().astype(np.int64) @ bits.astype(np.int64)
    else:
        column = h.diagonals[h.in_len - 1 :].astype(float)
        row = h.diagonals[h.in_len - 1 :: -1].astype(float)
        products = np.rint(
            scipy.linalg.matmul_toeplitz((column, row), bits.astype(float))
        ).astype(np.int64)
    return (products % 2).astype(np.uint8)
