"""Dual-basis phase constellation and R-bit quantization.

Basis 0 puts bits 0/1 at phases {0, pi}; basis 1 is the same antipodal pair
rotated by delta_phi with the bit assignment reversed: bit 1 at delta_phi,
bit 0 at delta_phi + pi.  Anyone can read which antipodal half-plane ("set")
a symbol falls in -- that equals bit XOR basis -- but resolving the
delta_phi offset through the phase noise is what requires basis knowledge.

Quantized phases are plain integer levels in [0, 2^R); array operations use
numpy and accept scalars or arrays interchangeably.
"""

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
PI = math.pi


@dataclass(frozen=True)
class Constellation:
    """Basis offset delta_phi (radians) and ADC resolution R (bits)."""

    delta_phi: float
    resolution_bits: int = 16

    def __post_init__(self):
        if not (0.0 < self.delta_phi < PI / 8.0):
            raise ValueError(
                f"delta_phi must lie in (0, pi/8), got {self.delta_phi!r}")
        r = self.resolution_bits
        if not (isinstance(r, int) and 8 <= r <= 56):
            raise ValueError(f"resolution_bits must be an int in [8, 56], got {r!r}")
        if self.step > self.delta_phi / 2.0:
            raise ValueError(
                f"grid step {self.step:.3g} does not resolve delta_phi/2 = "
                f"{self.delta_phi / 2.0:.3g}; increase resolution_bits")

    @property
    def n_levels(self) -> int:
        return 1 << self.resolution_bits

    @property
    def step(self) -> float:
        return TWO_PI / self.n_levels


def wrap_pi(phase):
    """Wrap phase(s) to [-pi, pi)."""
    return np.mod(np.asarray(phase, dtype=float) + PI, TWO_PI) - PI


def modulate(bit, basis, c: Constellation):
    """Phase of (bit, basis): basis*delta_phi + (bit XOR basis)*pi."""
    bit = np.asarray(bit)
    basis = np.asarray(basis)
    return basis * c.delta_phi + np.bitwise_xor(bit, basis) * PI


def quantize(phase, resolution_bits: int):
    """Round phase to the nearest of 2^R levels on [0, 2pi); ties round up."""
    if not 8 <= resolution_bits <= 56:
        raise ValueError(f"resolution_bits must lie in [8, 56], got {resolution_bits!r}")
    n_levels = 1 << resolution_bits
    frac = np.mod(np.asarray(phase, dtype=float), TWO_PI) / TWO_PI
    level = np.floor(frac * n_levels + 0.5).astype(np.uint64) % n_levels
    return int(level) if level.ndim == 0 else level


def dequantize(level, resolution_bits: int):
    """Phase 2pi * level / 2^R of a quantization level."""
    n_levels = 1 << resolution_bits
    phase = np.asarray(level, dtype=float) * (TWO_PI / n_levels)
    return float(phase) if phase.ndim == 0 else phase


def transmit_symbol(bit, basis, c: Constellation, noise):
    """Quantized on-air phase: quantize(modulate(bit, basis) + noise)."""
    return quantize(modulate(bit, basis, c) + noise, c.resolution_bits)


def classify_set(level, c: Constellation):
    """Half-plane (set) of a symbol: 0 near centers {0, delta_phi}, else 1.

    The decision boundary sits midway between the two antipodal clusters,
    at delta_phi/2 +- pi/2.  For ideal symbols the set equals bit XOR basis.
    """
    w = wrap_pi(dequantize(level, c.resolution_bits) - c.delta_phi / 2.0)
    in_set1 = (w > -PI / 2.0) & (w <= PI / 2.0)
    out = np.where(in_set1, 0, 1)
    return int(out) if out.ndim == 0 else out


def decode_with_basis(level, basis, c: Constellation):
    """Bit of the nearest constellation point of the given basis.

    Circular distance; exact ties resolve to bit 0.
    """
    phase = dequantize(level, c.resolution_bits)
    d_bit0 = np.abs(wrap_pi(phase - modulate(0, basis, c)))
    d_bit1 = np.abs(wrap_pi(phase - modulate(1, basis, c)))
    out = np.where(d_bit1 < d_bit0, 1, 0)
    return int(out) if out.ndim == 0 else out


def bytes_per_symbol(resolution_bits: int) -> int:
    return (resolution_bits + 7) // 8


def pack_levels(levels, resolution_bits: int) -> bytes:
    """Serialize levels as ceil(R/8) little-endian bytes each, concatenated."""
    nbytes = bytes_per_symbol(resolution_bits)
    arr = np.ascontiguousarray(np.asarray(levels, dtype=np.uint64).reshape(-1))
    if arr.size and int(arr.max()) >> resolution_bits:
        raise ValueError("level out of range for resolution_bits")
    as_bytes = arr.astype("<u8").view(np.uint8).reshape(-1, 8)
    return as_bytes[:, :nbytes].tobytes()


def unpack_levels(data: bytes, resolution_bits: int) -> np.ndarray:
    """Inverse of pack_levels."""
    nbytes = bytes_per_symbol(resolution_bits)
    if len(data) % nbytes:
        raise ValueError(
            f"packed data length {len(data)} is not a multiple of {nbytes}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, nbytes)
    padded = np.zeros((raw.shape[0], 8), dtype=np.uint8)
    padded[:, :nbytes] = raw
    return padded.view("<u8").reshape(-1).astype(np.uint64)
