"""Dense tensor substrate and the seeded PRNG used everywhere else.

Tensors are plain C-contiguous numpy arrays (float64 in correctness tests,
float32 permitted for training speed). The PRNG is pinned to one algorithm,
PCG64 seeded directly with the given integer, so the same seed yields the
same stream bit-for-bit on every platform; nothing in the package ever
touches numpy's global generator.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError, RangeError

Rng = np.random.Generator


def seeded_rng(seed: int) -> Rng:
    """Create the package-standard generator (PCG64) for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(seed))


def rng_uniform(rng: Rng, shape, lo: float, hi: float, dtype=np.float64) -> np.ndarray:
    """Draw a tensor of uniforms in [lo, hi), advancing the generator state."""
    if not lo < hi:
        raise RangeError(f"uniform range requires lo < hi, got lo={lo}, hi={hi}")
    return rng.uniform(lo, hi, size=shape).astype(dtype, copy=False)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit inner-dimension checking."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    return a @ b


def require_finite(x: np.ndarray, what: str) -> np.ndarray:
    """Raise NumericError unless every entry of x is finite."""
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite values")
    return x
