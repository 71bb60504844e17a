"""IEEE 754 binary16 helpers shared by the datapath models.

numpy's float16 ufuncs compute in float32 and round once to binary16. Since
float32 carries more than 2*11+2 significand bits, that double rounding is
innocuous for +, - and *, so the results are correctly rounded (RNE).
"""

from __future__ import annotations

import struct
import warnings

import numpy as np

HALF = np.float16
SIGN_BIT = 0x8000


def as_half_array(values, *, name: str = "values") -> np.ndarray:
    """Convert to a float16 array, rejecting NaN."""
    arr = np.asarray(values)
    if arr.dtype != np.float16:
        arr = arr.astype(np.float16)
    if np.isnan(arr).any():
        raise ValueError(f"{name} contains NaN; binary16 NaN has no defined behaviour on the datapath")
    return arr


def half_from_bits(bits) -> np.ndarray:
    return np.asarray(bits, dtype=np.uint16).view(np.float16)


def half_bits(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float16).view(np.uint16)


def round_to_half(x: float) -> float:
    """Round a Python float to the nearest binary16 value (RNE), saturating to +-inf.

    Goes through ``struct`` rather than numpy so oracle code has an independent
    rounding path.
    """
    try:
        return struct.unpack("<e", struct.pack("<e", x))[0]
    except OverflowError:
        return float("inf") if x > 0 else float("-inf")


def binary_mac_step(v, x, w: int) -> np.float16:
    """One accumulator update: ``v + x`` for weight +1, ``v - x`` for weight -1.

    The binary weight acts as the sign input of the adder; no multiply happens.
    Overflow to +-inf emits a RuntimeWarning.
    """
    v = np.float16(v)
    x = np.float16(x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = v + x if w > 0 else v - x
    if np.isinf(out) and not (np.isinf(v) or np.isinf(x)):
        warnings.warn("binary16 accumulator overflowed to infinity", RuntimeWarning, stacklevel=2)
    return np.float16(out)


def relu(v):
    """max(v, 0) with -0 mapped to +0. Works on scalars and arrays."""
    arr = np.asarray(v, dtype=np.float16)
    out = np.where(arr > 0, arr, np.float16(0.0))
    if out.ndim == 0:
        return np.float16(out)
    return out
