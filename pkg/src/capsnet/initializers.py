"""Parameter initialization."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np


def he_normal(rng: np.random.Generator, shape: tuple[int, ...],
              fan_in: Optional[int] = None, dtype=np.float32) -> np.ndarray:
    """Zero-mean gaussian with std sqrt(2 / fan_in).

    ``fan_in`` defaults to the product of all but the last extent, which is
    the input count for dense [d_in, d_out] and conv [kh, kw, c_in, c_out]
    kernels; pass it explicitly for other layouts.
    """
    if fan_in is None:
        fan_in = int(np.prod(shape[:-1]))
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)
