"""Small numeric helpers shared across modules."""

from __future__ import annotations

import math

import numpy as np


def round_half_up(x: float) -> int:
    """Round with .5 always going up (2.5 -> 3), unlike banker's rounding."""
    return int(math.floor(x + 0.5))


def stable_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    """Softmax with max subtraction; safe for large dot products."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)
