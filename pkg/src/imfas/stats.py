"""Order-invariant aggregation helpers."""

from __future__ import annotations

import math
from typing import Iterable, Tuple


def mean_sd(values: Iterable[float]) -> Tuple[float, float]:
    """Mean and population sd; exact summation makes the result order-invariant."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("mean_sd of an empty sequence")
    n = len(vals)
    mean = math.fsum(vals) / n
    var = math.fsum((v - mean) ** 2 for v in vals) / n
    return mean, math.sqrt(var)
