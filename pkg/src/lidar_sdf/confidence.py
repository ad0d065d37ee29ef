"""Confidence labels for samples that lie beyond a LiDAR return.

Free-space and surface samples get confidence 1.  Behind the surface the
confidence decays with the penetration depth ``d`` along the ray::

    w = 1 - d / d_max
    C = (b**w - 1) / (b - 1) + 1e-7

so ``C(0) = 1 + 1e-7`` and ``C(d_max) = 1e-7``.  ``legacy=True`` evaluates
the alternative reading ``b**(w - 1) / (b - 1) + 1e-7`` for comparison plots;
it does not meet those endpoint values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPSILON = 1e-7


@dataclass(frozen=True)
class ConfidenceParams:
    b: float = 10.0
    d_max: float = 3.0
    legacy: bool = False

    def __post_init__(self):
        if not self.b > 1:
            raise ValueError(f"confidence base b must be > 1, got {self.b}")
        if not self.d_max > 0:
            raise ValueError(f"d_max must be > 0, got {self.d_max}")


def confidence_value(sdf, d, params: ConfidenceParams):
    """Confidence for signed distance ``sdf`` at ray penetration depth ``d``.

    Accepts scalars or arrays; ``d`` is ignored wherever ``sdf >= 0``.
    """
    sdf = np.asarray(sdf, dtype=np.float64)
    d = np.broadcast_to(np.asarray(d, dtype=np.float64), sdf.shape)
    inside = sdf < 0
    depth = d[inside]
    if np.any(depth < 0) or np.any(depth > params.d_max):
        raise ValueError(f"penetration depth outside [0, {params.d_max}]")
    b = params.b
    w = 1.0 - depth / params.d_max
    if params.legacy:
        decay = b ** (w - 1.0) / (b - 1.0) + EPSILON
    else:
        decay = (b ** w - 1.0) / (b - 1.0) + EPSILON
    out = np.ones(sdf.shape)
    out[inside] = decay
    return float(out) if out.ndim == 0 else out


def dmax_from_dataset(spec) -> float:
    """Largest penetration depth a sample built from ``spec`` can have."""
    return float(spec.truncation_dmax)
