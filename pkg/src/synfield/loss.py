"""Training objective: photometric error plus grid regularizers.

The total objective is the photometric term plus, for every plane index i,
lambda1 * (smoothness(plane_i) + lambda2 * smoothness(factor_i)) and an L1
sparsity term lambda3 * (|planes|_1 + |factors|_1).  In static mode the factor
smoothness term is omitted entirely; lambda2 only ever weights the temporal
factor planes of dynamic scenes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .grid import DYNAMIC4D, PlaneSet


@dataclass
class LossWeights:
    lap: float = 0.0         # lambda1, grid smoothness
    lap_factor: float = 1.0  # lambda2, extra emphasis on temporal factor planes
    sparsity: float = 0.0    # lambda3, L1 on all grids

    def __post_init__(self):
        if self.lap < 0 or self.lap_factor < 0 or self.sparsity < 0:
            raise ValueError("loss weights must be nonnegative")


def photometric(rendered: np.ndarray, truth: np.ndarray) -> float:
    """Squared color error summed over channels, averaged over rays."""
    if rendered.shape != truth.shape:
        raise ShapeError(f"batch shapes differ: {rendered.shape} vs {truth.shape}")
    d = rendered - truth
    return float(np.sum(d * d) / d.shape[0])


def photometric_backward(rendered: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return 2.0 * (rendered - truth) / rendered.shape[0]


def laplacian(grid: np.ndarray) -> float:
    """Sum of squared forward differences along both grid axes, over channels.

    Accepts (c, H, W) or a single-channel (H, W) grid; only in-bounds
    differences are formed, so degenerate 1 x N grids contribute just the
    defined direction.
    """
    g = np.asarray(grid)
    if g.ndim == 2:
        g = g[None]
    dr = g[:, 1:, :] - g[:, :-1, :]
    dc = g[:, :, 1:] - g[:, :, :-1]
    return float(np.sum(dr * dr) + np.sum(dc * dc))


def laplacian_backward(grid: np.ndarray) -> np.ndarray:
    """Gradient of laplacian() with respect to every grid entry."""
    g = np.asarray(grid)
    squeeze = g.ndim == 2
    if squeeze:
        g = g[None]
    out = np.zeros_like(g)
    dr = g[:, 1:, :] - g[:, :-1, :]
    dc = g[:, :, 1:] - g[:, :, :-1]
    out[:, 1:, :] += 2.0 * dr
    out[:, :-1, :] -= 2.0 * dr
    out[:, :, 1:] += 2.0 * dc
    out[:, :, :-1] -= 2.0 * dc
    return out[0] if squeeze else out


def l1_norm(ps: PlaneSet) -> tuple[float, float]:
    """(sum of |plane| entries, sum of |factor| entries)."""
    m = sum(float(np.sum(np.abs(p))) for p in ps.planes)
    v = sum(float(np.sum(np.abs(f))) for f in ps.factors)
    return m, v


def l1_backward(arr: np.ndarray) -> np.ndarray:
    """Subgradient of the entrywise L1 norm (0 at exact zeros)."""
    return np.sign(arr)


def regularizer(ps: PlaneSet, w: LossWeights) -> dict:
    """All grid penalty terms, keyed for logging."""
    lap_planes = sum(laplacian(p) for p in ps.planes)
    lap_factors = sum(laplacian(f) for f in ps.factors) if ps.mode == DYNAMIC4D else 0.0
    m1, v1 = l1_norm(ps)
    return {
        "lap_planes": lap_planes,
        "lap_factors": lap_factors,
        "l1": m1 + v1,
        "reg_total": w.lap * (lap_planes + w.lap_factor * lap_factors)
                     + w.sparsity * (m1 + v1),
    }


def regularizer_backward(ps: PlaneSet, w: LossWeights,
                         plane_grads: list, factor_grads: list):
    """Accumulate regularizer gradients into per-grid buffers."""
    for p, g in zip(ps.planes, plane_grads):
        if w.lap:
            g += w.lap * laplacian_backward(p)
        if w.sparsity:
            g += w.sparsity * l1_backward(p)
    for f, g in zip(ps.factors, factor_grads):
        if w.lap and ps.mode == DYNAMIC4D:
            g += w.lap * w.lap_factor * laplacian_backward(f)
        if w.sparsity:
            g += w.sparsity * l1_backward(f)


def total_loss(photo: float, ps: PlaneSet, w: LossWeights) -> float:
    """Photometric term plus every grid regularizer."""
    return photo + regularizer(ps, w)["reg_total"]
