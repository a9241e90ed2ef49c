"""Pinhole cameras, ray generation, depth sampling, and volume compositing.

Compositing follows the standard emission-absorption quadrature: along a ray
with densities sigma_k over segments delta_k, sample k contributes weight
w_k = T_k * (1 - exp(-sigma_k * delta_k)) where T_k is the transmittance
exp(-sum_{j<k} sigma_j * delta_j).  Whatever weight is left over goes to the
background color.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError


@dataclass
class Camera:
    """Pinhole camera in the Blender convention: looks along -z in its own frame."""

    width: int
    height: int
    camera_angle_x: float
    c2w: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        if self.camera_angle_x <= 0:
            raise ValueError(f"camera_angle_x must be positive, got {self.camera_angle_x}")
        if not 0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got ({self.near}, {self.far})")
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape != (4, 4):
            raise ShapeError(f"c2w must be 4x4, got {self.c2w.shape}")
        r = self.c2w[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-4:
            raise ValueError("c2w rotation block is not orthonormal")

    @property
    def focal(self) -> float:
        return 0.5 * self.width / np.tan(0.5 * self.camera_angle_x)

    @property
    def origin(self) -> np.ndarray:
        return self.c2w[:3, 3]


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world matrix for a camera at eye looking toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    back /= np.linalg.norm(back)
    right = np.cross(np.asarray(up, dtype=np.float64), back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = right, true_up, back, eye
    return c2w


def generate_rays(cam: Camera, pixels: np.ndarray | None = None):
    """World-space rays through the centers of the given (x, y) pixels.

    With pixels=None, rays for the full image in row-major order.
    Returns (origins (N, 3), unit directions (N, 3)).
    """
    if pixels is None:
        xs, ys = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        pixels = np.stack([xs.ravel(), ys.ravel()], axis=1)
    pixels = np.asarray(pixels)
    if np.any(pixels[:, 0] < 0) or np.any(pixels[:, 0] >= cam.width) \
            or np.any(pixels[:, 1] < 0) or np.any(pixels[:, 1] >= cam.height):
        raise DomainError("pixel coordinates outside image bounds")
    f = cam.focal
    dx = (pixels[:, 0] + 0.5 - cam.width / 2.0) / f
    dy = -(pixels[:, 1] + 0.5 - cam.height / 2.0) / f
    dirs_cam = np.stack([dx, dy, -np.ones_like(dx)], axis=1)
    dirs = dirs_cam @ cam.c2w[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.origin, dirs.shape).copy()
    return origins, dirs


@dataclass
class RaySampleBatch:
    """Depth samples along a batch of rays."""

    origins: np.ndarray    # (R, 3)
    dirs: np.ndarray       # (R, 3) unit
    taus: np.ndarray       # (R, S) strictly increasing depths
    deltas: np.ndarray     # (R, S), last one closes the interval at far

    @property
    def positions(self) -> np.ndarray:
        """World-space sample positions, (R, S, 3)."""
        return self.origins[:, None, :] + self.taus[..., None] * self.dirs[:, None, :]


def sample_along(origins: np.ndarray, dirs: np.ndarray, n: int, near: float,
                 far: float, stratified: bool = False,
                 rng: np.random.Generator | None = None) -> RaySampleBatch:
    """n depth samples per ray on [near, far].

    Deterministic mode places samples at the left edge of n even bins;
    stratified mode jitters each sample uniformly within its bin.  The last
    delta runs to far, i.e. tau_{n+1} := far.
    """
    if n < 1:
        raise ValueError("need at least one sample per ray")
    r = origins.shape[0]
    width = (far - near) / n
    offs = np.arange(n)
    if stratified:
        if rng is None:
            rng = np.random.default_rng()
        jitter = rng.random((r, n))
    else:
        jitter = np.zeros((r, n))
    taus = near + (offs + jitter) * width
    deltas = np.empty_like(taus)
    deltas[:, :-1] = np.diff(taus, axis=1)
    deltas[:, -1] = far - taus[:, -1]
    return RaySampleBatch(origins=origins, dirs=dirs, taus=taus, deltas=deltas)


@dataclass
class CompositeCache:
    trans: np.ndarray   # T_k, (R, S)
    alphas: np.ndarray  # 1 - exp(-sigma * delta), (R, S)
    weights: np.ndarray
    colors: np.ndarray
    deltas: np.ndarray
    background: np.ndarray


def composite(sigmas: np.ndarray, colors: np.ndarray, deltas: np.ndarray,
              background) -> tuple[np.ndarray, np.ndarray, CompositeCache]:
    """Alpha-composite per-sample densities and colors along each ray.

    sigmas (R, S) nonnegative, colors (R, S, 3), deltas (R, S).
    Returns (rgb (R, 3), accumulated opacity (R,), cache for the adjoint).
    """
    if sigmas.shape != deltas.shape or colors.shape != sigmas.shape + (3,):
        raise ShapeError(f"inconsistent composite shapes: sigmas {sigmas.shape}, "
                         f"colors {colors.shape}, deltas {deltas.shape}")
    if np.any(sigmas < 0):
        raise DomainError("negative density passed to composite")
    background = np.asarray(background, dtype=sigmas.dtype)
    od = sigmas * deltas
    cum = np.cumsum(od, axis=1)
    trans = np.exp(-np.concatenate([np.zeros_like(cum[:, :1]), cum[:, :-1]], axis=1))
    alphas = -np.expm1(-od)
    weights = trans * alphas
    acc = weights.sum(axis=1)
    rgb = (weights[..., None] * colors).sum(axis=1) + (1.0 - acc)[:, None] * background
    return rgb, acc, CompositeCache(trans, alphas, weights, colors, deltas, background)


def composite_backward(cache: CompositeCache, d_rgb: np.ndarray,
                       d_acc: np.ndarray | None = None):
    """Adjoint of composite. Returns (d_sigmas (R, S), d_colors (R, S, 3))."""
    d_colors = cache.weights[..., None] * d_rgb[:, None, :]
    # dL/dw_k = d_rgb . (c_k - bg) (+ d_acc); then through w = T * alpha.
    g = np.einsum("rsc,rc->rs", cache.colors - cache.background, d_rgb)
    if d_acc is not None:
        g = g + d_acc[:, None]
    gw = g * cache.weights
    # suffix[j] = sum_{k > j} g_k w_k
    suffix = np.flip(np.cumsum(np.flip(gw, axis=1), axis=1), axis=1)
    suffix = np.concatenate([suffix[:, 1:], np.zeros_like(suffix[:, :1])], axis=1)
    d_sigmas = cache.deltas * (g * cache.trans * (1.0 - cache.alphas) - suffix)
    return d_sigmas, d_colors
