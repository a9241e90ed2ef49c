"""Tensorial feature grids: plane/factor storage, interpolation, fusion, upsampling.

A scene is factorized into three learnable feature planes plus a second factor
per plane: a 1-D vector over the leftover spatial axis for static scenes, or a
(time x axis) plane for dynamic scenes.  All queries take coordinates already
normalized to the unit cube; position p in [0,1] maps to lattice coordinate
p * (n - 1), so the endpoints land exactly on vertices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

STATIC3D = "static3d"
DYNAMIC4D = "dynamic4d"

# Axis pair each plane spans, and the leftover axis its second factor covers.
PLANE_AXES = ((0, 1), (1, 2), (2, 0))
FACTOR_AXES = (2, 0, 1)


@dataclass
class PlaneSet:
    """Three feature planes and their matched second factors.

    planes: three (c, H, H) grids over the axis pairs xy / yz / zx.
    factors: static mode, three (c, H) vectors over z / x / y;
             dynamic mode, three (c, T, H) time-axis planes.
    """

    mode: str
    planes: list[np.ndarray]
    factors: list[np.ndarray]

    def __post_init__(self):
        if self.mode not in (STATIC3D, DYNAMIC4D):
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(self.planes) != 3 or len(self.factors) != 3:
            raise ShapeError("a PlaneSet needs exactly 3 planes and 3 factors")
        c, h, w = self.planes[0].shape
        if h != w:
            raise ShapeError(f"planes must be square, got {self.planes[0].shape}")
        for p in self.planes:
            if p.shape != (c, h, h):
                raise ShapeError(f"plane shapes differ: {p.shape} vs {(c, h, h)}")
        fshape = self.factors[0].shape
        for f in self.factors:
            if f.shape != fshape:
                raise ShapeError(f"factor shapes differ: {f.shape} vs {fshape}")
        if self.mode == STATIC3D:
            if fshape != (c, h):
                raise ShapeError(f"static factors must be (c, H)=({c},{h}), got {fshape}")
        else:
            if len(fshape) != 3 or fshape[0] != c or fshape[2] != h:
                raise ShapeError(f"dynamic factors must be (c, T, H), got {fshape}")
        for arr in (*self.planes, *self.factors):
            if not np.all(np.isfinite(arr)):
                raise ValueError("grid values must be finite")

    @property
    def channels(self) -> int:
        return self.planes[0].shape[0]

    @property
    def spatial_res(self) -> int:
        return self.planes[0].shape[1]

    @property
    def time_res(self) -> int:
        return self.factors[0].shape[1] if self.mode == DYNAMIC4D else 1

    @property
    def coord_dim(self) -> int:
        return 4 if self.mode == DYNAMIC4D else 3

    @property
    def dtype(self):
        return self.planes[0].dtype

    def copy(self) -> "PlaneSet":
        return PlaneSet(self.mode, [p.copy() for p in self.planes],
                        [f.copy() for f in self.factors])


def init_planes(mode: str, channels: int, spatial_res: int, time_res: int = 1,
                rng: np.random.Generator | None = None, scale: float = 0.1,
                dtype=np.float64) -> PlaneSet:
    """Fresh PlaneSet with i.i.d. normal(0, scale) values."""
    rng = rng or np.random.default_rng()
    planes = [rng.normal(0.0, scale, (channels, spatial_res, spatial_res)).astype(dtype)
              for _ in range(3)]
    if mode == STATIC3D:
        factors = [rng.normal(0.0, scale, (channels, spatial_res)).astype(dtype)
                   for _ in range(3)]
    elif mode == DYNAMIC4D:
        factors = [rng.normal(0.0, scale, (channels, time_res, spatial_res)).astype(dtype)
                   for _ in range(3)]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return PlaneSet(mode, planes, factors)


def _lattice(x: np.ndarray, n: int):
    """Split lattice coordinates in [0, n-1] into base index and fraction.

    The top boundary x == n-1 clamps the base to n-2 with fraction 1 so the
    interpolation stencil never leaves the grid.
    """
    if n == 1:
        z = np.zeros_like(x)
        return z.astype(np.intp), z
    i = np.floor(x).astype(np.intp)
    i = np.minimum(i, n - 2)
    return i, x - i


def _check_range(x: np.ndarray, lo: float, hi: float, axis: str):
    bad = (x < lo) | (x > hi) | ~np.isfinite(x)
    if np.any(bad):
        v = np.asarray(x)[bad].flat[0]
        raise DomainError(f"coordinate {v} on axis {axis!r} outside [{lo}, {hi}]")


def interp_bilinear(grid: np.ndarray, x: float, y: float) -> float:
    """Bilinear interpolation of a single-channel (H, W) grid at lattice coords."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ShapeError(f"expected a 2-D grid, got shape {grid.shape}")
    h, w = grid.shape
    _check_range(np.asarray(float(x)), 0.0, h - 1, "x")
    _check_range(np.asarray(float(y)), 0.0, w - 1, "y")
    i, u = _lattice(np.asarray([float(x)]), h)
    j, v = _lattice(np.asarray([float(y)]), w)
    i, u, j, v = i[0], u[0], j[0], v[0]
    return float((1 - u) * (1 - v) * grid[i, j] + u * (1 - v) * grid[i + 1, j]
                 + (1 - u) * v * grid[i, j + 1] + u * v * grid[i + 1, j + 1])


def interp_linear(vec: np.ndarray, x: float) -> float:
    """Linear interpolation of a 1-D vector at lattice coordinate x."""
    vec = np.asarray(vec)
    if vec.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {vec.shape}")
    n = vec.shape[0]
    _check_range(np.asarray(float(x)), 0.0, n - 1, "x")
    i, u = _lattice(np.asarray([float(x)]), n)
    i, u = i[0], u[0]
    if n == 1:
        return float(vec[0])
    return float((1 - u) * vec[i] + u * vec[i + 1])


@dataclass
class _Sample2D:
    """Gather stencil for a batch of bilinear lookups on one (c, H, W) grid."""

    i: np.ndarray
    j: np.ndarray
    u: np.ndarray
    v: np.ndarray
    shape: tuple


def sample_plane(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinear-sample all channels of a (c, H, W) grid at lattice coords.

    Returns (values (N, c), cache) where the cache drives scatter_plane.
    """
    c, h, w = grid.shape
    i, u = _lattice(xs, h)
    j, v = _lattice(ys, w)
    cache = _Sample2D(i, j, u, v, grid.shape)
    vals = ((1 - u) * (1 - v) * grid[:, i, j] + u * (1 - v) * grid[:, i + 1, j]
            + (1 - u) * v * grid[:, i, j + 1] + u * v * grid[:, i + 1, j + 1])
    return vals.T, cache


def scatter_plane(cache: _Sample2D, grad: np.ndarray, out: np.ndarray):
    """Adjoint of sample_plane: accumulate (N, c) output grads into out (c, H, W).

    Uses bincount per channel so accumulation order is deterministic.
    """
    c, h, w = out.shape
    i, j, u, v = cache.i, cache.j, cache.u, cache.v
    idx = np.concatenate([i * w + j, (i + 1) * w + j, i * w + j + 1, (i + 1) * w + j + 1])
    wgt = np.concatenate([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v])
    flat = out.reshape(c, h * w)
    for ch in range(c):
        flat[ch] += np.bincount(idx, weights=np.tile(grad[:, ch], 4) * wgt,
                                minlength=h * w).astype(out.dtype)


def sample_vector(vec: np.ndarray, xs: np.ndarray):
    """Linearly sample all channels of a (c, H) vector at lattice coords."""
    c, n = vec.shape
    i, u = _lattice(xs, n)
    if n == 1:
        vals = np.broadcast_to(vec[:, 0][:, None], (c, xs.shape[0]))
        return vals.T.copy(), (i, u, vec.shape)
    vals = (1 - u) * vec[:, i] + u * vec[:, i + 1]
    return vals.T, (i, u, vec.shape)


def scatter_vector(cache, grad: np.ndarray, out: np.ndarray):
    """Adjoint of sample_vector: accumulate (N, c) grads into out (c, H)."""
    i, u, shape = cache
    c, n = shape
    if n == 1:
        out[:, 0] += grad.sum(axis=0)
        return
    idx = np.concatenate([i, i + 1])
    wgt = np.concatenate([1 - u, u])
    for ch in range(c):
        out[ch] += np.bincount(idx, weights=np.tile(grad[:, ch], 2) * wgt,
                               minlength=n).astype(out.dtype)


@dataclass
class FusedFeature:
    """Feature for one sample: raw coordinates plus the fused plane encoding."""

    coord_part: np.ndarray
    plane_part: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return np.concatenate([self.coord_part, self.plane_part])


@dataclass
class GridQuery:
    """Batched grid lookup with everything the backward pass needs."""

    plane_feats: np.ndarray   # (N, 3, c), pre-fusion
    factor_feats: np.ndarray  # (N, 3, c), pre-fusion
    plane_caches: list
    factor_caches: list


def query_batch(ps: PlaneSet, pts: np.ndarray, validate: bool = True) -> GridQuery:
    """Interpolate every plane and factor at normalized points (N, 3) or (N, 4)."""
    pts = np.asarray(pts)
    if pts.ndim != 2 or pts.shape[1] != ps.coord_dim:
        raise ShapeError(f"expected points of shape (N, {ps.coord_dim}), got {pts.shape}")
    if validate:
        names = ("x", "y", "z", "t")
        for a in range(pts.shape[1]):
            _check_range(pts[:, a], 0.0, 1.0, names[a])
    n, c = pts.shape[0], ps.channels
    h = ps.spatial_res
    fm = np.empty((n, 3, c), dtype=ps.dtype)
    fv = np.empty((n, 3, c), dtype=ps.dtype)
    pcaches, fcaches = [], []
    for k, (a, b) in enumerate(PLANE_AXES):
        vals, cache = sample_plane(ps.planes[k], pts[:, a] * (h - 1), pts[:, b] * (h - 1))
        fm[:, k, :] = vals
        pcaches.append(cache)
    for k, a in enumerate(FACTOR_AXES):
        if ps.mode == STATIC3D:
            vals, cache = sample_vector(ps.factors[k], pts[:, a] * (h - 1))
        else:
            t = ps.time_res
            vals, cache = sample_plane(ps.factors[k], pts[:, 3] * (t - 1),
                                       pts[:, a] * (h - 1))
        fv[:, k, :] = vals
        fcaches.append(cache)
    return GridQuery(fm, fv, pcaches, fcaches)


def fuse(plane_feats: np.ndarray, factor_feats: np.ndarray) -> np.ndarray:
    """Elementwise product of matched plane/factor features, flattened to (N, 3c)."""
    if plane_feats.shape != factor_feats.shape:
        raise ShapeError(f"plane/factor feature shapes differ: "
                         f"{plane_feats.shape} vs {factor_feats.shape}")
    n = plane_feats.shape[0]
    return (plane_feats * factor_feats).reshape(n, -1)


def scatter_query(ps: PlaneSet, q: GridQuery, d_plane_feats: np.ndarray,
                  d_factor_feats: np.ndarray, plane_grads: list, factor_grads: list):
    """Adjoint of query_batch: accumulate feature grads into per-grid grad buffers."""
    for k in range(3):
        scatter_plane(q.plane_caches[k], d_plane_feats[:, k, :], plane_grads[k])
    for k in range(3):
        if ps.mode == STATIC3D:
            scatter_vector(q.factor_caches[k], d_factor_feats[:, k, :], factor_grads[k])
        else:
            scatter_plane(q.factor_caches[k], d_factor_feats[:, k, :], factor_grads[k])


def query_features(ps: PlaneSet, s) -> FusedFeature:
    """Full feature for one normalized sample: fused plane encoding plus coords."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (ps.coord_dim,):
        raise ShapeError(f"expected a coordinate of shape ({ps.coord_dim},), got {s.shape}")
    q = query_batch(ps, s[None, :])
    fused = fuse(q.plane_feats, q.factor_feats)[0]
    return FusedFeature(coord_part=s, plane_part=fused)


def _resample_matrix(old_n: int, new_n: int, dtype) -> np.ndarray:
    """(new_n, old_n) linear-interpolation matrix from an old lattice to a new one."""
    m = np.zeros((new_n, old_n), dtype=dtype)
    if old_n == 1:
        m[:, 0] = 1.0
        return m
    if new_n == 1:
        m[0, 0] = 1.0
        return m
    x = np.arange(new_n) * (old_n - 1) / (new_n - 1)
    i, u = _lattice(x, old_n)
    m[np.arange(new_n), i] = 1 - u
    m[np.arange(new_n), i + 1] += u
    return m


def upsample(ps: PlaneSet, new_spatial: int, new_time: int | None = None) -> PlaneSet:
    """Resample every grid onto a finer lattice, preserving the represented field.

    Planes use separable bilinear resampling, static vectors linear resampling.
    Shrinking is rejected.
    """
    if new_spatial < ps.spatial_res:
        raise ValueError(f"cannot shrink spatial resolution "
                         f"{ps.spatial_res} -> {new_spatial}")
    if new_time is None:
        new_time = ps.time_res
    if new_time < ps.time_res:
        raise ValueError(f"cannot shrink time resolution {ps.time_res} -> {new_time}")
    dt = ps.dtype
    a = _resample_matrix(ps.spatial_res, new_spatial, np.float64)
    planes = [np.einsum("ai,cij,bj->cab", a, p.astype(np.float64), a).astype(dt)
              for p in ps.planes]
    if ps.mode == STATIC3D:
        factors = [(f.astype(np.float64) @ a.T).astype(dt) for f in ps.factors]
    else:
        at = _resample_matrix(ps.time_res, new_time, np.float64)
        factors = [np.einsum("ai,cij,bj->cab", at, f.astype(np.float64), a).astype(dt)
                   for f in ps.factors]
    return PlaneSet(ps.mode, planes, factors)
