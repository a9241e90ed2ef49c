"""The complete field model: feature grids plus the MLP, evaluated per sample.

forward_samples runs grid query -> channel gating -> plane/factor fusion ->
encoder -> heads for a flat batch of normalized sample coordinates, returning
a cache; backward_samples propagates density/color adjoints back into every
parameter through the same stencils used forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid as gridlib
from . import net
from .errors import ShapeError
from .grid import DYNAMIC4D, STATIC3D, PlaneSet
from .net import MlpParams


@dataclass
class FieldModel:
    """All learnable state, plus the structural flags of the architecture.

    use_coords=False drops raw coordinates from the encoder input (the
    plane-only ablation); use_planes=False zeroes the fused plane features
    (the coordinate-only configuration).  Both paths keep their parameter
    shapes so checkpoints stay uniform.
    """

    planes: PlaneSet
    mlp: MlpParams
    use_coords: bool = True
    use_planes: bool = True

    @property
    def mode(self) -> str:
        return self.planes.mode

    @property
    def coord_dim(self) -> int:
        return self.planes.coord_dim

    def parameters(self) -> dict:
        out = {}
        for k in range(3):
            out[f"plane{k}"] = self.planes.planes[k]
        for k in range(3):
            out[f"factor{k}"] = self.planes.factors[k]
        out.update(self.mlp.param_items())
        return out

    def set_parameter(self, name: str, value: np.ndarray):
        ref = self.parameters()[name]
        if ref.shape != value.shape:
            raise ShapeError(f"parameter {name}: shape {value.shape} != {ref.shape}")
        ref[...] = value

    def astype(self, dtype) -> "FieldModel":
        ps = PlaneSet(self.planes.mode,
                      [p.astype(dtype) for p in self.planes.planes],
                      [f.astype(dtype) for f in self.planes.factors])
        mlp = MlpParams(self.mlp.variant,
                        [(w.astype(dtype), b.astype(dtype)) for w, b in self.mlp.layers],
                        [(w.astype(dtype), b.astype(dtype)) for w, b in self.mlp.rgb_layers],
                        self.mlp.d_coord, self.mlp.d_plane, self.mlp.width,
                        self.mlp.use_viewdir)
        return FieldModel(ps, mlp, self.use_coords, self.use_planes)


def build_model(mode: str = STATIC3D, channels: int = 4, spatial_res: int = 16,
                time_res: int = 1, width: int = 64, variant: str = "synergy",
                use_coords: bool = True, use_planes: bool = True,
                use_viewdir: bool = False, n_extra: int = 0,
                rng: np.random.Generator | None = None, grid_scale: float = 0.1,
                dtype=np.float64) -> FieldModel:
    rng = rng or np.random.default_rng(0)
    ps = gridlib.init_planes(mode, channels, spatial_res,
                             time_res if mode == DYNAMIC4D else 1, rng,
                             scale=grid_scale, dtype=dtype)
    coord_dim = 4 if mode == DYNAMIC4D else 3
    d_coord = coord_dim if use_coords else 0
    mlp = net.init_mlp(variant, d_coord, 3 * channels, width, rng,
                       n_extra=n_extra, use_viewdir=use_viewdir, dtype=dtype)
    return FieldModel(ps, mlp, use_coords=use_coords, use_planes=use_planes)


@dataclass
class SampleCache:
    query: gridlib.GridQuery
    gamma: np.ndarray
    fm_gated: np.ndarray
    fv_gated: np.ndarray
    enc: net.EncodeCache
    z_sigma: np.ndarray
    color: net.ColorCache
    n: int


def forward_samples(model: FieldModel, pts: np.ndarray,
                    gamma: np.ndarray | None = None,
                    viewdirs: np.ndarray | None = None):
    """Density and color for normalized sample points (N, 3) or (N, 4).

    gamma is the per-channel curriculum gate (defaults to all-ones); it scales
    both the plane and factor features ahead of their fusion product.
    Returns (sigma (N,), rgb (N, 3), cache).
    """
    c = model.planes.channels
    dtype = model.planes.dtype
    pts = np.asarray(pts, dtype=dtype)
    gamma = np.ones(c, dtype=dtype) if gamma is None else np.asarray(gamma, dtype=dtype)
    if viewdirs is not None:
        viewdirs = np.asarray(viewdirs, dtype=dtype)
    q = gridlib.query_batch(model.planes, pts)
    fm = q.plane_feats * gamma
    fv = q.factor_feats * gamma
    fused = gridlib.fuse(fm, fv)
    if not model.use_planes:
        fused = np.zeros_like(fused)
    coord = pts if model.use_coords else pts[:, :0]
    hidden, enc_cache = net.encode(model.mlp, coord, fused)
    sigma, z_sigma = net.density_head(hidden)
    rgb, color_cache = net.color_head(model.mlp, hidden, viewdirs)
    return sigma, rgb, SampleCache(q, gamma, fm, fv, enc_cache, z_sigma,
                                   color_cache, pts.shape[0])


def backward_samples(model: FieldModel, cache: SampleCache, d_sigma: np.ndarray,
                     d_rgb: np.ndarray, grads: dict):
    """Adjoint of forward_samples, accumulating into a name-keyed grad dict.

    Runs in the model's storage dtype; gradient checks use float64 models.
    """
    dtype = model.planes.dtype
    d_sigma = np.asarray(d_sigma, dtype=dtype)
    d_rgb = np.asarray(d_rgb, dtype=dtype)
    rgb_grads, d_hidden = net.color_head_backward(model.mlp, cache.color, d_rgb)
    net.density_head_backward(cache.z_sigma, d_sigma, d_hidden)
    enc_grads, _, d_fused = net.encode_backward(model.mlp, cache.enc, d_hidden)
    for k, (dw, db) in enumerate(enc_grads):
        grads[f"enc_w{k}"] += dw
        grads[f"enc_b{k}"] += db
    for k, (dw, db) in enumerate(rgb_grads):
        grads[f"rgb_w{k}"] += dw
        grads[f"rgb_b{k}"] += db
    if not model.use_planes:
        return
    c = model.planes.channels
    d_pairs = d_fused.reshape(cache.n, 3, c)
    # fused = (gamma*fm) o (gamma*fv); gamma is a constant gate.
    d_fm = d_pairs * cache.fv_gated * cache.gamma
    d_fv = d_pairs * cache.fm_gated * cache.gamma
    plane_grads = [grads[f"plane{k}"] for k in range(3)]
    factor_grads = [grads[f"factor{k}"] for k in range(3)]
    gridlib.scatter_query(model.planes, cache.query, d_fm, d_fv,
                          plane_grads, factor_grads)


def normalize_points(pts_world: np.ndarray, bbox_min, bbox_max):
    """Map world coordinates into the unit cube; also report which fall inside."""
    lo = np.asarray(bbox_min, dtype=pts_world.dtype)
    hi = np.asarray(bbox_max, dtype=pts_world.dtype)
    u = (pts_world - lo) / (hi - lo)
    inside = np.all((u >= 0.0) & (u <= 1.0), axis=-1)
    return np.clip(u, 0.0, 1.0), inside


def render_view(model: FieldModel, camera, n_samples: int, bbox,
                background, gamma: np.ndarray | None = None,
                time: float | None = None, chunk: int = 16384) -> np.ndarray:
    """Render a full image from a camera with deterministic depth sampling.

    Samples outside the scene bounding box contribute zero density.  Returns
    an (H, W, 3) float image in [0, 1].
    """
    from . import render as renderlib

    origins, dirs = renderlib.generate_rays(camera)
    out = np.empty((origins.shape[0], 3))
    bg = np.asarray(background, dtype=np.float64)
    for lo in range(0, origins.shape[0], chunk):
        hi = min(lo + chunk, origins.shape[0])
        batch = renderlib.sample_along(origins[lo:hi], dirs[lo:hi], n_samples,
                                       camera.near, camera.far)
        pts = batch.positions
        u, inside = normalize_points(pts, bbox[0], bbox[1])
        flat = u.reshape(-1, 3)
        if model.mode == DYNAMIC4D:
            if time is None:
                raise ValueError("dynamic model needs a render time")
            flat = np.concatenate(
                [flat, np.full((flat.shape[0], 1), time, dtype=flat.dtype)], axis=1)
        vd = None
        if model.mlp.use_viewdir:
            vd = np.repeat(dirs[lo:hi], pts.shape[1], axis=0)
        sigma, rgb, _ = forward_samples(model, flat, gamma, viewdirs=vd)
        r, s = pts.shape[0], pts.shape[1]
        sigma = (sigma.reshape(r, s) * inside).astype(np.float64)
        rgb = rgb.reshape(r, s, 3).astype(np.float64)
        color, _, _ = renderlib.composite(sigma, rgb, batch.deltas, bg)
        out[lo:hi] = color
    return np.clip(out.reshape(camera.height, camera.width, 3), 0.0, 1.0)
