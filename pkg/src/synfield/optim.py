"""Adam optimization and the training loop.

The loop is a serial state machine: per iteration it draws a ray batch from a
per-iteration RNG stream derived from (seed, iteration) -- which makes resumed
runs bit-identical to uninterrupted ones without persisting generator state --
then runs forward/backward, applies per-group Adam updates, and fires
scheduled grid upsampling (resetting the grid moment buffers, whose shapes are
bound to the grids).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import diff, grid as gridlib, render as renderlib, schedule as schedlib
from .errors import NumericError
from .loss import LossWeights
from .metrics import psnr
from .model import DYNAMIC4D, FieldModel, build_model, normalize_points, render_view
from .schedule import CurriculumConfig, TrainSchedule

GRID_PARAMS = ("plane0", "plane1", "plane2", "factor0", "factor1", "factor2")


@dataclass
class AdamState:
    """First/second moment buffers and per-parameter step counts."""

    m: dict
    v: dict
    steps: dict
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict, beta1: float = 0.9, beta2: float = 0.99,
             eps: float = 1e-8) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   steps={k: 0 for k in params},
                   beta1=beta1, beta2=beta2, eps=eps)

    def reset(self, params: dict, names):
        """Fresh moments (and step counts) for the named parameters."""
        for k in names:
            self.m[k] = np.zeros_like(params[k])
            self.v[k] = np.zeros_like(params[k])
            self.steps[k] = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr_plane: float,
              lr_mlp: float):
    """One bias-corrected Adam update, in place, with per-group learning rates."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{p.shape} for {name}")
        lr = lr_plane if name in GRID_PARAMS else lr_mlp
        state.steps[name] += 1
        t = state.steps[name]
        m, v = state.m[name], state.v[name]
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        mhat = m / (1.0 - state.beta1 ** t)
        vhat = v / (1.0 - state.beta2 ** t)
        p[...] = p - (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)


@dataclass
class TrainConfig:
    """Everything a training run needs, JSON-serializable and flat."""

    mode: str = "static3d"
    # model
    channels: int = 4
    initial_res: int = 16
    final_res: int = 48
    time_res: int = 16
    width: int = 64
    variant: str = "synergy"
    use_coords: bool = True
    use_planes: bool = True
    use_viewdir: bool = False
    grid_scale: float = 0.1
    dtype: str = "float32"
    # rays
    batch_size: int = 4096
    n_samples: int = 48
    near: float = 2.0
    far: float = 6.0
    bbox_min: list = field(default_factory=lambda: [-1.5, -1.5, -1.5])
    bbox_max: list = field(default_factory=lambda: [1.5, 1.5, 1.5])
    background: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    stratified: bool = True
    # schedule
    total_iters: int = 30000
    lr_plane: float = 0.02
    lr_mlp: float = 0.001
    lr_decay_target: float = 0.1
    lambda3_start: float = 8e-5
    lambda3_end: float = 4e-5
    upsample_steps: list | None = None  # [(iteration, resolution)], None = default
    # curriculum (window given as percentages of total_iters)
    curriculum_enabled: bool = False
    curriculum_start_pct: float = 5.0
    curriculum_end_pct: float = 95.0
    # loss
    lambda1: float = 0.001
    lambda2: float = 1.0
    # bookkeeping
    seed: int = 0
    eval_every: int = 500
    log_every: int = 100

    def __post_init__(self):
        if self.mode not in ("static3d", "dynamic4d"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.batch_size < 1 or self.total_iters < 0 or self.n_samples < 1:
            raise ValueError("batch_size/n_samples must be >= 1 and "
                             "total_iters >= 0")
        if self.variant not in ("synergy", "type1", "type2", "type3"):
            raise ValueError(f"unknown encoder variant {self.variant!r}")

    def np_dtype(self):
        return {"float32": np.float32, "float64": np.float64}[self.dtype]

    def schedule(self) -> TrainSchedule:
        steps = self.upsample_steps
        if steps is None:
            steps = schedlib.default_upsample_steps(self.initial_res, self.final_res,
                                                    self.total_iters)
        return TrainSchedule(total_iters=self.total_iters,
                             upsample_steps=[tuple(s) for s in steps],
                             lr_plane=self.lr_plane, lr_mlp=self.lr_mlp,
                             lr_decay_target=self.lr_decay_target,
                             lambda3_start=self.lambda3_start,
                             lambda3_end=self.lambda3_end)

    def curriculum(self) -> CurriculumConfig:
        if not self.curriculum_enabled:
            return CurriculumConfig.disabled(self.channels)
        return CurriculumConfig.from_percentages(self.curriculum_start_pct,
                                                 self.curriculum_end_pct,
                                                 self.total_iters, self.channels)

    def build_model(self) -> FieldModel:
        rng = np.random.default_rng([self.seed, 0xC0FFEE])
        return build_model(mode=self.mode, channels=self.channels,
                           spatial_res=self.initial_res, time_res=self.time_res,
                           width=self.width, variant=self.variant,
                           use_coords=self.use_coords, use_planes=self.use_planes,
                           use_viewdir=self.use_viewdir, rng=rng,
                           grid_scale=self.grid_scale, dtype=self.np_dtype())

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RayPool:
    """Flattened (ray origin, direction, target color, time) tuples for training."""

    origins: np.ndarray
    dirs: np.ndarray
    colors: np.ndarray
    times: np.ndarray | None


def build_ray_pool(dataset) -> RayPool:
    origins, dirs, colors, times = [], [], [], []
    for k, cam in enumerate(dataset.cameras):
        o, d = renderlib.generate_rays(cam)
        origins.append(o)
        dirs.append(d)
        colors.append(dataset.images[k].reshape(-1, 3))
        if dataset.times is not None:
            times.append(np.full(o.shape[0], dataset.times[k]))
    return RayPool(np.concatenate(origins), np.concatenate(dirs),
                   np.concatenate(colors),
                   np.concatenate(times) if times else None)


def make_batch(pool: RayPool, cfg: TrainConfig, rng: np.random.Generator,
               dynamic: bool) -> diff.RenderBatch:
    idx = rng.integers(0, pool.origins.shape[0], cfg.batch_size)
    rays = renderlib.sample_along(pool.origins[idx], pool.dirs[idx], cfg.n_samples,
                                  cfg.near, cfg.far,
                                  stratified=cfg.stratified, rng=rng)
    pts, inside = normalize_points(rays.positions, cfg.bbox_min, cfg.bbox_max)
    if dynamic:
        if pool.times is None:
            raise ValueError("dynamic training needs per-view times")
        t = np.broadcast_to(pool.times[idx][:, None, None],
                            pts.shape[:2] + (1,))
        pts = np.concatenate([pts, t], axis=2)
    return diff.RenderBatch(positions=pts, deltas=rays.deltas, inside=inside,
                            target=pool.colors[idx],
                            background=np.asarray(cfg.background),
                            viewdirs=pool.dirs[idx])


def evaluate_view(model: FieldModel, cfg: TrainConfig, view) -> float:
    """PSNR of a rendered held-out view against its ground truth."""
    cam, image, t = view
    rendered = render_view(model, cam, cfg.n_samples, (cfg.bbox_min, cfg.bbox_max),
                           cfg.background, time=t)
    return psnr(rendered, image)


def train(model: FieldModel, dataset, cfg: TrainConfig, eval_view=None,
          adam: AdamState | None = None, start_iter: int = 0,
          stop_iter: int | None = None, dump_path: str | None = None,
          guard_upsample: bool = False):
    """Run the optimization loop from start_iter to cfg.total_iters.

    eval_view is an optional (camera, image, time) triple scored with PSNR at
    eval_every intervals.  stop_iter interrupts the run early without touching
    the schedules, which stay functions of cfg.total_iters; resuming from a
    checkpoint saved there reproduces the uninterrupted run exactly.
    Returns (model, adam, history) where history is a list of per-interval
    metric records.
    """
    sched = cfg.schedule()
    cur = cfg.curriculum()
    dynamic = model.mode == DYNAMIC4D
    pool = build_ray_pool(dataset)
    if adam is None:
        adam = AdamState.init(model.parameters())
    history = []
    end = cfg.total_iters if stop_iter is None else min(stop_iter, cfg.total_iters)

    for t in range(start_iter, end):
        for it, res in sched.upsample_steps:
            if it == t:
                if guard_upsample and eval_view is not None:
                    before = evaluate_view(model, cfg, eval_view)
                model.planes = gridlib.upsample(model.planes, res)
                adam.reset(model.parameters(), GRID_PARAMS)
                rec = {"iteration": t, "event": "upsample", "resolution": res}
                if guard_upsample and eval_view is not None:
                    rec["psnr_before"] = before
                    rec["psnr_after"] = evaluate_view(model, cfg, eval_view)
                history.append(rec)

        rng = np.random.default_rng([cfg.seed, t])
        batch = make_batch(pool, cfg, rng, dynamic)
        gamma = schedlib.curriculum_weights(cur, t)
        weights = LossWeights(lap=cfg.lambda1, lap_factor=cfg.lambda2,
                              sparsity=schedlib.lambda3_at(sched, t))
        try:
            total, comps, store = diff.backward(model, batch, weights, gamma)
        except NumericError as e:
            if dump_path:
                np.savez(dump_path, positions=batch.positions, target=batch.target,
                         deltas=batch.deltas, iteration=t)
                raise NumericError(f"{e} at iteration {t}; batch dumped to "
                                   f"{dump_path}") from e
            raise NumericError(f"{e} at iteration {t}") from e

        lr_plane, lr_mlp = schedlib.lr_at(sched, t)
        adam_step(model.parameters(), store.grads, adam, lr_plane, lr_mlp)

        last = t == cfg.total_iters - 1
        if t % cfg.log_every == 0 or last:
            rec = {"iteration": t, "loss": comps["total"],
                   "photometric": comps["photometric"],
                   "lap_planes": comps["lap_planes"],
                   "lap_factors": comps["lap_factors"], "l1": comps["l1"],
                   "lr_plane": lr_plane}
            if eval_view is not None and (t % cfg.eval_every == 0 or last):
                rec["psnr"] = evaluate_view(model, cfg, eval_view)
            history.append(rec)
    return model, adam, history
