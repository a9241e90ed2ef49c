"""Training schedules: curriculum channel gating, learning-rate decay, L1 ramp.

The curriculum progressively engages plane-feature channels.  A sweep variable
alpha(t) = c * (t - t_start) / (t_end - t_start), clamped to [0, c], crosses one
channel index per c-th of the window; channel j (zero-based) is off while
alpha <= j, fully on once alpha >= j + 1, and bridged by a half-cosine in
between.  Before the window all channels are off, after it all are on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class CurriculumConfig:
    enabled: bool
    t_start: int
    t_end: int
    channels: int

    def __post_init__(self):
        if self.enabled and not self.t_start < self.t_end:
            raise ValueError(f"curriculum window needs t_start < t_end, "
                             f"got [{self.t_start}, {self.t_end}]")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")

    @classmethod
    def from_percentages(cls, start_pct: float, end_pct: float, total_iters: int,
                         channels: int, enabled: bool = True) -> "CurriculumConfig":
        """Window given as percentages of the total iteration count."""
        return cls(enabled=enabled,
                   t_start=int(round(start_pct / 100.0 * total_iters)),
                   t_end=int(round(end_pct / 100.0 * total_iters)),
                   channels=channels)

    @classmethod
    def disabled(cls, channels: int) -> "CurriculumConfig":
        return cls(enabled=False, t_start=0, t_end=1, channels=channels)


def curriculum_weights(cfg: CurriculumConfig, t: float) -> np.ndarray:
    """Per-channel engagement weights in [0,1] at iteration t."""
    c = cfg.channels
    if not cfg.enabled:
        return np.ones(c)
    alpha = c * (t - cfg.t_start) / (cfg.t_end - cfg.t_start)
    alpha = min(max(alpha, 0.0), float(c))
    a = alpha - np.arange(c)
    return np.where(a <= 0.0, 0.0,
                    np.where(a <= 1.0, 0.5 * (1.0 - np.cos(a * np.pi)), 1.0))


def apply_weights(feats: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Channelwise product of a (..., c) feature block with the gating vector."""
    gamma = np.asarray(gamma)
    if feats.shape[-1] != gamma.shape[-1]:
        raise ShapeError(f"feature channels {feats.shape[-1]} do not match "
                         f"weight length {gamma.shape[-1]}")
    return feats * gamma


@dataclass
class TrainSchedule:
    """Iteration-indexed knobs: upsampling events, learning rates, L1 ramp."""

    total_iters: int
    upsample_steps: list = field(default_factory=list)  # (iteration, resolution)
    lr_plane: float = 0.02
    lr_mlp: float = 0.001
    lr_decay_target: float = 0.1
    lambda3_start: float = 8e-5
    lambda3_end: float = 4e-5

    def __post_init__(self):
        if self.lr_plane <= 0 or self.lr_mlp <= 0:
            raise ValueError("learning rates must be positive")
        its = [s[0] for s in self.upsample_steps]
        res = [s[1] for s in self.upsample_steps]
        if any(b <= a for a, b in zip(its, its[1:])) or any(b <= a for a, b in zip(res, res[1:])):
            raise ValueError("upsample steps must be strictly increasing in "
                             "iteration and resolution")


def lr_at(s: TrainSchedule, t: int) -> tuple[float, float]:
    """Exponential decay from the initial rates to decay_target * initial at the end."""
    frac = t / s.total_iters if s.total_iters > 0 else 1.0
    scale = s.lr_decay_target ** frac
    return s.lr_plane * scale, s.lr_mlp * scale


def lambda3_at(s: TrainSchedule, t: int) -> float:
    """Linear ramp of the L1 weight across training."""
    frac = t / s.total_iters if s.total_iters > 0 else 1.0
    return s.lambda3_start + (s.lambda3_end - s.lambda3_start) * frac


def default_upsample_steps(initial_res: int, final_res: int, total_iters: int,
                           base_iters=(2000, 3000, 4000, 5500, 7000),
                           base_total: int = 30000) -> list:
    """Log-spaced resolutions at the conventional milestones, rescaled to total_iters.

    Steps that would not change the resolution are dropped.
    """
    if final_res < initial_res:
        raise ValueError("final resolution must be >= initial resolution")
    n = len(base_iters)
    res = np.round(np.exp(np.linspace(np.log(initial_res), np.log(final_res),
                                      n + 1))).astype(int)[1:]
    steps = []
    prev = initial_res
    for k, it in enumerate(base_iters):
        r = max(int(res[k]), prev)
        it_scaled = int(round(it * total_iters / base_total))
        if r > prev and 0 < it_scaled < total_iters:
            steps.append((it_scaled, r))
            prev = r
    return steps
