"""Field network: residual fused-feature encoder plus density and color heads.

The default encoder runs two residual blocks of two ReLU layers each.  Block 1
consumes the concatenated coordinates and plane features; block 2 consumes the
same input concatenated with block 1's output, which is the skip connection
that keeps the coordinate pathway responsive.  Three ablation wirings are also
provided: skip-at-every-layer (type1), a plain feed-forward stack (type2), and
a skip that re-injects only the coordinates (type3).

Every forward function returns a cache consumed by the matching *_backward
function; parameter gradients are hand-derived adjoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NumericError, ShapeError

VARIANTS = ("synergy", "type1", "type2", "type3")


@dataclass
class MlpParams:
    """Weights for one field network.

    layers holds the encoder stack as (W, b) pairs with W of shape (in, out);
    the wiring between them depends on `variant`.  rgb_layers is the two-layer
    color decoder.
    """

    variant: str
    layers: list
    rgb_layers: list
    d_coord: int
    d_plane: int
    width: int
    use_viewdir: bool = False

    def param_items(self):
        for k, (w, b) in enumerate(self.layers):
            yield f"enc_w{k}", w
            yield f"enc_b{k}", b
        for k, (w, b) in enumerate(self.rgb_layers):
            yield f"rgb_w{k}", w
            yield f"rgb_b{k}", b

    @property
    def d_input(self) -> int:
        return self.d_coord + self.d_plane


def _kaiming_uniform(rng, d_in, d_out, dtype):
    bound = np.sqrt(6.0 / d_in)
    return rng.uniform(-bound, bound, (d_in, d_out)).astype(dtype)


def init_mlp(variant: str, d_coord: int, d_plane: int, width: int,
             rng: np.random.Generator, n_layers: int = 4, n_extra: int = 0,
             use_viewdir: bool = False, dtype=np.float64) -> MlpParams:
    """Build encoder + color-decoder weights for the requested wiring.

    For synergy/type3 the residual blocks always contribute four layers and
    n_extra appends plain width->width layers after them; for type1/type2
    n_layers is the total stack depth.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown encoder variant {variant!r}")
    d_in = d_coord + d_plane
    dims = []
    if variant in ("synergy", "type3"):
        skip = d_in if variant == "synergy" else d_coord
        dims = [(d_in, width), (width, width), (skip + width, width), (width, width)]
        dims += [(width, width)] * n_extra
    elif variant == "type1":
        dims = [(d_in, width)] + [(width + d_in, width)] * (n_layers - 1)
    else:
        dims = [(d_in, width)] + [(width, width)] * (n_layers - 1)
    layers = [(_kaiming_uniform(rng, i, o, dtype), np.zeros(o, dtype=dtype))
              for i, o in dims]
    d_rgb_in = width + (3 if use_viewdir else 0)
    rgb_layers = [(_kaiming_uniform(rng, d_rgb_in, width, dtype), np.zeros(width, dtype=dtype)),
                  (_kaiming_uniform(rng, width, 3, dtype), np.zeros(3, dtype=dtype))]
    return MlpParams(variant, layers, rgb_layers, d_coord, d_plane, width, use_viewdir)


def _linear(x, w, b, layer_name):
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"{layer_name} expects input width {w.shape[0]}, got {x.shape[1]}")
    return x @ w + b


@dataclass
class EncodeCache:
    x: np.ndarray
    inputs: list = field(default_factory=list)   # matmul input per layer
    masks: list = field(default_factory=list)    # relu derivative per layer


def encode(params: MlpParams, coord: np.ndarray, plane: np.ndarray):
    """Run the encoder on batched coordinates (N, d_coord) and plane features.

    ReLU sits between layers; the final layer's pre-activation is the returned
    hidden feature, so the density head sees both signs.
    Returns (hidden (N, width), cache).
    """
    if coord.shape[1] != params.d_coord or plane.shape[1] != params.d_plane:
        raise ShapeError(f"encoder built for coord/plane widths "
                         f"({params.d_coord}, {params.d_plane}), got "
                         f"({coord.shape[1]}, {plane.shape[1]})")
    x = np.concatenate([coord, plane], axis=1)
    cache = EncodeCache(x=x)
    ls = params.layers
    last = len(ls) - 1

    def step(inp, k):
        z = _linear(inp, ls[k][0], ls[k][1], f"encoder layer {k}")
        mask = None if k == last else z > 0
        cache.inputs.append(inp)
        cache.masks.append(mask)
        return z if mask is None else np.where(mask, z, 0.0)

    if params.variant in ("synergy", "type3"):
        a = step(x, 0)
        phi1 = step(a, 1)
        skip = x if params.variant == "synergy" else coord
        a = step(np.concatenate([skip, phi1], axis=1), 2)
        h = step(a, 3)
        for k in range(4, len(ls)):
            h = step(h, k)
    elif params.variant == "type1":
        h = step(x, 0)
        for k in range(1, len(ls)):
            h = step(np.concatenate([h, x], axis=1), k)
    else:
        h = step(x, 0)
        for k in range(1, len(ls)):
            h = step(h, k)
    return h, cache


def encode_backward(params: MlpParams, cache: EncodeCache, d_hidden: np.ndarray):
    """Adjoint of encode.

    Returns (layer grads [(dW, db)], d_coord (N, d_coord), d_plane (N, d_plane)).
    """
    ls = params.layers
    grads = [None] * len(ls)
    d_x = np.zeros_like(cache.x)
    dc = params.d_coord

    def back(k, d_out):
        mask = cache.masks[k]
        dz = d_out if mask is None else d_out * mask
        inp = cache.inputs[k]
        grads[k] = (inp.T @ dz, dz.sum(axis=0))
        return dz @ ls[k][0].T

    d = d_hidden
    if params.variant in ("synergy", "type3"):
        for k in range(len(ls) - 1, 3, -1):
            d = back(k, d)
        d = back(3, d)
        d_in2 = back(2, d)
        skip_w = cache.x.shape[1] if params.variant == "synergy" else dc
        if params.variant == "synergy":
            d_x += d_in2[:, :skip_w]
        else:
            d_x[:, :dc] += d_in2[:, :skip_w]
        d_phi1 = d_in2[:, skip_w:]
        d = back(1, d_phi1)
        d_x += back(0, d)
    elif params.variant == "type1":
        w = cache.x.shape[1]
        for k in range(len(ls) - 1, 0, -1):
            d_in = back(k, d)
            d = d_in[:, :-w]
            d_x += d_in[:, -w:]
        d_x += back(0, d)
    else:
        for k in range(len(ls) - 1, -1, -1):
            d = back(k, d)
        d_x += d
    return grads, d_x[:, :dc], d_x[:, dc:]


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)), safe against overflow at both tails."""
    return np.where(x > 34.0, x, np.log1p(np.exp(np.minimum(x, 34.0))))


def density_head(hidden: np.ndarray):
    """Nonnegative density from the first hidden channel via softplus."""
    if hidden.shape[1] < 1:
        raise ShapeError("density head needs a nonempty hidden vector")
    z = hidden[:, 0]
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite value entering the density head")
    return softplus(z), z


def density_head_backward(z: np.ndarray, d_sigma: np.ndarray, d_hidden: np.ndarray):
    """Accumulate d(sigma)/d(hidden[:,0]) = sigmoid(z) into d_hidden."""
    d_hidden[:, 0] += d_sigma * expit(z)


@dataclass
class ColorCache:
    inp: np.ndarray
    mask: np.ndarray
    a: np.ndarray
    rgb: np.ndarray


def color_head(params: MlpParams, hidden: np.ndarray, viewdir: np.ndarray | None = None):
    """RGB in [0,1]^3 from the hidden feature: two layers then sigmoid."""
    inp = hidden
    if params.use_viewdir:
        if viewdir is None:
            raise ShapeError("model expects a view direction for the color decoder")
        inp = np.concatenate([hidden, viewdir], axis=1)
    (w0, b0), (w1, b1) = params.rgb_layers
    z0 = _linear(inp, w0, b0, "color layer 0")
    mask = z0 > 0
    a = np.where(mask, z0, 0.0)
    rgb = expit(_linear(a, w1, b1, "color layer 1"))
    return rgb, ColorCache(inp, mask, a, rgb)


def color_head_backward(params: MlpParams, cache: ColorCache, d_rgb: np.ndarray):
    """Adjoint of color_head. Returns ([(dW, db)] pairs, d_hidden)."""
    (w0, _), (w1, _) = params.rgb_layers
    dz1 = d_rgb * cache.rgb * (1.0 - cache.rgb)
    g1 = (cache.a.T @ dz1, dz1.sum(axis=0))
    dz0 = (dz1 @ w1.T) * cache.mask
    g0 = (cache.inp.T @ dz0, dz0.sum(axis=0))
    d_inp = dz0 @ w0.T
    d_hidden = d_inp[:, :params.width] if params.use_viewdir else d_inp
    return [g0, g1], d_hidden
