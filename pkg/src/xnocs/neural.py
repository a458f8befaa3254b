"""Permutation-equivariant set layers and (X-)NOCS map losses, with analytic gradients.

Feature sets are arrays whose first axis indexes views and whose last axis
is the feature (channel) dimension; any axes in between (e.g. image rows
and columns) are treated as independent positions sharing the weights.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .core import InputError, NocsMap


class Pool(str, enum.Enum):
    AVERAGE = "average"
    MAX = "max"


class Nonlinearity(str, enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"


def as_feature_set(x: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    """Stack per-view tensors into one ``(n, ...)`` array, checking shapes agree."""
    if isinstance(x, np.ndarray):
        arr = x.astype(np.float64, copy=False)
    else:
        views = [np.asarray(v, dtype=np.float64) for v in x]
        if views and any(v.shape != views[0].shape for v in views):
            raise InputError("all views in a feature set must share one shape")
        arr = np.stack(views) if views else np.zeros((0,))
    if arr.ndim < 1 or arr.shape[0] == 0:
        raise InputError("feature set must contain at least one view")
    return arr


def pool(x: np.ndarray, kind: Pool = Pool.AVERAGE) -> np.ndarray:
    x = as_feature_set(x)
    if Pool(kind) is Pool.AVERAGE:
        return x.mean(axis=0)
    return x.max(axis=0)


def pool_subtract(x, kind: Pool = Pool.AVERAGE) -> np.ndarray:
    """``y_i = x_i - pool(x_1 .. x_n)``."""
    x = as_feature_set(x)
    return x - pool(x, kind)[None]


@dataclass(frozen=True, eq=False)
class EquivariantParams:
    """``y_i = act(x_i @ lambda.T + pool(x) @ gamma.T + bias)``.

    In block form over all views this is a dense layer whose diagonal
    blocks all equal ``lambda`` and whose off-diagonal coupling is shared.
    """

    lambda_weight: np.ndarray  # (D_out, D_in)
    gamma_weight: np.ndarray  # (D_out, D_in)
    bias: Optional[np.ndarray] = None  # (D_out,)
    pool: Pool = Pool.AVERAGE
    nonlinearity: Nonlinearity = Nonlinearity.IDENTITY

    def __post_init__(self):
        lam = np.asarray(self.lambda_weight, dtype=np.float64)
        gam = np.asarray(self.gamma_weight, dtype=np.float64)
        if lam.ndim != 2 or lam.shape != gam.shape:
            raise InputError(f"lambda {lam.shape} and gamma {gam.shape} must be matching matrices")
        bias = np.zeros(lam.shape[0]) if self.bias is None else np.asarray(self.bias, dtype=np.float64)
        if bias.shape != (lam.shape[0],):
            raise InputError(f"bias shape {bias.shape} does not match output dimension {lam.shape[0]}")
        object.__setattr__(self, "lambda_weight", lam)
        object.__setattr__(self, "gamma_weight", gam)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "pool", Pool(self.pool))
        object.__setattr__(self, "nonlinearity", Nonlinearity(self.nonlinearity))

    @property
    def in_dim(self) -> int:
        return self.lambda_weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.lambda_weight.shape[0]

    @classmethod
    def pool_subtract(cls, dim: int, pool: Pool = Pool.AVERAGE) -> "EquivariantParams":
        """Parameters under which the layer reduces to plain pool-subtract."""
        return cls(np.eye(dim), -np.eye(dim), np.zeros(dim), pool, Nonlinearity.IDENTITY)

    @classmethod
    def random(cls, rng: np.random.Generator, in_dim: int, out_dim: Optional[int] = None, **kw):
        out_dim = in_dim if out_dim is None else out_dim
        scale = 1.0 / np.sqrt(in_dim)
        return cls(
            rng.normal(scale=scale, size=(out_dim, in_dim)),
            rng.normal(scale=scale, size=(out_dim, in_dim)),
            rng.normal(scale=0.1, size=out_dim),
            **kw,
        )


def _check_input(params: EquivariantParams, x) -> np.ndarray:
    x = as_feature_set(x)
    if x.ndim < 2 or x.shape[-1] != params.in_dim:
        raise InputError(f"feature dimension {x.shape[-1:]} does not match layer input {params.in_dim}")
    return x


def _preactivation(params: EquivariantParams, x: np.ndarray):
    pooled = pool(x, params.pool)
    z = x @ params.lambda_weight.T + (pooled @ params.gamma_weight.T)[None] + params.bias
    return z, pooled


def equivariant_layer(params: EquivariantParams, x) -> np.ndarray:
    x = _check_input(params, x)
    z, _ = _preactivation(params, x)
    if params.nonlinearity is Nonlinearity.RELU:
        return np.maximum(z, 0.0)
    return z


def equivariant_backward(params: EquivariantParams, x, upstream):
    """Gradients of ``sum(upstream * equivariant_layer(params, x))``.

    Returns ``(grad_x, grad_params)`` where ``grad_params`` is an
    :class:`EquivariantParams` holding the weight and bias gradients. Max
    pooling routes the pooled gradient to the arg-max view, breaking ties
    toward the lowest view index; ReLU uses derivative 0 at 0.
    """
    x = _check_input(params, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape[:-1] + (params.out_dim,):
        raise InputError(f"upstream gradient shape {upstream.shape} does not match layer output")
    z, pooled = _preactivation(params, x)
    g = upstream * (z > 0) if params.nonlinearity is Nonlinearity.RELU else upstream

    g_pool = (g @ params.gamma_weight).sum(axis=0)  # gradient w.r.t. pooled features
    grad_x = g @ params.lambda_weight
    n = x.shape[0]
    if params.pool is Pool.AVERAGE:
        grad_x = grad_x + g_pool[None] / n
    else:
        winner = np.argmax(x, axis=0)  # first maximum on ties
        onehot = np.arange(n).reshape((n,) + (1,) * (x.ndim - 1)) == winner[None]
        grad_x = grad_x + onehot * g_pool[None]

    g2 = g.reshape(-1, params.out_dim)
    grad_lambda = g2.T @ x.reshape(-1, params.in_dim)
    grad_gamma = g.sum(axis=0).reshape(-1, params.out_dim).T @ pooled.reshape(-1, params.in_dim)
    grad_params = replace(
        params, lambda_weight=grad_lambda, gamma_weight=grad_gamma, bias=g2.sum(axis=0)
    )
    return grad_x, grad_params


# -- dense set layers (weight-tying check) -----------------------------------


def tied_dense_weight(lambda_weight: np.ndarray, gamma_weight: np.ndarray, n: int) -> np.ndarray:
    """Block matrix over ``n`` views: ``lambda`` on the diagonal, ``gamma`` elsewhere."""
    lam, gam = np.asarray(lambda_weight), np.asarray(gamma_weight)
    eye = np.eye(n)
    return np.kron(eye, lam) + np.kron(1.0 - eye, gam)


def dense_set_layer(weight: np.ndarray, x) -> np.ndarray:
    """Apply one dense matrix to the concatenation of all views' feature vectors."""
    x = as_feature_set(x)
    n, d = x.shape[0], x.shape[-1]
    if weight.shape[1] != n * d or weight.shape[0] % n:
        raise InputError(f"dense weight {weight.shape} incompatible with {n} views of dimension {d}")
    flat = np.moveaxis(x, 0, -2).reshape(x.shape[1:-1] + (n * d,))
    y = flat @ weight.T
    return np.moveaxis(y.reshape(x.shape[1:-1] + (n, weight.shape[0] // n)), -2, 0)


# -- losses ------------------------------------------------------------------

MASK_CLAMP = 1e-7
NORM_EPS = 1e-12


@dataclass(frozen=True)
class MaskedLossWeights:
    w_m: float = 0.7
    w_l: float = 0.3

    def __post_init__(self):
        if self.w_m < 0 or self.w_l < 0:
            raise InputError("loss weights must be non-negative")


@dataclass(frozen=True, eq=False)
class MapSet:
    """Dense per-view outputs: coordinate grids ``(H, W, 3)`` and mask grids ``(H, W)``.

    For predictions the masks are probabilities; for ground truth they are
    binary. ``peeled`` is the optional peeled-color grid.
    """

    visible: np.ndarray
    occluded: np.ndarray
    visible_mask: Optional[np.ndarray] = None
    occluded_mask: Optional[np.ndarray] = None
    peeled: Optional[np.ndarray] = None

    @classmethod
    def from_maps(cls, visible: NocsMap, occluded: NocsMap, peeled: Optional[NocsMap] = None) -> "MapSet":
        return cls(
            visible.coords,
            occluded.coords,
            visible.valid.astype(np.float64),
            occluded.valid.astype(np.float64),
            None if peeled is None else peeled.coords,
        )


def _pair_shapes(pred: MapSet, truth: MapSet, names) -> None:
    for name in names:
        a, b = getattr(pred, name), getattr(truth, name)
        if a is None or b is None:
            raise InputError(f"'{name}' is required in both prediction and truth")
        if np.shape(a) != np.shape(b):
            raise InputError(f"'{name}' shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def _norm_and_grad(pred: np.ndarray, truth: np.ndarray):
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    norm = np.sqrt(np.einsum("...k,...k->...", diff, diff))
    safe = np.where(norm > NORM_EPS, norm, 1.0)
    grad = np.where((norm > NORM_EPS)[..., None], diff / safe[..., None], 0.0)
    return norm, grad


def loss_l2(pred: MapSet, truth: MapSet):
    """Mean per-pixel Euclidean error over both maps, divided by the pixel count of one map.

    Every pixel contributes, object or not. Returns ``(value, grads)`` with
    ``grads`` a :class:`MapSet` of gradients w.r.t. the predicted maps.
    """
    _pair_shapes(pred, truth, ("visible", "occluded"))
    n = int(np.prod(np.shape(pred.visible)[:-1]))
    nv, gv = _norm_and_grad(pred.visible, truth.visible)
    no, go = _norm_and_grad(pred.occluded, truth.occluded)
    value = (nv.sum() + no.sum()) / n
    return float(value), MapSet(gv / n, go / n)


def _bce(p: np.ndarray, y: np.ndarray):
    p = np.asarray(p, dtype=np.float64)
    pc = np.clip(p, MASK_CLAMP, 1.0 - MASK_CLAMP)
    n = p.size
    value = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum() / n
    inside = (p > MASK_CLAMP) & (p < 1.0 - MASK_CLAMP)
    grad = np.where(inside, (-y / pc + (1.0 - y) / (1.0 - pc)) / n, 0.0)
    return value, grad


def _masked_l2(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray, name: str):
    m = int(mask.sum())
    if m == 0:
        raise InputError(f"ground-truth mask for '{name}' is empty; masked loss is undefined")
    norm, grad = _norm_and_grad(pred, truth)
    return (norm * mask).sum() / m, grad * mask[..., None] / m


def loss_masked(pred: MapSet, truth: MapSet, weights: MaskedLossWeights = MaskedLossWeights()):
    """Mask cross-entropy plus object-only Euclidean error, per map, summed.

    For each of the visible and occluded maps:
    ``w_m * BCE(mask) + w_l * mean_{object pixels} ||y - y_hat||``, where
    object pixels come from the ground-truth mask. A peeled-color grid, when
    present in both, adds ``w_l`` times its mean error over the occluded
    object pixels (its validity is the occluded mask, already penalized).
    """
    _pair_shapes(pred, truth, ("visible", "occluded", "visible_mask", "occluded_mask"))
    total = 0.0
    grads = {}
    for coords, mask in (("visible", "visible_mask"), ("occluded", "occluded_mask")):
        y_mask = np.asarray(getattr(truth, mask), dtype=np.float64)
        bce, g_mask = _bce(getattr(pred, mask), y_mask)
        l2, g_coords = _masked_l2(getattr(pred, coords), getattr(truth, coords), y_mask > 0.5, coords)
        total += weights.w_m * bce + weights.w_l * l2
        grads[mask] = weights.w_m * g_mask
        grads[coords] = weights.w_l * g_coords
    if pred.peeled is not None and truth.peeled is not None:
        _pair_shapes(pred, truth, ("peeled",))
        y_mask = np.asarray(truth.occluded_mask) > 0.5
        l2, g_peel = _masked_l2(pred.peeled, truth.peeled, y_mask, "peeled")
        total += weights.w_l * l2
        grads["peeled"] = weights.w_l * g_peel
    return float(total), MapSet(**grads)


def bce_floor(weights: MaskedLossWeights = MaskedLossWeights(), maps: int = 2) -> float:
    """Smallest attainable masked loss: perfect masks pinned at the clamp bounds."""
    return maps * weights.w_m * -np.log1p(-MASK_CLAMP)
