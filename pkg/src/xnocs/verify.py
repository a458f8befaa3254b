"""Finite-difference and permutation harnesses for the set layers and losses.

These back both the ``equi-check`` command and the test suite. Random
instances are drawn away from non-differentiable points (ReLU kinks, max
ties, coincident predictions) so central differences are meaningful.
"""
from __future__ import annotations

import itertools
from dataclasses import replace
from typing import Callable

import numpy as np

from .neural import (
    EquivariantParams,
    MapSet,
    Nonlinearity,
    Pool,
    dense_set_layer,
    equivariant_backward,
    equivariant_layer,
    loss_l2,
    loss_masked,
)

FD_STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-6
KINK_MARGIN = 1e-4


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def gradient_error(analytic: np.ndarray, numeric: np.ndarray, rtol: float = RTOL, atol: float = ATOL) -> float:
    """Worst ratio of deviation to tolerance; <= 1 means every entry agrees."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    tol = np.maximum(rtol * np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    return float((np.abs(analytic - numeric) / tol).max(initial=0.0))


def max_relative_deviation(analytic: np.ndarray, numeric: np.ndarray, atol: float = ATOL) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / RTOL)
    return float((np.abs(analytic - numeric) / denom).max(initial=0.0))


# -- random instances ---------------------------------------------------------


def random_layer_instance(rng, n: int, dim: int, pool: Pool, act: Nonlinearity, positions=(2,)):
    """Random parameters and features with no pre-activation near 0 and no near-tied maxima."""
    while True:
        params = EquivariantParams.random(rng, dim, pool=pool, nonlinearity=act)
        x = rng.normal(size=(n, *positions, dim))
        if pool is Pool.MAX and n > 1:
            top2 = np.sort(x, axis=0)[-2:]
            if np.min(top2[1] - top2[0]) < 10 * KINK_MARGIN:
                continue
        if act is Nonlinearity.RELU:
            z = equivariant_layer(replace(params, nonlinearity=Nonlinearity.IDENTITY), x)
            if np.min(np.abs(z)) < 10 * KINK_MARGIN:
                continue
        return params, x


def random_mapsets(rng, height: int, width: int, peeled: bool = False):
    """Prediction/truth pairs with non-empty masks and no exact coordinate matches."""
    while True:
        vm = rng.random((height, width)) < 0.5
        om = rng.random((height, width)) < 0.5
        if vm.any() and om.any():
            break
    truth = MapSet(
        rng.random((height, width, 3)) * vm[..., None],
        rng.random((height, width, 3)) * om[..., None],
        vm.astype(float),
        om.astype(float),
        rng.random((height, width, 3)) * om[..., None] if peeled else None,
    )
    pred = MapSet(
        rng.random((height, width, 3)),
        rng.random((height, width, 3)),
        rng.uniform(0.05, 0.95, (height, width)),
        rng.uniform(0.05, 0.95, (height, width)),
        rng.random((height, width, 3)) if peeled else None,
    )
    return pred, truth


# -- checks ---------------------------------------------------------------------


def layer_gradient_error(params: EquivariantParams, x: np.ndarray, upstream: np.ndarray) -> dict:
    """Analytic vs. central-difference gradients for every layer input and parameter."""
    grad_x, grad_p = equivariant_backward(params, x, upstream)

    def f_x(xx):
        return float(np.sum(upstream * equivariant_layer(params, xx)))

    errors = {"x": gradient_error(grad_x, central_difference(f_x, x))}
    for name in ("lambda_weight", "gamma_weight", "bias"):

        def f_p(val, name=name):
            return float(np.sum(upstream * equivariant_layer(replace(params, **{name: val}), x)))

        errors[name] = gradient_error(getattr(grad_p, name), central_difference(f_p, getattr(params, name)))
    return errors


def loss_gradient_error(loss_fn, pred: MapSet, truth: MapSet, fields) -> dict:
    _, grads = loss_fn(pred, truth)
    errors = {}
    for name in fields:

        def f(val, name=name):
            return loss_fn(replace(pred, **{name: val}), truth)[0]

        errors[name] = gradient_error(getattr(grads, name), central_difference(f, getattr(pred, name)))
    return errors


def l2_gradient_error(pred: MapSet, truth: MapSet) -> dict:
    return loss_gradient_error(loss_l2, pred, truth, ("visible", "occluded"))


def masked_gradient_error(pred: MapSet, truth: MapSet) -> dict:
    fields = ["visible", "occluded", "visible_mask", "occluded_mask"]
    if pred.peeled is not None:
        fields.append("peeled")
    return loss_gradient_error(loss_masked, pred, truth, fields)


def permutation_deviation(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, perm) -> float:
    """``max |fn(x[perm]) - fn(x)[perm]|``."""
    perm = np.asarray(perm)
    return float(np.abs(fn(x[perm]) - fn(x)[perm]).max())


def all_permutations(n: int):
    return itertools.permutations(range(n))


def untied_control_deviation(rng, n: int, dim: int, trials: int = 5) -> float:
    """Smallest equivariance violation of random untied dense set layers."""
    worst = np.inf
    for _ in range(trials):
        w = rng.normal(size=(n * dim, n * dim))
        x = rng.normal(size=(n, dim))
        dev = max(permutation_deviation(lambda xx: dense_set_layer(w, xx), x, p) for p in _shifts(n))
        worst = min(worst, dev)
    return float(worst)


def _shifts(n):
    return [np.roll(np.arange(n), s) for s in range(1, n)]


def equi_check(n: int = 5, dim: int = 64, seed: int = 0, perms: int = 100) -> dict:
    """Run the equivariance and gradient suites once and report worst deviations."""
    rng = np.random.default_rng(seed)
    report = {"n": n, "dim": dim, "seed": seed}
    for pool in Pool:
        for act in Nonlinearity:
            params, x = random_layer_instance(rng, n, dim, pool, act)
            layer = lambda xx, p=params: equivariant_layer(p, xx)  # noqa: E731
            dev = max(permutation_deviation(layer, x, rng.permutation(n)) for _ in range(perms))
            upstream = rng.normal(size=x.shape[:-1] + (params.out_dim,))
            grad = layer_gradient_error(params, x, upstream)
            report[f"{pool.value}/{act.value}"] = {
                "equivariance_max_dev": dev,
                "gradient_max_error_ratio": max(grad.values()),
            }
    report["untied_control_min_dev"] = untied_control_deviation(rng, n, min(dim, 8))
    pred, truth = random_mapsets(rng, 4, 4, peeled=True)
    report["loss_l2_gradient_error_ratio"] = max(l2_gradient_error(pred, truth).values())
    report["loss_masked_gradient_error_ratio"] = max(masked_gradient_error(pred, truth).values())
    return report
