"""Finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(fn, inputs, eps=1e-5, max_coords=40, seed=0, floor=1e-6) -> float:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    Parameters
    ----------
    fn : callable
        Takes the input tensors and returns a scalar :class:`Tensor`.
    inputs : list of Tensor
        Leaves to perturb; those with ``requires_grad`` are checked. Their
        data should be float64.
    eps : float
        Finite-difference step.
    max_coords : int
        Coordinates sampled per input.
    floor : float
        Lower bound of the relative-error denominator, for near-zero gradients.

    Returns
    -------
    float
        Maximum relative error ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(seed)
    for x in inputs:
        x.grad = None
    fn(*inputs).backward()
    worst = 0.0
    for x in inputs:
        if not x.requires_grad:
            continue
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > max_coords:
            coords = rng.choice(flat.size, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn(*inputs).data)
            flat[i] = orig - eps
            down = float(fn(*inputs).data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


def random_tensor(rng, shape, requires_grad=True) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)
