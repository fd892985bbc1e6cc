"""Functional gradient helpers on top of :mod:`mmattack.diffcore.tensor`.

An expression is a Python callable mapping a dict of named leaf tensors to a
scalar tensor. Evaluating it twice with the same leaf values is bit-identical
because every primitive is a deterministic numpy call.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .tensor import DTYPE, Tensor

Expression = Callable[[dict[str, Tensor]], Tensor]


def _leaves(params: Mapping[str, np.ndarray], wrt: Iterable[str] | None) -> tuple[dict, list[str]]:
    names = list(params) if wrt is None else list(wrt)
    for name in names:
        if name not in params:
            raise KeyError(f"unknown leaf {name!r}")
    want = set(names)
    leaves = {
        key: Tensor(np.array(value, dtype=DTYPE), requires_grad=key in want, name=key)
        for key, value in params.items()
    }
    return leaves, names


def evaluate(expr: Expression, params: Mapping[str, np.ndarray]) -> float:
    out = expr({k: Tensor(v, name=k) for k, v in params.items()})
    if out.data.size != 1:
        raise ValueError(f"expression output must be scalar, got shape {out.shape}")
    return float(out.data)


def value_and_grad(
    expr: Expression, params: Mapping[str, np.ndarray], wrt: Iterable[str] | None = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Forward value and exact reverse-mode gradients for the requested leaves.

    Leaves not in ``wrt`` are treated as constants. Leaves the output does not
    depend on get an all-zero gradient of their own shape.
    """
    leaves, names = _leaves(params, wrt)
    out = expr(leaves)
    if out.data.size != 1:
        raise ValueError(f"expression output must be scalar, got shape {out.shape}")
    if out.requires_grad:
        out.backward()
    grads = {}
    for name in names:
        g = leaves[name].grad
        grads[name] = np.zeros_like(leaves[name].data) if g is None else np.array(g)
    return float(out.data.reshape(())), grads


def finite_diff_check(
    expr: Expression,
    params: Mapping[str, np.ndarray],
    wrt: Iterable[str] | None = None,
    step: float = 1e-4,
) -> float:
    """Max relative gap between analytic and central-difference gradients.

    Per coordinate the gap is ``|a - c| / (|a| + |c| + 1e-12)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, grads = value_and_grad(expr, params, wrt)
    base = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    worst = 0.0
    for name, analytic in grads.items():
        flat = base[name].reshape(-1)
        flat_grad = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = evaluate(expr, base)
            flat[i] = orig - step
            f_minus = evaluate(expr, base)
            flat[i] = orig
            central = (f_plus - f_minus) / (2.0 * step)
            a = flat_grad[i]
            err = abs(a - central) / (abs(a) + abs(central) + 1e-12)
            worst = max(worst, err)
    return worst
