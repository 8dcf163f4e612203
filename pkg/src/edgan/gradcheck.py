"""Finite-difference verification of reverse-mode gradients.

``grad_check`` evaluates a scalar-valued tensor function both ways: once
analytically through the tape, and once entry-by-entry with central
differences. The numeric side never touches the tape's gradients, so it is an
independent oracle for the backward implementations.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import DiffTensor, Graph, Param
from .errors import ConfigError, ContractError

# Relative error denominator floor keeps tiny gradients comparable.
_FLOOR = 1e-8

TensorFn = Callable[..., DiffTensor]


def grad_check(fn: TensorFn, inputs: Sequence[np.ndarray], step: float = 1e-4) -> float:
    """Return the worst relative error between analytic and numeric gradients.

    ``fn(graph, *tensors)`` must build and return a scalar tensor. Graphs are
    created in eval mode so dropout cannot perturb the comparison; the
    function is re-run with fresh graphs for every perturbed evaluation.
    """
    if step <= 0.0:
        raise ConfigError(f"grad_check step must be positive, got {step}")
    arrays = [np.array(a, dtype=np.float64) for a in inputs]

    graph = Graph(mode="eval")
    tensors = [graph.tensor(a, requires_grad=True) for a in arrays]
    out = fn(graph, *tensors)
    if out.values.size != 1:
        raise ContractError(f"grad_check needs a scalar output, got shape {out.values.shape}")
    graph.backward(out)
    analytic = [np.zeros_like(a) if t.grad is None else t.grad.copy() for a, t in zip(arrays, tensors)]

    def evaluate(candidate: Sequence[np.ndarray]) -> float:
        g = Graph(mode="eval")
        ts = [g.tensor(a) for a in candidate]
        return fn(g, *ts).item()

    worst = 0.0
    for i, base in enumerate(arrays):
        flat = base.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            up = evaluate(arrays)
            flat[j] = keep - step
            down = evaluate(arrays)
            flat[j] = keep
            numeric = (up - down) / (2.0 * step)
            a = analytic[i].reshape(-1)[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), _FLOOR)
            worst = max(worst, err)
    return worst


LossBuilder = Callable[[Graph], DiffTensor]


def grad_check_params(
    build_loss: LossBuilder,
    params: Sequence[Param],
    step: float = 1e-4,
    max_entries: Optional[int] = None,
) -> float:
    """Finite-difference check against the gradients of persistent parameters.

    ``build_loss(graph)`` must run a forward pass that watches ``params`` and
    return a scalar tensor. Each parameter entry is perturbed in place and the
    loss rebuilt; ``max_entries`` subsamples large parameters with a fixed
    stride so deep networks stay checkable in bounded time.
    """
    if step <= 0.0:
        raise ConfigError(f"grad_check_params step must be positive, got {step}")
    graph = Graph(mode="eval")
    out = build_loss(graph)
    if out.values.size != 1:
        raise ContractError(f"grad_check_params needs a scalar output, got shape {out.values.shape}")
    graph.backward(out)
    analytic = {p.name: graph.grad(p).copy() for p in params}

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            indices = range(flat.size)
        else:
            indices = range(0, flat.size, max(1, flat.size // max_entries))
        for j in indices:
            keep = flat[j]
            flat[j] = keep + step
            up = build_loss(Graph(mode="eval")).item()
            flat[j] = keep - step
            down = build_loss(Graph(mode="eval")).item()
            flat[j] = keep
            numeric = (up - down) / (2.0 * step)
            a = analytic[p.name].reshape(-1)[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), _FLOOR)
            worst = max(worst, err)
    return worst
