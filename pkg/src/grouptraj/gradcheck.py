"""Central finite differences, the independent oracle for every analytic
gradient in the project."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

FD_STEP = 1e-5
REL_TOL = 1e-4


def finite_difference(
    fn: Callable[[], Tensor],
    param: Tensor,
    flat_index: int,
    step: float = FD_STEP,
) -> float:
    """Central-difference derivative of ``fn()`` w.r.t. one coordinate of
    ``param``. ``fn`` must re-run the full forward pass on each call."""
    flat = param.data.reshape(-1)
    orig = flat[flat_index]
    with no_grad():
        flat[flat_index] = orig + step
        hi = float(fn().data)
        flat[flat_index] = orig - step
        lo = float(fn().data)
    flat[flat_index] = orig
    return (hi - lo) / (2.0 * step)


def relative_error(analytic: float, numeric: float, floor: float = 1e-7) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    rng: np.random.Generator | None = None,
    coords_per_param: int | None = 3,
    step: float = FD_STEP,
    rel_tol: float = REL_TOL,
    floor: float = 1e-7,
) -> list[tuple[str, int, float, float, float]]:
    """Compare analytic gradients of scalar ``fn()`` against central finite
    differences.

    Runs one analytic backward pass, then probes ``coords_per_param``
    randomly chosen coordinates of each parameter (all coordinates when
    ``None``). Returns the list of failures as
    (name, flat_index, analytic, numeric, rel_err); empty means the check
    passed.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for _, p in params:
        p.zero_grad()
    loss = fn()
    loss.backward()

    failures = []
    for name, p in params:
        grad = np.zeros_like(p.data) if p.grad is None else p.grad
        n = p.data.size
        if coords_per_param is None or coords_per_param >= n:
            idxs: Iterable[int] = range(n)
        else:
            idxs = rng.choice(n, size=coords_per_param, replace=False)
        gflat = grad.reshape(-1)
        for i in idxs:
            numeric = finite_difference(fn, p, int(i), step=step)
            err = relative_error(float(gflat[i]), numeric, floor=floor)
            if err > rel_tol:
                failures.append((name, int(i), float(gflat[i]), numeric, err))
    return failures
