"""Central finite-difference derivatives.

Two entry points:

* :func:`callable_derivatives` differentiates a function we can evaluate
  anywhere.  Each derivative of order ``k`` uses the narrowest second-order
  central stencil (``2*ceil(k/2)+1`` nodes) at step ``h_k = h * 2**(k-1)``,
  followed by one Richardson step ``(4 D(h_k/2) - D(h_k)) / 3`` giving
  fourth-order accuracy.  Widening the step with ``k`` keeps round-off
  (which scales like ``eps / h**k``) below the truncation error.
* :func:`grid_derivatives` differentiates samples on a uniform grid with a
  central stencil of configurable accuracy, and checks it against the same
  stencil at twice the spacing.
"""

from __future__ import annotations

import numpy as np


class UnreliableInputError(ValueError):
    """Samples are too noisy or too coarse for consistent derivatives."""


def fornberg_weights(offsets, order: int) -> np.ndarray:
    """Weights of the ``order``-th derivative at 0 on the given node offsets."""
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    if order >= n:
        raise ValueError(f"need more than {order} nodes for derivative order {order}")
    c = np.zeros((n, order + 1))
    c1 = 1.0
    c4 = offsets[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = offsets[i]
        for j in range(i):
            c3 = offsets[i] - offsets[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def central_stencil(order: int, accuracy: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets and weights (unit spacing) of a central stencil."""
    if order < 1:
        raise ValueError("derivative order must be >= 1")
    if accuracy < 2 or accuracy % 2:
        raise ValueError("accuracy must be a positive even integer")
    half = (order + 1) // 2 - 1 + accuracy // 2
    offsets = np.arange(-half, half + 1)
    return offsets, fornberg_weights(offsets, order)


def callable_derivatives(f, x, max_order: int, h: float = 1e-3) -> np.ndarray:
    """Derivatives ``f, f', ..., f^(max_order)`` at points ``x``.

    ``f`` must accept a 1-D array.  Returns shape ``(len(x), max_order + 1)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((x.size, max_order + 1))
    out[:, 0] = f(x)
    for k in range(1, max_order + 1):
        offsets, weights = central_stencil(k)
        hk = h * 2.0 ** (k - 1)

        def d(step):
            acc = np.zeros(x.size)
            for o, w in zip(offsets, weights):
                if w != 0.0:
                    acc += w * f(x + o * step)
            return acc / step ** k

        out[:, k] = (4.0 * d(hk / 2.0) - d(hk)) / 3.0
    return out


def stencil_reach(max_order: int, h: float = 1e-3) -> float:
    """Farthest distance from ``x`` that :func:`callable_derivatives` samples."""
    if max_order < 1:
        return 0.0
    offsets, _ = central_stencil(max_order)
    return float(offsets.max()) * h * 2.0 ** (max_order - 1)


def _apply_stencil(y: np.ndarray, order: int, accuracy: int, stride: int, dx: float, half_max: int):
    offsets, weights = central_stencil(order, accuracy)
    n = y.size
    lo, hi = half_max, n - half_max
    acc = np.zeros(hi - lo)
    for o, w in zip(offsets, weights):
        s = int(o) * stride
        acc += w * y[lo + s:hi + s]
    return acc / (stride * dx) ** order


def grid_derivatives(y, dx: float, max_order: int, accuracy: int = 6,
                     consistency_tol: float | None = 1e-2):
    """Derivatives of uniformly spaced samples.

    Returns ``(index_slice, jets)`` where ``jets`` has shape
    ``(m, max_order + 1)`` for the interior samples ``y[index_slice]`` at which
    every stencil (including the doubled-width check stencil) fits.

    With ``consistency_tol`` set, each derivative is recomputed at twice the
    spacing; a discrepancy above ``consistency_tol * max(1, max|D|)`` raises
    :class:`UnreliableInputError`.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    if dx <= 0:
        raise ValueError("grid spacing must be positive")
    # widest stencil used anywhere, measured in grid points
    half_max = 0
    for k in range(1, max_order + 1):
        offsets, _ = central_stencil(k, accuracy)
        half_max = max(half_max, int(offsets.max()) * (2 if consistency_tol is not None else 1))
    if y.size <= 2 * half_max:
        raise UnreliableInputError(
            f"{y.size} samples are too few for derivatives up to order {max_order} "
            f"(need more than {2 * half_max})")
    sl = slice(half_max, y.size - half_max)
    jets = np.empty((y.size - 2 * half_max, max_order + 1))
    jets[:, 0] = y[sl]
    for k in range(1, max_order + 1):
        fine = _apply_stencil(y, k, accuracy, 1, dx, half_max)
        jets[:, k] = fine
        if consistency_tol is not None:
            coarse = _apply_stencil(y, k, accuracy, 2, dx, half_max)
            scale = max(1.0, float(np.max(np.abs(fine))))
            gap = float(np.max(np.abs(fine - coarse)))
            if not np.isfinite(gap) or gap > consistency_tol * scale:
                raise UnreliableInputError(
                    f"derivative order {k} disagrees across stencil widths by {gap:.3g} "
                    f"(scale {scale:.3g}); samples are noisy or too coarse")
    return sl, jets
