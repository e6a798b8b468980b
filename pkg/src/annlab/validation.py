"""Input checks shared by the estimators and the benchmark harness."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length


def check_scalar_input(X) -> np.ndarray:
    """Accept shape ``(n,)`` or ``(n, 1)``; return a finite 1-D float array."""
    X = np.asarray(X, dtype=float) if not hasattr(X, "iloc") else X.to_numpy(dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != 1:
        raise ValueError(f"expected a single input feature, got {X.shape[1]}")
    return X[:, 0]


def check_scalar_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    x = check_scalar_input(X)
    y = check_array(np.asarray(y, dtype=float).reshape(-1, 1), dtype=np.float64)[:, 0]
    check_consistent_length(x, y)
    return x, y


def check_domain(domain) -> tuple[float, float]:
    a, b = (float(v) for v in domain)
    if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
        raise ValueError(f"domain must be a finite interval [a, b] with b > a, got {domain}")
    return a, b


def check_uniform_grid(x, rtol: float = 1e-6) -> float:
    """Return the spacing of a uniform ascending grid, or raise."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("grid needs at least two points")
    steps = np.diff(x)
    dx = float(np.mean(steps))
    if dx <= 0 or np.max(np.abs(steps - dx)) > rtol * abs(dx) + 1e-12:
        raise ValueError("grid must be uniform and ascending")
    return dx
