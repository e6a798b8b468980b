"""Structural-variability measures for sampled functions and ODE classes.

* ODE order of sampled data (:func:`minimal_ode_order`), using finite
  differences and the same nullspace fit as :mod:`annlab.annihilator`.
* Linear classes through the companion polynomial
  ``p(D) = D^n + c_n D^(n-1) + ... + c_1`` (:func:`companion_roots`).
  Note the indexing: ``coeffs[j]`` is ``c_{j+1}`` and multiplies ``D^j``.
* Quadratic classes through Sylvester inertia (:func:`inertia_signature`,
  :func:`quadratic_ode_class`) and trajectories of the scalar canonical
  family ``y' = e0 + e1*y + e2*y^2`` with ``e_i`` in ``{-1, 0, 1}``.
* Common constant-coefficient annihilators of several functions
  (:func:`common_annihilator`).
* A description length in bits for a polynomial ODE
  (:func:`ode_description_length`).
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .annihilator import DEFAULT_TOL, fit_nullspace, relation_from_fit
from .fd import grid_derivatives
from .poly import MultiPoly
from .validation import check_uniform_grid

ROOT_LABELS = ("decaying", "growing", "oscillatory-pure", "oscillatory-damped",
               "oscillatory-growing", "polynomial")


# -- ODE order of samples --------------------------------------------------------

def minimal_ode_order(x, y, max_order: int = 4, degree: int = 1, tol: float = DEFAULT_TOL,
                      accuracy: int = 6):
    """Smallest ``k`` such that ``P(f, f', .., f^(k)) = 0`` on the samples.

    Degrees ``1..degree`` are tried in turn for each order, and only relations
    that actually involve ``f^(k)`` count.  Returns ``(k, P)`` or ``None``.
    Raises :class:`annlab.fd.UnreliableInputError` on noisy samples.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y differ in length")
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    if x.size < 4 * max_order + 1:
        raise ValueError(f"need at least {4 * max_order + 1} samples for order {max_order}")
    dx = check_uniform_grid(x)
    _, jets = grid_derivatives(y, dx, max_order, accuracy)
    for order in range(1, max_order + 1):
        for d in range(1, degree + 1):
            fit = fit_nullspace(jets[:, :order + 1], d)
            rel = relation_from_fit(fit, tol, prefer_top=True)
            if rel is not None and _involves_top(rel):
                return order, rel
    return None


def _involves_top(p: MultiPoly, rel_tol: float = 1e-6) -> bool:
    c = np.abs(p.coefficient_vector())
    cutoff = rel_tol * c.max()
    return any(m[-1] > 0 and abs(v) > cutoff for m, v in p.terms)


# -- companion polynomial ---------------------------------------------------------

@dataclass
class CompanionSpectrum:
    coeffs: np.ndarray
    roots: np.ndarray
    class_labels: list

    @property
    def numpy_coeffs(self) -> np.ndarray:
        """``[1, c_n, .., c_1]`` -- highest power first."""
        return np.concatenate([[1.0], self.coeffs[::-1]])

    def residuals(self) -> np.ndarray:
        return np.abs(np.polyval(self.numpy_coeffs, self.roots))

    def to_dict(self) -> dict:
        return {
            "convention": "p(D) = D^n + c_n D^(n-1) + ... + c_1; coeffs lists c_1..c_n",
            "coeffs": self.coeffs.tolist(),
            "roots": [{"real": float(r.real), "imag": float(r.imag), "label": lab}
                      for r, lab in zip(self.roots, self.class_labels)],
        }


def label_root(r: complex, zero_tol: float) -> str:
    re_zero = abs(r.real) <= zero_tol
    im_zero = abs(r.imag) <= zero_tol
    if re_zero and im_zero:
        return "polynomial"
    if im_zero:
        return "decaying" if r.real < 0 else "growing"
    if re_zero:
        return "oscillatory-pure"
    return "oscillatory-damped" if r.real < 0 else "oscillatory-growing"


def companion_roots(coeffs: Sequence[float], label_tol: float = 1e-7) -> CompanionSpectrum:
    """Roots of ``D^n + c_n D^(n-1) + .. + c_1`` via companion-matrix eigenvalues."""
    c = np.asarray(coeffs, dtype=float).ravel()
    n = c.size
    if n < 1:
        raise ValueError("companion polynomial needs at least one coefficient")
    comp = np.zeros((n, n))
    comp[1:, :-1] = np.eye(n - 1)
    comp[:, -1] = -c
    roots = np.linalg.eigvals(comp).astype(complex)
    # exact zeros where the polynomial has trailing zero coefficients
    n_zero = 0
    while n_zero < n and c[n_zero] == 0.0:
        n_zero += 1
    if n_zero:
        order = np.argsort(np.abs(roots))
        roots[order[:n_zero]] = 0.0
    roots = _polish(np.concatenate([[1.0], c[::-1]]), roots)
    roots = np.array(sorted(roots, key=lambda r: (r.real, r.imag)))
    scale = 1.0 + float(np.max(np.abs(roots)))
    labels = [label_root(r, label_tol * scale) for r in roots]
    return CompanionSpectrum(c, roots, labels)


def _polish(p: np.ndarray, roots: np.ndarray, steps: int = 3) -> np.ndarray:
    """A few Newton steps on simple roots; multiple roots are left alone."""
    dp = np.polyder(p)
    out = roots.copy()
    for i, r in enumerate(roots):
        z = r
        for _ in range(steps):
            d = np.polyval(dp, z)
            if d == 0 or abs(d) < 1e-8 * (1 + abs(z)) ** (len(p) - 2):
                break
            z_new = z - np.polyval(p, z) / d
            if abs(np.polyval(p, z_new)) >= abs(np.polyval(p, z)):
                break
            z = z_new
        out[i] = z
    return out


# -- inertia ------------------------------------------------------------------------

class InertiaSignature(NamedTuple):
    n_plus: int
    n_minus: int
    n_zero: int


def inertia_signature(A) -> InertiaSignature:
    """Counts of positive, negative and zero eigenvalues of a symmetric matrix.

    Eigenvalues within ``1e-10 * (1 + ||A||_2)`` of zero count as zero.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    norm = float(np.max(np.abs(A))) if A.size else 0.0
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-12 * norm:
        warnings.warn("matrix is not symmetric; using (A + A^T) / 2")
        A = 0.5 * (A + A.T)
    eig = np.linalg.eigvalsh(A)
    eps = 1e-10 * (1.0 + float(np.max(np.abs(eig), initial=0.0)))
    return InertiaSignature(int(np.sum(eig > eps)), int(np.sum(eig < -eps)),
                            int(np.sum(np.abs(eig) <= eps)))


@dataclass
class QuadraticClass:
    signature: InertiaSignature
    pattern: tuple
    matrix: np.ndarray
    linear_spectrum: CompanionSpectrum | None = None

    @property
    def is_linear(self) -> bool:
        return self.signature.n_zero == len(self.pattern)

    def to_dict(self) -> dict:
        return {"signature": list(self.signature), "pattern": list(self.pattern),
                "matrix": self.matrix.tolist(), "is_linear": self.is_linear,
                "linear_spectrum": None if self.linear_spectrum is None
                else self.linear_spectrum.to_dict()}


def quadratic_part(q: MultiPoly) -> np.ndarray:
    n = q.n_vars
    A = np.zeros((n, n))
    for m, c in q.terms:
        if sum(m) != 2:
            continue
        idx = [i for i, e in enumerate(m) for _ in range(e)]
        i, j = idx
        if i == j:
            A[i, i] += c
        else:
            A[i, j] += c / 2
            A[j, i] += c / 2
    return A


def quadratic_ode_class(q: MultiPoly) -> QuadraticClass:
    """Inertia of the degree-2 part of ``q(T_0, .., T_n)``.

    The canonical pattern lists the diagonal coefficients of the
    Sylvester-reduced form, ``+1`` first, then ``-1``, then ``0``.  Without a
    quadratic part the linear part ``sum b_i T_i`` is also classified through
    its companion polynomial (when it involves some derivative).
    """
    if q.degree > 2:
        raise ValueError(f"polynomial has degree {q.degree}; at most 2 supported")
    A = quadratic_part(q)
    sig = inertia_signature(A)
    pattern = (1,) * sig.n_plus + (-1,) * sig.n_minus + (0,) * sig.n_zero
    spectrum = None
    if sig.n_zero == q.n_vars:
        b = np.zeros(q.n_vars)
        for m, c in q.terms:
            if sum(m) == 1:
                b[m.index(1)] = c
        nz = np.flatnonzero(b)
        if nz.size and nz[-1] >= 1:
            k = nz[-1]
            spectrum = companion_roots(b[:k] / b[k])
    return QuadraticClass(sig, pattern, A, spectrum)


# -- canonical quadratic trajectories ------------------------------------------------

@dataclass
class Trajectory:
    trajectory_id: str
    y0: float
    t: np.ndarray
    y: np.ndarray
    blowup_time: float | None = None


@dataclass
class TrajectoryBundle:
    eps: tuple
    trajectories: list = field(default_factory=list)


def class_lattice() -> list[tuple]:
    """All 27 sign patterns ``(e0, e1, e2)``."""
    return list(itertools.product((-1, 0, 1), repeat=3))


def integrate_class_trajectories(eps, y0s, t_span=(0.0, 5.0), step: float = 1e-3,
                                 guard: float = 1e6) -> TrajectoryBundle:
    """Classical RK4 for ``y' = e0 + e1*y + e2*y^2`` from each initial value.

    A trajectory stops at the first step where ``|y| > guard`` (or ``y`` is
    not finite); that step's time is recorded as the blow-up time.
    """
    e0, e1, e2 = (float(e) for e in eps)
    if step <= 0:
        raise ValueError("step must be positive")
    if guard <= 0:
        raise ValueError("guard must be positive")
    t0, t1 = (float(v) for v in t_span)
    n_steps = int(math.ceil((t1 - t0) / step - 1e-9))

    def rhs(y):
        return e0 + e1 * y + e2 * y * y

    y = np.asarray(y0s, dtype=float).ravel()
    alive = np.ones(y.size, dtype=bool)
    values = np.full((n_steps + 1, y.size), np.nan)
    values[0] = y
    blowup = np.full(y.size, np.nan)
    stop = np.full(y.size, n_steps)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            h = min(step, t1 - (t0 + k * step))
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = np.where(alive, y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), y)
            bad = alive & (~np.isfinite(y) | (np.abs(y) > guard))
            if bad.any():
                blowup[bad] = t0 + k * step + h
                stop[bad] = k
                alive &= ~bad
            values[k + 1] = np.where(alive, y, np.nan)
            if not alive.any():
                break
    t = t0 + step * np.arange(n_steps + 1)
    t[-1] = min(t[-1], t1)
    bundle = TrajectoryBundle(tuple(int(e) for e in eps))
    for i, y_init in enumerate(np.asarray(y0s, dtype=float).ravel()):
        last = stop[i] + 1 if np.isfinite(blowup[i]) else n_steps + 1
        tid = "e0={:+d}|e1={:+d}|e2={:+d}|y0={:.6g}".format(*bundle.eps, y_init)
        bundle.trajectories.append(Trajectory(
            tid, float(y_init), t[:last].copy(), values[:last, i].copy(),
            None if not np.isfinite(blowup[i]) else float(blowup[i])))
    return bundle


def write_trajectories_csv(bundles, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "y", "trajectory_id"])
        for bundle in bundles:
            for tr in bundle.trajectories:
                for ti, yi in zip(tr.t, tr.y):
                    writer.writerow([repr(float(ti)), repr(float(yi)), tr.trajectory_id])


# -- common annihilators --------------------------------------------------------------

@dataclass
class DeficitReport:
    max_order_tested: int
    operator: np.ndarray | None
    per_block_residuals: list
    ratio: float = math.nan

    @property
    def order(self) -> int | None:
        return None if self.operator is None else self.operator.size

    def to_dict(self) -> dict:
        return {
            "convention": "T = D^r + c_r D^(r-1) + ... + c_1; operator lists c_1..c_r",
            "max_order_tested": self.max_order_tested,
            "order": self.order,
            "operator": None if self.operator is None else self.operator.tolist(),
            "per_block_residuals": self.per_block_residuals,
            "ratio": self.ratio,
        }


def apply_operator(coeffs, jets: np.ndarray) -> np.ndarray:
    """``(D^r + c_r D^(r-1) + .. + c_1) f`` from jet columns ``f .. f^(r)``."""
    c = np.asarray(coeffs, dtype=float)
    r = c.size
    return jets[:, :r] @ c + jets[:, r]


def common_annihilator(blocks, x, max_order: int, tol: float = DEFAULT_TOL,
                       accuracy: int = 6) -> DeficitReport:
    """Lowest-order monic constant-coefficient operator annihilating every block.

    Orders ``1..max_order`` are tried; at each, the finite-difference jets of
    all blocks are stacked into one matrix whose columns are scaled to unit
    norm, and an operator exists when the smallest singular value is below
    ``tol`` times the largest.
    """
    blocks = [np.asarray(b, dtype=float).ravel() for b in blocks]
    if not blocks:
        raise ValueError("at least one block required")
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    x = np.asarray(x, dtype=float).ravel()
    dx = check_uniform_grid(x)
    if any(b.shape != x.shape for b in blocks):
        raise ValueError("every block must be sampled on the shared grid")
    jets = [grid_derivatives(b, dx, max_order, accuracy)[1] for b in blocks]
    ratio = math.nan
    for r in range(1, max_order + 1):
        stacked = np.vstack([j[:, :r + 1] for j in jets])
        norms = np.linalg.norm(stacked, axis=0)
        norms[norms == 0.0] = 1.0
        _, s, vt = np.linalg.svd(stacked / norms, full_matrices=False)
        ratio = float(s[-1] / s[0]) if s[0] > 0 else 0.0
        if ratio < tol:
            v = vt[-1] / norms
            if abs(v[-1]) <= 1e-12 * np.max(np.abs(v)):
                continue
            c = v[:-1] / v[-1]
            residuals = [float(np.max(np.abs(apply_operator(c, j[:, :r + 1])))) for j in jets]
            return DeficitReport(max_order, c, residuals, ratio)
    return DeficitReport(max_order, None, [], ratio)


# -- description length ----------------------------------------------------------------

def elias_gamma_length(n: int) -> int:
    if n < 1:
        raise ValueError("Elias gamma codes positive integers only")
    return 2 * (n.bit_length() - 1) + 1


def ode_description_length(P: MultiPoly, coeff_precision_bits: int = 32) -> int:
    """Bits to encode ``P``: header ``gamma(n_vars) + gamma(n_terms)``, then per
    term ``gamma(e + 1)`` for every exponent plus a fixed-width coefficient."""
    if P.is_zero():
        raise ValueError("the zero polynomial encodes no ODE")
    if coeff_precision_bits < 1:
        raise ValueError("coefficient precision must be positive")
    bits = elias_gamma_length(P.n_vars) + elias_gamma_length(len(P))
    for m, _ in P.terms:
        bits += sum(elias_gamma_length(e + 1) for e in m) + coeff_precision_bits
    return bits
