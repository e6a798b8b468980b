"""Sparse multivariate polynomials with float coefficients.

Terms are kept in a single canonical order (graded lexicographic: total
degree ascending, then exponent tuples descending) so that equality,
evaluation order and serialization are deterministic.
"""

from __future__ import annotations

import itertools
import math
import re
from typing import Iterable, Mapping, Sequence

import numpy as np

Monomial = tuple  # tuple[int, ...], one exponent per variable


class DimensionError(ValueError):
    """Raised when operands disagree on the number of variables."""


def grlex_key(exps: Sequence[int]) -> tuple:
    return (sum(exps), tuple(-e for e in exps))


class MultiPoly:
    """Immutable sparse polynomial in ``n_vars`` variables ``x0 .. x{n-1}``."""

    __slots__ = ("n_vars", "_terms", "_hash")

    def __init__(self, n_vars: int, terms: Mapping[Sequence[int], float] | Iterable = ()):
        if n_vars < 1:
            raise ValueError("n_vars must be positive")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[tuple, float] = {}
        for exps, coeff in items:
            exps = tuple(int(e) for e in exps)
            if len(exps) != n_vars:
                raise DimensionError(
                    f"monomial {exps} has {len(exps)} exponents, expected {n_vars}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            acc[exps] = acc.get(exps, 0.0) + float(coeff)
        self.n_vars = n_vars
        self._terms = tuple(sorted(((m, c) for m, c in acc.items() if c != 0.0),
                                   key=lambda t: grlex_key(t[0])))
        self._hash = None

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, n_vars: int) -> "MultiPoly":
        return cls(n_vars)

    @classmethod
    def constant(cls, n_vars: int, value: float) -> "MultiPoly":
        return cls(n_vars, {(0,) * n_vars: value})

    @classmethod
    def variable(cls, n_vars: int, index: int, coeff: float = 1.0) -> "MultiPoly":
        if not 0 <= index < n_vars:
            raise IndexError(f"variable index {index} out of range for {n_vars} variables")
        exps = [0] * n_vars
        exps[index] = 1
        return cls(n_vars, {tuple(exps): coeff})

    # -- inspection ---------------------------------------------------
    @property
    def terms(self) -> tuple:
        """``((exponents, coefficient), ...)`` in canonical order."""
        return self._terms

    def as_dict(self) -> dict:
        return dict(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m, _ in self._terms), default=-1)

    def coeff(self, exps: Sequence[int]) -> float:
        return self.as_dict().get(tuple(exps), 0.0)

    def coefficient_vector(self) -> np.ndarray:
        return np.array([c for _, c in self._terms])

    def exponent_matrix(self) -> np.ndarray:
        if not self._terms:
            return np.zeros((0, self.n_vars), dtype=np.int64)
        return np.array([m for m, _ in self._terms], dtype=np.int64)

    # -- arithmetic ---------------------------------------------------
    def _check(self, other: "MultiPoly") -> None:
        if not isinstance(other, MultiPoly):
            raise TypeError(f"expected MultiPoly, got {type(other).__name__}")
        if other.n_vars != self.n_vars:
            raise DimensionError(
                f"variable count mismatch: {self.n_vars} vs {other.n_vars}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = MultiPoly.constant(self.n_vars, other)
        return poly_add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = MultiPoly.constant(self.n_vars, other)
        return poly_add(self, -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        return poly_mul(self, other)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative powers are not polynomials")
        out = MultiPoly.constant(self.n_vars, 1.0)
        for _ in range(k):
            out = poly_mul(out, self)
        return out

    def scale(self, factor: float) -> "MultiPoly":
        return MultiPoly(self.n_vars, [(m, c * factor) for m, c in self._terms])

    def __eq__(self, other):
        if not isinstance(other, MultiPoly):
            return NotImplemented
        return self.n_vars == other.n_vars and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.n_vars, self._terms))
        return self._hash

    def __call__(self, point):
        return poly_eval(self, point)

    def __repr__(self):
        return f"MultiPoly({self.n_vars}, {to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    # -- evaluation on many points -------------------------------------
    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape ``(n, n_vars)``)."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.n_vars:
            raise DimensionError(
                f"points must have shape (n, {self.n_vars}), got {points.shape}")
        if not self._terms:
            return np.zeros(points.shape[0])
        return monomial_matrix(points, [m for m, _ in self._terms]) @ self.coefficient_vector()


def poly_add(p: MultiPoly, q: MultiPoly) -> MultiPoly:
    p._check(q)
    acc = dict(p.terms)
    for m, c in q.terms:
        acc[m] = acc.get(m, 0.0) + c
    return MultiPoly(p.n_vars, acc)


def poly_mul(p: MultiPoly, q: MultiPoly) -> MultiPoly:
    p._check(q)
    acc: dict[tuple, float] = {}
    for m1, c1 in p.terms:
        for m2, c2 in q.terms:
            m = tuple(a + b for a, b in zip(m1, m2))
            acc[m] = acc.get(m, 0.0) + c1 * c2
    return MultiPoly(p.n_vars, acc)


def poly_partial(p: MultiPoly, var: int) -> MultiPoly:
    if not 0 <= var < p.n_vars:
        raise IndexError(f"variable index {var} out of range for {p.n_vars} variables")
    out = []
    for m, c in p.terms:
        e = m[var]
        if e:
            out.append((m[:var] + (e - 1,) + m[var + 1:], c * e))
    return MultiPoly(p.n_vars, out)


def poly_eval(p: MultiPoly, point: Sequence[float]) -> float:
    """Plain sum of terms, accumulated in canonical term order."""
    point = tuple(float(v) for v in point)
    if len(point) != p.n_vars:
        raise DimensionError(f"point has {len(point)} coordinates, expected {p.n_vars}")
    total = 0.0
    for m, c in p.terms:
        t = c
        for v, e in zip(point, m):
            if e:
                t *= v ** e
        total += t
    return total


def monomial_basis(n_vars: int, max_degree: int) -> list[Monomial]:
    """All exponent vectors of total degree <= ``max_degree`` in grlex order."""
    if n_vars < 1:
        raise ValueError("n_vars must be positive")
    if max_degree < 0:
        raise ValueError("max_degree must be non-negative")
    out = []
    for deg in range(max_degree + 1):
        # combinations with replacement of variable indices, mapped to exponents
        level = []
        for combo in itertools.combinations_with_replacement(range(n_vars), deg):
            exps = [0] * n_vars
            for i in combo:
                exps[i] += 1
            level.append(tuple(exps))
        level.sort(key=grlex_key)
        out.extend(level)
    return out


def monomial_matrix(points: np.ndarray, monomials: Sequence[Monomial]) -> np.ndarray:
    """Matrix ``A[i, j] = prod_k points[i, k] ** monomials[j][k]``."""
    points = np.asarray(points, dtype=float)
    exps = np.asarray(monomials, dtype=np.int64).reshape(len(monomials), points.shape[1])
    max_e = int(exps.max(initial=0))
    # power table: powers[e, i, k] = points[i, k] ** e
    powers = np.empty((max_e + 1,) + points.shape)
    powers[0] = 1.0
    for e in range(1, max_e + 1):
        powers[e] = powers[e - 1] * points
    out = np.ones((points.shape[0], len(monomials)))
    for k in range(points.shape[1]):
        out *= powers[exps[:, k], :, k].T
    return out


def from_vector(n_vars: int, monomials: Sequence[Monomial], coeffs: Sequence[float]) -> MultiPoly:
    return MultiPoly(n_vars, zip(monomials, coeffs))


# -- text serialization ------------------------------------------------

def _format_monomial(m: Monomial) -> str:
    return " ".join(f"x{i}^{e}" for i, e in enumerate(m) if e)


def to_text(p: MultiPoly) -> str:
    """``coeff * x0^a x1^b`` terms joined by `` + ``; coefficients at 17 digits."""
    if p.is_zero():
        return "0"
    parts = []
    for m, c in p.terms:
        mono = _format_monomial(m)
        parts.append(f"{c:.17g}" if not mono else f"{c:.17g} * {mono}")
    return " + ".join(parts)


_FACTOR = re.compile(r"^x(\d+)(?:\^(\d+))?$")


def from_text(text: str, n_vars: int) -> MultiPoly:
    text = text.strip()
    if text == "0":
        return MultiPoly.zero(n_vars)
    terms = []
    for chunk in text.split(" + "):
        coeff_s, _, mono_s = chunk.partition(" * ")
        exps = [0] * n_vars
        for factor in mono_s.split():
            match = _FACTOR.match(factor)
            if match is None:
                raise ValueError(f"cannot parse factor {factor!r}")
            idx = int(match.group(1))
            if idx >= n_vars:
                raise DimensionError(f"x{idx} out of range for {n_vars} variables")
            exps[idx] += int(match.group(2) or 1)
        terms.append((tuple(exps), float(coeff_s)))
    return MultiPoly(n_vars, terms)


def basis_size(n_vars: int, max_degree: int) -> int:
    return math.comb(n_vars + max_degree, max_degree)
