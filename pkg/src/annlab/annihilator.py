"""Polynomial differential annihilators of tanh/sigmoid MLPs.

Pipeline for a network ``f``:

1. :func:`hidden_vector_field` -- the stacked hidden activations ``Y(x)``
   obey ``Y' = F(Y)`` with ``F`` polynomial, because ``phi'`` is a polynomial
   in ``phi`` for both activations.
2. :func:`jet_chain` -- ``H_0 = alpha . Y_L + beta`` and
   ``H_{k+1} = grad(H_k) . F`` give ``f^(k)(x) = H_k(Y(x))``.
3. :func:`find_relation` -- a polynomial ``P(T_0..T_order)`` vanishing on the
   sampled jets ``(H_0(Y), .., H_order(Y))`` is read off the numerical
   nullspace of a monomial evaluation matrix.

:func:`constant_solutions` enumerates the equilibria of ``F`` reached by
saturating the first layer, and :func:`saturation_profile` measures the
exponential approach of ``f`` to its limits beyond a training interval.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import poly as P_
from .fd import callable_derivatives, stencil_reach
from .net import Activation, NetworkParams, VariedDepthNet
from .poly import MultiPoly, monomial_basis, monomial_matrix
from .rng import make_rng

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_DEGREE_CAP = 4
DEFAULT_MAX_VARS = 8
SAMPLE_MARGIN = 0.05


class CapacityError(RuntimeError):
    """The requested computation exceeds a configured size limit."""


class UnderdeterminedError(ValueError):
    """Fewer samples than unknown coefficients."""


# -- vector field ----------------------------------------------------------

@dataclass(frozen=True)
class HiddenVectorField:
    """``dY/dx = F(Y)`` for the stacked hidden state.

    ``factors[g]`` keeps the unexpanded form of component ``g``: a pair
    ``(q, combo)`` with ``F_g = q * sum(a * F_j for j, a in combo)``, or
    ``(q, None)`` for first-layer units where ``F_g = q`` already.
    """

    n_vars: int
    components: tuple
    activation: Activation
    layer_slices: tuple
    factors: tuple = ()

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.stack([c.eval_many(y) for c in self.components], axis=1)

    def eval_factored(self, point) -> np.ndarray:
        """F at one point through the factored form; zeros of first-layer
        factors propagate exactly."""
        point = np.asarray(point, dtype=float)
        out = np.empty(self.n_vars)
        for g, (q, combo) in enumerate(self.factors):
            qv = P_.poly_eval(q, point)
            out[g] = qv if combo is None else qv * sum(a * out[j] for j, a in combo)
        return out

    @property
    def last_layer(self) -> slice:
        return self.layer_slices[-1]


def activation_polynomial(activation: Activation, n_vars: int, index: int) -> MultiPoly:
    """phi' as a polynomial in y = phi: 1 - y^2 (tanh) or y - y^2 (sigmoid)."""
    y = MultiPoly.variable(n_vars, index)
    if activation is Activation.TANH:
        return 1.0 - y * y
    return y - y * y


def hidden_vector_field(net: NetworkParams, max_vars: int = DEFAULT_MAX_VARS) -> HiddenVectorField:
    M = net.total_width
    if M > max_vars:
        raise CapacityError(
            f"network has M={M} hidden units, above the cap of {max_vars}; "
            "use a smaller probe network or raise max_vars")
    comps: list[MultiPoly] = []
    factors = []
    slices = []
    offset = 0
    prev: list[MultiPoly] = []
    for layer, w in enumerate(net.weights):
        current = []
        start_prev = offset - len(prev)
        for k in range(w.shape[0]):
            g = offset + k
            act = activation_polynomial(net.activation, M, g)
            if layer == 0:
                current.append(act.scale(w[k, 0]))
                factors.append((current[-1], None))
            else:
                lin = MultiPoly.zero(M)
                combo = []
                for j, a in enumerate(w[k]):
                    if a != 0.0:
                        lin = lin + prev[j].scale(a)
                        combo.append((start_prev + j, float(a)))
                current.append(act * lin)
                factors.append((act, tuple(combo)))
        slices.append(slice(offset, offset + w.shape[0]))
        offset += w.shape[0]
        comps.extend(current)
        prev = current
    return HiddenVectorField(M, tuple(comps), net.activation, tuple(slices), tuple(factors))


def readout_polynomial(field_: HiddenVectorField, alpha, beta) -> MultiPoly:
    alpha = np.asarray(alpha, dtype=float).ravel()
    sl = field_.last_layer
    if alpha.size != sl.stop - sl.start:
        raise ValueError(f"readout has {alpha.size} weights for {sl.stop - sl.start} units")
    G = MultiPoly.constant(field_.n_vars, float(beta))
    for i, a in enumerate(alpha):
        G = G + MultiPoly.variable(field_.n_vars, sl.start + i, a)
    return G


def hidden_trajectory(net: NetworkParams, x) -> np.ndarray:
    """Stacked hidden states ``Y(x)``, shape ``(len(x), M)``."""
    hidden, _ = net._layers(np.asarray(x, dtype=float).ravel())
    return np.concatenate(hidden, axis=1)


# -- jets --------------------------------------------------------------------

@dataclass(frozen=True)
class JetChain:
    H: tuple
    activation: Activation

    @property
    def n_vars(self) -> int:
        return self.H[0].n_vars

    def evaluate(self, Y, order: int | None = None) -> np.ndarray:
        """Columns ``H_0(Y) .. H_order(Y)``."""
        order = len(self.H) - 1 if order is None else order
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return np.stack([h.eval_many(Y) for h in self.H[:order + 1]], axis=1)


def lie_derivative(h: MultiPoly, field_: HiddenVectorField) -> MultiPoly:
    out = MultiPoly.zero(h.n_vars)
    for i, Fi in enumerate(field_.components):
        d = P_.poly_partial(h, i)
        if not d.is_zero():
            out = out + d * Fi
    return out


def jet_chain(field_: HiddenVectorField, alpha, beta, k_max: int,
              max_terms: int = 200_000) -> JetChain:
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    H = [readout_polynomial(field_, alpha, beta)]
    for k in range(k_max):
        nxt = lie_derivative(H[-1], field_)
        if len(nxt) > max_terms:
            raise CapacityError(f"H_{k + 1} has {len(nxt)} terms, above the budget of {max_terms}")
        H.append(nxt)
    return JetChain(tuple(H), field_.activation)


def network_jets(net: NetworkParams, k_max: int | None = None,
                 max_vars: int = DEFAULT_MAX_VARS) -> JetChain:
    field_ = hidden_vector_field(net, max_vars)
    return jet_chain(field_, net.alpha, net.beta, field_.n_vars if k_max is None else k_max)


# -- relation fitting --------------------------------------------------------

@dataclass
class NullspaceFit:
    """SVD of a monomial evaluation matrix built on standardized jets.

    Jet columns are shifted and scaled to zero mean and unit spread before
    monomials are formed (``T = center + scale * U``); polynomials are mapped
    back to the raw variables by substitution.
    """

    monomials: list
    singular_values: np.ndarray
    right_vectors: np.ndarray
    column_norms: np.ndarray
    center: np.ndarray
    scale: np.ndarray

    @property
    def ratio(self) -> float:
        s = self.singular_values
        return float(s[-1] / s[0]) if s[0] > 0 else 0.0

    def nullity(self, tol: float) -> int:
        s = self.singular_values
        if s[0] == 0:
            return len(s)
        return int(np.sum(s < tol * s[0]))

    def to_polynomial(self, v: np.ndarray) -> MultiPoly:
        """Unit-norm polynomial in the raw jet variables for nullspace direction ``v``."""
        n_vars = len(self.monomials[0])
        std = P_.from_vector(n_vars, self.monomials, v / self.column_norms)
        subs = [(MultiPoly.variable(n_vars, i) - self.center[i]).scale(1.0 / self.scale[i])
                for i in range(n_vars)]
        raw = substitute(std, subs)
        c = raw.coefficient_vector()
        c = c / np.linalg.norm(c)
        # sign convention: last significant coefficient (grlex order) positive
        significant = np.flatnonzero(np.abs(c) > 1e-9 * np.max(np.abs(c)))
        if c[significant[-1]] < 0:
            c = -c
        return MultiPoly(n_vars, zip([m for m, _ in raw.terms], c))


def substitute(p: MultiPoly, subs: list) -> MultiPoly:
    """``p(subs[0], .., subs[n-1])`` with cached powers of each substitute."""
    cache: dict[tuple, MultiPoly] = {}

    def power(i, e):
        key = (i, e)
        if key not in cache:
            cache[key] = MultiPoly.constant(subs[i].n_vars, 1.0) if e == 0 else power(i, e - 1) * subs[i]
        return cache[key]

    acc: dict[tuple, float] = {}
    for m, c in p.terms:
        term = MultiPoly.constant(subs[0].n_vars, c)
        for i, e in enumerate(m):
            if e:
                term = term * power(i, e)
        for mm, cc in term.terms:
            acc[mm] = acc.get(mm, 0.0) + cc
    return MultiPoly(subs[0].n_vars, acc)


def fit_nullspace(jets: np.ndarray, degree: int) -> NullspaceFit:
    """SVD of the column-normalized monomial evaluation matrix of ``jets``."""
    jets = np.asarray(jets, dtype=float)
    monos = monomial_basis(jets.shape[1], degree)
    if jets.shape[0] < len(monos):
        raise UnderdeterminedError(
            f"{jets.shape[0]} samples for {len(monos)} unknown coefficients")
    center = jets.mean(axis=0)
    scale = jets.std(axis=0)
    # columns constant up to round-off are pinned to exactly zero after centering
    flat = scale <= 1e-9 * max(1.0, float(np.max(np.abs(jets))))
    scale[flat] = 1.0
    U = (jets - center) / scale
    U[:, flat] = 0.0
    A = monomial_matrix(U, monos)
    norms = np.linalg.norm(A, axis=0)
    norms[norms == 0.0] = 1.0
    _, s, vt = np.linalg.svd(A / norms, full_matrices=False)
    return NullspaceFit(monos, s, vt, norms, center, scale)


def relation_from_fit(fit: NullspaceFit, tol: float, prefer_top: bool = False) -> MultiPoly | None:
    """Polynomial from the nullspace, or ``None`` if there is none at ``tol``.

    By default the last right-singular vector is used.  ``prefer_top`` picks,
    inside a multi-dimensional nullspace, the direction with the largest
    weight on monomials containing the highest-order variable, so a genuine
    order-k relation is preferred over lower-order ones that happen to embed.
    """
    k = fit.nullity(tol)
    if k == 0:
        return None
    basis = fit.right_vectors[-k:]
    if k == 1 or not prefer_top:
        v = basis[-1]
    else:
        top = np.array([m[-1] > 0 for m in fit.monomials])
        # maximize |Pv| over unit v in the nullspace, P = projection onto top monomials
        _, _, wt = np.linalg.svd(basis[:, top].T, full_matrices=False)
        v = wt[0] @ basis
    return fit.to_polynomial(v)


def relation_residual(rel: MultiPoly, jets: np.ndarray) -> np.ndarray:
    return np.abs(rel.eval_many(np.asarray(jets, dtype=float)))


def sample_box(activation: Activation, n: int, dim: int, rng, margin: float = SAMPLE_MARGIN) -> np.ndarray:
    lo, hi = activation.saturation_values
    return rng.uniform(lo + margin, hi - margin, size=(n, dim))


@dataclass
class RelationFit:
    poly: MultiPoly | None
    order: int
    degree: int
    ratio: float
    singular_values: np.ndarray
    residual_max: float
    n_samples: int


def fit_relation(chain: JetChain, order: int, degree: int, samples: int | None = None,
                 tol: float = DEFAULT_TOL, seed=0) -> RelationFit:
    if tol <= 0:
        raise ValueError("tol must be positive")
    if order < 0 or order > len(chain.H) - 1:
        raise ValueError(f"order {order} outside the computed chain (length {len(chain.H)})")
    n_basis = P_.basis_size(order + 1, degree)
    samples = 5 * n_basis if samples is None else int(samples)
    if samples < n_basis:
        raise UnderdeterminedError(f"{samples} samples for a basis of {n_basis} monomials")
    rng = make_rng(seed, "relation", order, degree)
    Y = sample_box(chain.activation, samples, chain.n_vars, rng)
    fit = fit_nullspace(chain.evaluate(Y, order), degree)
    rel = relation_from_fit(fit, tol)
    residual = math.nan
    if rel is not None:
        Yv = sample_box(chain.activation, samples, chain.n_vars, make_rng(seed, "verify", order, degree))
        residual = float(relation_residual(rel, chain.evaluate(Yv, order)).max())
        if residual >= 10 * tol:
            log.warning("relation at order %d degree %d failed verification (residual %.3g)",
                        order, degree, residual)
            rel = None
    return RelationFit(rel, order, degree, fit.ratio, fit.singular_values, residual, samples)


def find_relation(chain: JetChain, order: int, degree: int, samples: int | None = None,
                  tol: float = DEFAULT_TOL, seed=0) -> MultiPoly | None:
    """Unit-norm ``P(T_0..T_order)`` of total degree <= ``degree`` vanishing on the jets.

    Sampling uses the open activation range shrunk by 0.05 per side.  The
    relation is accepted when the smallest singular value of the
    column-normalized evaluation matrix is below ``tol`` times the largest and
    the relation also vanishes (below ``10 * tol``) on a fresh sample.
    """
    return fit_relation(chain, order, degree, samples, tol, seed).poly


# -- constants and reports -----------------------------------------------------

def constant_solutions(net: NetworkParams, max_first_width: int = 16) -> list[float]:
    """Readout values at the equilibria reached from saturated first layers."""
    m1 = net.widths[0]
    if m1 > max_first_width:
        raise CapacityError(f"first layer has {m1} units; enumeration of 2^{m1} states is capped at "
                            f"{max_first_width} units")
    values = []
    for s in itertools.product(net.activation.saturation_values, repeat=m1):
        state = np.array(s)
        for w, b in zip(net.weights[1:], net.biases[1:]):
            state = net.activation(w @ state + b)
        values.append(float(net.alpha @ state + net.beta))
    values.sort()
    merged: list[float] = []
    for v in values:
        if not merged or abs(v - merged[-1]) > 1e-12:
            merged.append(v)
    return merged


def equilibrium_states(net: NetworkParams) -> list[np.ndarray]:
    """Stacked saturation vectors ``(s^(1), .., s^(L))`` for every first-layer corner."""
    out = []
    for s in itertools.product(net.activation.saturation_values, repeat=net.widths[0]):
        state = np.array(s)
        parts = [state]
        for w, b in zip(net.weights[1:], net.biases[1:]):
            state = net.activation(w @ state + b)
            parts.append(state)
        out.append(np.concatenate(parts))
    return out


@dataclass
class SaturationProfile:
    f_inf_minus: float
    f_inf_plus: float
    kappa_minus: float
    kappa_plus: float
    C_minus: float
    C_plus: float
    r2_minus: float
    r2_plus: float
    constant_minus: bool = False
    constant_plus: bool = False

    @property
    def fit_r2(self) -> float:
        return min(self.r2_minus, self.r2_plus)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit_r2"] = self.fit_r2
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                if k not in ("kappa_minus", "kappa_plus") else
                ("inf" if v == math.inf else v) for k, v in d.items()}


def _predictor(model):
    if hasattr(model, "predict"):
        return model.predict
    if callable(model):
        return lambda x: np.asarray(model(x), dtype=float)
    raise TypeError(f"cannot evaluate {type(model).__name__}")


def _tail_fit(dist, f):
    f_inf = float(f[-1])
    dev = np.abs(f - f_inf)
    keep = dev > 1e-12
    if keep.sum() < 3:
        return f_inf, math.inf, 0.0, 1.0, True
    res = stats.linregress(dist[keep], np.log(dev[keep]))
    return f_inf, float(-res.slope), float(math.exp(res.intercept)), float(res.rvalue ** 2), False


def saturation_profile(model, train_domain=(-1.0, 1.0), probe_multiplier: float = 10.0,
                       grid: int = 400) -> SaturationProfile:
    """Exponential tail fits of ``|f(x) - f_inf|`` beyond both ends of the domain.

    On the right, ``f`` is evaluated on ``[b, b + probe_multiplier * (b - a)]``,
    ``f_inf`` is the value at the far end and ``log|f - f_inf|`` is regressed
    on ``x - b`` over the points deviating by more than 1e-12.  A side with
    fewer than three such points is reported as constant with
    ``kappa = inf``.
    """
    a, b = (float(v) for v in train_domain)
    if not b > a:
        raise ValueError("train_domain must satisfy b > a")
    if probe_multiplier <= 1:
        raise ValueError("probe_multiplier must exceed 1")
    if grid < 3:
        raise ValueError("grid must have at least 3 points")
    f = _predictor(model)
    span = probe_multiplier * (b - a)
    dist = np.linspace(0.0, span, grid)
    right = _tail_fit(dist, np.asarray(f(b + dist), dtype=float))
    left = _tail_fit(dist, np.asarray(f(a - dist), dtype=float))
    return SaturationProfile(left[0], right[0], left[1], right[1], left[2], right[2],
                             left[3], right[3], left[4], right[4])


@dataclass
class VerificationReport:
    max_residual: float
    mean_residual: float
    n_points: int
    n_trimmed: int


def verify_annihilator(P: MultiPoly, model, x_grid, fd_step: float = 1e-3,
                       domain=None) -> VerificationReport:
    """Residual ``|P(f, f', .., f^(k))|`` with finite-difference derivatives.

    Derivatives come from :func:`annlab.fd.callable_derivatives` (second-order
    central stencils plus one Richardson step), independently of the jet
    chain.  With ``domain`` given, grid points whose stencil would leave it
    are dropped with a warning.
    """
    order = P.n_vars - 1
    x = np.asarray(x_grid, dtype=float).ravel()
    n_trimmed = 0
    if domain is not None:
        lo, hi = domain
        reach = stencil_reach(order, fd_step)
        keep = (x - reach >= lo) & (x + reach <= hi)
        n_trimmed = int((~keep).sum())
        if n_trimmed:
            warnings.warn(f"{n_trimmed} grid points too close to the domain ends were trimmed")
        x = x[keep]
    if x.size == 0:
        raise ValueError("no grid points left for verification")
    jets = callable_derivatives(_predictor(model), x, order, fd_step)
    r = relation_residual(P, jets)
    return VerificationReport(float(r.max()), float(r.mean()), int(x.size), n_trimmed)


@dataclass
class AnnihilatorReport:
    found: bool
    order: int | None
    degree: int | None
    P: MultiPoly | None
    residual_max: float
    singular_values: list
    constants: list = field(default_factory=list)
    saturation: SaturationProfile | None = None
    M: int = 0
    tried: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "found": self.found,
            "M": self.M,
            "order": self.order,
            "degree": self.degree,
            "P": None if self.P is None else {
                "n_vars": self.P.n_vars,
                "text": P_.to_text(self.P),
                "terms": [{"exponents": list(m), "coeff": c} for m, c in self.P.terms],
            },
            "residual_max": None if not math.isfinite(self.residual_max) else self.residual_max,
            "singular_values": self.singular_values,
            "constants": self.constants,
            "saturation": None if self.saturation is None else self.saturation.to_dict(),
            "tried": self.tried,
        }


def constant_residuals(P: MultiPoly, constants) -> list[dict]:
    out = []
    for c in constants:
        point = [c] + [0.0] * (P.n_vars - 1)
        out.append({"c": c, "residual": abs(P_.poly_eval(P, point))})
    return out


def minimal_annihilator(net: NetworkParams, degree_cap: int = DEFAULT_DEGREE_CAP,
                        tol: float = DEFAULT_TOL, samples: int | None = None, seed=0,
                        order_max: int | None = None, max_vars: int = DEFAULT_MAX_VARS,
                        max_terms: int = 200_000) -> AnnihilatorReport:
    """First ``(order, degree)`` in the sweep order = 0..M, degree = 1..cap with a relation."""
    field_ = hidden_vector_field(net, max_vars)
    M = field_.n_vars
    order_max = M if order_max is None else min(order_max, M)
    chain = jet_chain(field_, net.alpha, net.beta, order_max, max_terms)
    tried = []
    last = None
    for order in range(order_max + 1):
        for degree in range(1, degree_cap + 1):
            fit = fit_relation(chain, order, degree, samples, tol, seed)
            tried.append({"order": order, "degree": degree, "ratio": fit.ratio})
            last = fit
            if fit.poly is not None:
                consts = constant_solutions(net) if net.widths[0] <= 16 else []
                return AnnihilatorReport(True, order, degree, fit.poly, fit.residual_max,
                                         fit.singular_values[-5:].tolist(),
                                         constant_residuals(fit.poly, consts),
                                         saturation_profile(net), M=M, tried=tried)
    return AnnihilatorReport(False, None, None, None, math.nan,
                             [] if last is None else last.singular_values[-5:].tolist(),
                             saturation=saturation_profile(net), M=M, tried=tried)


def subnet_views(model) -> list[NetworkParams]:
    """Networks whose annihilators are computed: the net itself, or each
    combination-weighted subnet of a varied-depth net."""
    if isinstance(model, VariedDepthNet):
        return [s.with_readout(c * s.alpha, c * s.beta)
                for s, c in zip(model.subnets, model.combination)]
    return [model]
