import itertools
import math

import numpy as np
import pytest

from annlab.annihilator import (
    CapacityError, UnderdeterminedError, constant_solutions, find_relation, fit_relation,
    hidden_trajectory, hidden_vector_field, jet_chain, minimal_annihilator, network_jets,
    saturation_profile, subnet_views, verify_annihilator,
)
from annlab.fd import callable_derivatives
from annlab.net import NetworkParams, build_varied_depth, init_network
from annlab.poly import MultiPoly, poly_eval

TOL = 1e-8


def neuron(w=1.0, b=0.0, alpha=1.0, beta=0.0, act="tanh"):
    return NetworkParams([[[w]]], [[b]], [alpha], beta, act)


def small_net(rng, widths, act=None):
    act = act or ("tanh", "sigmoid")[int(rng.integers(2))]
    net = init_network(widths, act, int(rng.integers(1 << 30)))
    vec = net.to_vector()
    vec = vec + 0.5 * rng.standard_normal(vec.size)
    return net.with_vector(vec)


def compositions(max_m=4, max_depth=3):
    out = []
    for m in range(1, max_m + 1):
        for depth in range(1, max_depth + 1):
            for widths in itertools.product(range(1, m + 1), repeat=depth):
                if sum(widths) == m:
                    out.append(list(widths))
    return out


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# -- vector field --------------------------------------------------------------------

def test_field_single_tanh_neuron():
    F = hidden_vector_field(neuron(w=2.0))
    assert F.components[0] == MultiPoly(1, {(0,): 2.0, (2,): -2.0})


def test_field_single_sigmoid_neuron():
    F = hidden_vector_field(neuron(act="sigmoid"))
    assert F.components[0] == MultiPoly(1, {(1,): 1.0, (2,): -1.0})


def test_field_two_layer_chain():
    net = NetworkParams([[[1.0]], [[1.0]]], [[0.0], [0.0]], [1.0], 0.0, "tanh")
    F = hidden_vector_field(net)
    y1, y2 = MultiPoly.variable(2, 0), MultiPoly.variable(2, 1)
    assert F.components[0] == 1.0 - y1 * y1
    assert F.components[1] == (1.0 - y2 * y2) * (1.0 - y1 * y1)
    x = np.linspace(-2, 2, 81)
    h = 1e-4
    dY = (hidden_trajectory(net, x + h) - hidden_trajectory(net, x - h)) / (2 * h)
    assert np.max(np.abs(dY - F(hidden_trajectory(net, x)))) < 1e-6


def test_field_capacity_error():
    with pytest.raises(CapacityError, match="M=9"):
        hidden_vector_field(init_network([9], "tanh", 0))


def test_equilibria_are_zeros_of_field():
    rng = np.random.default_rng(2)
    for widths in ([2], [1, 2], [2, 1, 1], [3]):
        net = small_net(rng, widths)
        F = hidden_vector_field(net)
        lo, hi = net.activation.saturation_values
        for corner in itertools.product([lo, hi], repeat=widths[0]):
            s = [np.array(corner)]
            for w, b in zip(net.weights[1:], net.biases[1:]):
                s.append(net.activation(w @ s[-1] + b))
            point = np.concatenate(s)
            assert np.all(F.eval_factored(point) == 0.0)
            assert all(poly_eval(c, point) == 0.0 for c in F.components[:widths[0]])
            # expanded deeper components cancel only up to round-off
            assert np.max(np.abs(F(point))) < 1e-14


# -- jets ----------------------------------------------------------------------------

def test_jet_chain_single_neuron():
    H = network_jets(neuron(), 2).H
    y = MultiPoly.variable(1, 0)
    assert H[0] == y
    assert H[1] == 1.0 - y * y
    assert H[2] == (y * (1.0 - y * y)).scale(-2.0)


def test_jets_at_saturation():
    rng = np.random.default_rng(4)
    net = small_net(rng, [2, 1])
    chain = network_jets(net, 2)
    for sign in (-1, 1):
        s = np.concatenate(net.saturation_state(sign))
        assert poly_eval(chain.H[0], s) == pytest.approx(net.saturation_limit(sign), abs=1e-15)
        # H_1 = alpha . F on the last layer, vanishing exactly in factored form
        F = hidden_vector_field(net)
        assert net.alpha @ F.eval_factored(s)[F.last_layer] == 0.0
        assert abs(poly_eval(chain.H[1], s)) < 1e-15


def test_jet_degree_growth():
    rng = np.random.default_rng(6)
    for _ in range(10):
        widths = compositions(3)[int(rng.integers(len(compositions(3))))]
        net = small_net(rng, widths)
        F = hidden_vector_field(net)
        chain = jet_chain(F, net.alpha, net.beta, F.n_vars)
        dF = max(c.degree for c in F.components)
        for a, b in zip(chain.H, chain.H[1:]):
            assert b.degree <= a.degree + dF - 1


def test_jet_consistency_against_finite_differences():
    rng = np.random.default_rng(8)
    shapes = compositions(4)
    x = np.linspace(-1.5, 1.5, 13)
    for i in range(30):
        net = small_net(rng, shapes[i % len(shapes)])
        k_max = min(3, net.total_width)
        chain = network_jets(net, k_max)
        jets = chain.evaluate(hidden_trajectory(net, x))
        fd = callable_derivatives(net.predict, x, k_max, 1e-3)
        assert np.max(np.abs(jets - fd)) < 1e-4


def test_jet_chain_budget():
    F = hidden_vector_field(neuron())
    with pytest.raises(ValueError):
        jet_chain(F, [1.0], 0.0, -1)
    rng = np.random.default_rng(0)
    net = small_net(rng, [2, 2])
    with pytest.raises(CapacityError, match="H_"):
        jet_chain(hidden_vector_field(net), net.alpha, net.beta, 4, max_terms=20)


# -- relation discovery ----------------------------------------------------------------

@pytest.mark.parametrize("w", [1.0, 2.0, 0.5])
def test_find_relation_single_tanh_neuron(w):
    chain = network_jets(neuron(w=w), 1)
    P = find_relation(chain, 1, 2)
    # f' = w (1 - f^2): basis order 1, T0, T1, T0^2, T0 T1, T1^2
    expected = {(0, 0): -w, (0, 1): 1.0, (2, 0): w}
    mono = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    got = unit([P.coeff(m) for m in mono])
    want = unit([expected.get(m, 0.0) for m in mono])
    assert abs(got @ want) > 1 - 1e-8
    assert np.linalg.norm(P.coefficient_vector()) == pytest.approx(1.0, abs=1e-12)


def test_order_zero_has_no_relation_for_nonconstant_net():
    assert find_relation(network_jets(neuron(w=1.3, b=0.2), 1), 0, 1) is None


def test_two_tanh_sum_first_relation_at_order_two_degree_six():
    # generic weights; the jet map (T0, T1, T2) has an image surface of degree 1*2*3 = 6
    net = NetworkParams([[[1.0], [2.3]]], [[0.1, -0.4]], [0.8, -0.5], 0.0, "tanh")
    chain = network_jets(net, 2)
    for degree in range(1, 5):
        assert find_relation(chain, 1, degree) is None
    first = next(d for d in range(1, 9) if find_relation(chain, 2, d) is not None)
    assert first == 6


def test_find_relation_errors():
    chain = network_jets(neuron(), 1)
    with pytest.raises(UnderdeterminedError):
        find_relation(chain, 1, 2, samples=3)
    with pytest.raises(ValueError):
        find_relation(chain, 1, 2, tol=0.0)


def test_relation_contract_residual():
    fit = fit_relation(network_jets(neuron(w=1.7, b=0.3, alpha=0.6, beta=0.2), 1), 1, 2)
    assert fit.poly is not None
    assert fit.residual_max < 10 * TOL


def test_scale_invariance_of_discovery():
    rng = np.random.default_rng(12)
    for widths in ([1], [1, 1]):
        net = small_net(rng, widths, "tanh")
        # generic two-unit nets first relate at degree 6, hence the raised cap
        a = minimal_annihilator(net, degree_cap=6)
        b = minimal_annihilator(net.with_readout(3 * net.alpha, 3 * net.beta), degree_cap=6)
        assert a.found and b.found
        assert (a.order, a.degree) == (b.order, b.degree)


def test_absence_is_reproducible_across_seeds():
    chain = network_jets(NetworkParams([[[1.0], [2.3]]], [[0.1, -0.4]], [0.8, -0.5], 0.0, "tanh"), 2)
    hits = [find_relation(chain, 2, 4, seed=s) is None for s in range(10)]
    assert sum(hits) >= 9


def test_returned_relations_are_sound():
    rng = np.random.default_rng(21)
    for widths in ([1], [1, 1], [1], [1, 1]):
        net = small_net(rng, widths)
        rep = minimal_annihilator(net, degree_cap=6)
        assert rep.found
        assert np.linalg.norm(rep.P.coefficient_vector()) == pytest.approx(1.0, abs=1e-12)
        assert rep.residual_max < 10 * TOL


# -- constants, saturation, verification ----------------------------------------------

def test_constant_solutions_examples():
    assert constant_solutions(neuron()) == [-1.0, 1.0]
    assert constant_solutions(neuron(alpha=2.0, beta=1.0, act="sigmoid")) == [1.0, 3.0]


def test_constants_annihilated():
    rng = np.random.default_rng(3)
    for widths in ([1], [1, 1]):
        net = small_net(rng, widths)
        rep = minimal_annihilator(net, degree_cap=6)
        assert rep.found
        assert len(rep.constants) == 2 ** widths[0]
        assert all(c["residual"] < 10 * TOL for c in rep.constants)


def test_constant_solutions_first_layer_cap():
    with pytest.raises(CapacityError):
        constant_solutions(init_network([17], "tanh", 0))


def test_saturation_profile_tanh():
    prof = saturation_profile(lambda x: np.tanh(2 * x), (-1.0, 1.0))
    assert 3.6 <= prof.kappa_plus <= 4.4
    assert 3.6 <= prof.kappa_minus <= 4.4
    assert prof.fit_r2 > 0.99
    assert prof.f_inf_plus == pytest.approx(1.0)


def test_saturation_profile_constant_sentinel():
    prof = saturation_profile(lambda x: np.full_like(x, 0.25), (-1.0, 1.0))
    assert prof.constant_plus and prof.constant_minus
    assert math.isinf(prof.kappa_plus)
    assert prof.to_dict()["kappa_plus"] == "inf"


def test_saturation_profile_rejects_bad_domain():
    with pytest.raises(ValueError):
        saturation_profile(np.tanh, (1.0, -1.0))
    with pytest.raises(ValueError):
        saturation_profile(np.tanh, (-1.0, 1.0), probe_multiplier=1.0)


def test_verify_exact_and_perturbed_relation():
    P = MultiPoly(2, {(0, 1): 1.0, (0, 0): -1.0, (2, 0): 1.0})
    x = np.linspace(-2, 2, 41)
    assert verify_annihilator(P, np.tanh, x, 1e-3).max_residual < 1e-6
    bad = MultiPoly(2, {(0, 1): 1.0, (0, 0): -1.0, (2, 0): 1.1})
    assert verify_annihilator(bad, np.tanh, x, 1e-3).max_residual > 1e-2


def test_verify_trims_near_domain_ends():
    P = MultiPoly(2, {(0, 1): 1.0, (0, 0): -1.0, (2, 0): 1.0})
    with pytest.warns(UserWarning, match="trimmed"):
        rep = verify_annihilator(P, np.tanh, np.linspace(-1, 1, 21), 1e-3, domain=(-1, 1))
    assert rep.n_trimmed == 2


def test_minimal_annihilator_single_neuron_report():
    rep = minimal_annihilator(neuron(w=1.5, b=-0.2, alpha=0.7, beta=0.1))
    assert (rep.found, rep.order, rep.degree, rep.M) == (True, 1, 2, 1)
    d = rep.to_dict()
    assert set(d) >= {"order", "degree", "P", "residual_max", "singular_values", "constants",
                      "saturation"}
    assert d["saturation"]["kappa_plus"] > 0


def test_subnet_views_weight_by_combination():
    net = build_varied_depth([1, 2], 2, "sigmoid", 0)
    net.combination[:] = [0.5, 2.0]
    views = subnet_views(net)
    x = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(sum(v.predict(x) for v in views), net.predict(x), rtol=1e-14)
