import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orthofield import exactsys as ex
from orthofield import fieldmodels as fm
from orthofield import lattice as lt
from orthofield.exactsys import SigmaSpec
from orthofield.lattice import Box

RAD = fm.InnovationSpec("rademacher")


def cyclic(n, step=1):
    return (np.arange(n) + step) % n


def random_centered(sys, rng):
    f = rng.normal(size=sys.size)
    return f - sys.mean(f)


def half_plane(site):
    return site[0] + site[1] <= 0


# -- construction -----------------------------------------------------------

def test_build_cyclic_shift():
    sys = ex.build_system(np.full(4, 0.25), [cyclic(4)], np.arange(4))
    assert sys.d == 1 and sys.size == 4


def test_build_product():
    sys = ex.product_rotation_system((4, 4))
    assert sys.size == 16 and sys.d == 2


def test_build_errors():
    w = np.full(3, 1 / 3)
    with pytest.raises(ex.NonCommuting):
        ex.build_system(w, [[1, 0, 2], [0, 2, 1]], [0, 1, 2])
    with pytest.raises(ex.NotMeasurePreserving):
        ex.build_system([0.5, 0.25, 0.25], [[1, 2, 0]], [0, 1, 2])
    with pytest.raises(ex.FiltrationNotIncreasing):
        ex.build_system(np.full(4, 0.25), [cyclic(4)], [0, 0, 1, 1])
    with pytest.raises(ex.ExactSysError):
        ex.build_system([0.5, 0.6], [[1, 0]], [0, 1])


def test_load_system_json_one_based():
    doc = {"d": 1, "weights": [0.25] * 4, "perms": [[2, 3, 4, 1]], "partition": [0, 1, 2, 3]}
    sys = ex.load_system(json.dumps(doc))
    assert sys.perms[0].tolist() == [1, 2, 3, 0]
    again = ex.load_system(sys.to_json())
    assert np.array_equal(again.perms[0], sys.perms[0])
    with pytest.raises(KeyError):
        ex.load_system({"d": 1})


# -- conditional expectations ----------------------------------------------

def test_cond_exp_trivial_and_atomic(rng):
    sys = ex.build_system([0.1, 0.2, 0.3, 0.4], [[0, 1, 2, 3]], [0, 0, 0, 0])
    f = rng.normal(size=4)
    assert np.allclose(sys.cond_exp(SigmaSpec.finite((0,)), f), sys.mean(f))
    atomic = ex.build_system([0.1, 0.2, 0.3, 0.4], [[0, 1, 2, 3]], [0, 1, 2, 3])
    assert np.allclose(atomic.cond_exp(SigmaSpec.finite((0,)), f), f)


def test_cond_exp_nested_oracle(rng):
    w = rng.dirichlet(np.ones(8))
    fine = np.array([0, 0, 1, 1, 2, 2, 3, 3])
    coarse = fine // 2
    f = rng.normal(size=8)
    sf = ex.build_system(w, [np.arange(8)], fine)
    sc = ex.build_system(w, [np.arange(8)], coarse)
    s0 = SigmaSpec.finite((0,))
    direct = np.array([np.dot(w[coarse == coarse[a]], f[coarse == coarse[a]]) / w[coarse == coarse[a]].sum() for a in range(8)])
    assert np.allclose(sc.cond_exp(s0, f), direct, atol=1e-14)
    assert np.allclose(sc.cond_exp(s0, sf.cond_exp(s0, f)), direct, atol=1e-14)


def test_cond_exp_projection_properties(rng):
    sys = ex.random_system(rng, 2)
    s = SigmaSpec.finite((0, 0))
    f, g = rng.normal(size=sys.size), rng.normal(size=sys.size)
    Ef = sys.cond_exp(s, f)
    assert np.allclose(sys.cond_exp(s, Ef), Ef, atol=1e-14)
    assert sys.inner(Ef, g) == pytest.approx(sys.inner(f, sys.cond_exp(s, g)), abs=1e-12)
    assert sys.norm(Ef) <= sys.norm(f) + 1e-12


def test_limit_sigma_on_embedding():
    sys = ex.EmbeddedSystem(Box((-1, -1), (1, 1)))
    J = lt.dirset(0)
    assert set(sys.sites_of(SigmaSpec.limit(J, 2))) == {s for s in Box((-1, -1), (1, 1)) if s[1] <= 0}
    assert set(sys.sites_of(SigmaSpec.finite((0, 0)))) == {s for s in Box((-1, -1), (1, 1)) if s[0] <= 0 and s[1] <= 0}


# -- complete commutativity ---------------------------------------------------

def test_completely_commuting_product():
    assert ex.check_completely_commuting(ex.product_rotation_system((2, 3))).passed
    assert ex.check_completely_commuting(ex.EmbeddedSystem(Box((-1, -1), (1, 1))), radius=1).passed


def test_completely_commuting_one_dim(rng):
    for _ in range(3):
        assert ex.check_completely_commuting(ex.random_system(rng, 1)).passed


def test_entangled_filtration_reported():
    sys = ex.EmbeddedSystem(Box((-1, -1), (1, 1)), past=half_plane)
    rep = ex.check_completely_commuting(sys, radius=1)
    assert not rep.passed
    assert ((1, 0), (0, 1)) in [(k, l) for k, l, _ in rep.violations]


# -- P_E operators ------------------------------------------------------------

def test_PE_one_dim_examples(rng):
    sys = ex.EmbeddedSystem(Box((-2,), (2,)))
    f = sys.omega((0,)) + 0.5 * sys.omega((1,)) * sys.omega((-1,)) + 0.3 * sys.omega((-2,))
    E0 = sys.cond_exp(SigmaSpec.finite((0,)), f)
    assert np.allclose(ex.apply_PE(sys, frozenset(), (0,), f), E0)
    assert np.allclose(ex.apply_PE(sys, lt.full(1), (0,), f), f - E0)


def test_PE_sum_identity(rng):
    for d in (1, 2, 3):
        sys = ex.random_system(rng, d)
        f = random_centered(sys, rng)
        total = sum(ex.apply_PE(sys, E, lt.zeros(d), f) for E in lt.subsets(d))
        assert np.max(np.abs(total - f)) <= 1e-12


def test_PE_sum_identity_embedded(rng):
    sys = ex.EmbeddedSystem(Box((-1, -1), (1, 1)))
    f = random_centered(sys, rng)
    total = sum(ex.apply_PE(sys, E, (0, 0), f) for E in lt.subsets(2))
    assert np.max(np.abs(total - f)) <= 1e-12


def test_PE_rejects_negative_index(rng):
    sys = ex.random_system(rng, 1)
    with pytest.raises(ValueError):
        ex.apply_PE(sys, frozenset(), (-1,), np.zeros(sys.size))


def test_semigroup_on_embedding(rng):
    sys = ex.EmbeddedSystem(Box((-3, -3), (0, 0)))
    g = rng.normal(size=4)
    w = sys.omega
    # a function of innovations at sites near (-1,-1)
    h = g[0] * w((-1, -1)) + g[1] * w((-1, -2)) * w((-2, -1)) + g[2] * w((-2, -2)) + g[3] * w((-1, -1)) * w((-2, -2))
    for E in lt.subsets(2):
        f = ex.projector_HE(sys, E, h)
        assert ex.member_HE(sys, E, f)
        for j in lt.iterate_box(Box((0, 0), (1, 1))):
            for k in lt.iterate_box(Box((0, 0), (1, 1))):
                try:
                    lhs = ex.apply_PE(sys, E, j, ex.apply_PE(sys, E, k, f))
                    rhs = ex.apply_PE(sys, E, lt.add(j, k), f)
                except ex.WrapAround:
                    continue
                assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_wraparound_guard():
    sys = ex.EmbeddedSystem(Box((-1,), (1,)))
    with pytest.raises(ex.WrapAround):
        sys.shift(sys.omega((1,)), (1,))
    assert np.array_equal(sys.shift(sys.omega((0,)), (1,)), sys.omega((1,)))


# -- membership ---------------------------------------------------------------

def test_member_HE_examples(rng):
    sys = ex.random_system(rng, 2)
    g = rng.normal(size=sys.size)
    for E in lt.subsets(2):
        assert ex.member_HE(sys, E, ex.projector_HE(sys, E, g))
    assert not ex.member_HE(sys, frozenset(), np.ones(sys.size))
    one = ex.build_system(np.full(4, 0.25), [cyclic(4)], np.arange(4))
    f = np.array([1.0, -1.0, 2.0, -2.0])
    assert not ex.member_HE(one, lt.full(1), f)


# -- coboundary equation ----------------------------------------------------

def test_coboundary_solvable_constructed(rng):
    for d in (1, 2):
        sys = ex.random_system(rng, d)
        for E in lt.subsets(d):
            g = ex.projector_HE(sys, E, rng.normal(size=sys.size))
            F = ex.coboundary_operator(sys, E, g)
            sol = ex.coboundary_solve(sys, E, F)
            assert sol.residual < 1e-10
            assert np.allclose(ex.coboundary_operator(sys, E, sol.h), F, atol=1e-10)


def test_coboundary_degenerate_large_residual():
    # every T_q is the identity: A_q = P_E^{e_q} is the identity on H_E
    sys = ex.build_system(np.full(4, 0.25), [np.arange(4)], np.arange(4))
    F = np.array([1.0, -1.0, 0.5, -0.5])
    sol = ex.coboundary_solve(sys, frozenset(), F)
    assert sol.residual == pytest.approx(sys.norm(F))


def test_coboundary_rotation_matches_cesaro():
    sys = ex.rotation_system(5)
    F = np.array([1.0, 0.0, 0.0, 0.0, 0.0]) - 0.2
    sol = ex.coboundary_solve(sys, frozenset(), F)
    assert sol.residual < 1e-10
    # Cesàro averages converge to a solution; the minimal-norm solution is the centered one
    hn = ex.cesaro_solution(sys, frozenset(), F, 2000)
    hn = hn - sys.mean(hn)
    assert np.max(np.abs(hn - sol.h)) < 5e-3
    assert ex.coboundary_solve(sys, frozenset(), F, method="neumann").residual > 1e-3


def test_neumann_on_embedding():
    sys = ex.EmbeddedSystem(Box((-3,), (2,)))
    F = ex.apply_PE(sys, frozenset(), (0,), sys.omega((-1,)) + sys.omega((0,)))
    sol = ex.coboundary_solve(sys, frozenset(), F)
    assert sol.method == "neumann" and sol.residual < 1e-12


# -- decomposition -------------------------------------------------------------

def synthesize(sys, rng, parts_support=None):
    d = sys.d
    parts = {}
    for L in lt.subsets(d):
        g = rng.normal(size=sys.size) if parts_support is None else parts_support(rng)
        parts[L] = ex.synthesize_part(sys, L, g)
    return ex.coboundary_sum(sys, parts)


def test_decompose_synthesized_generic(rng):
    for d in (1, 2, 3):
        sys = ex.random_system(rng, d)
        f = synthesize(sys, rng)
        f = f - sys.mean(f)
        dec = ex.omc_decompose(sys, f)
        assert dec.residual < 1e-9
        assert dec.certified


def test_decompose_synthesized_embedded(rng):
    sys = ex.EmbeddedSystem(Box((-2, -2), (1, 1)))
    w = sys.omega
    sites = [(-1, -1), (0, -1), (-1, 0), (0, 0)]

    def local(r):
        c = r.normal(size=3)
        return c[0] * w(sites[r.integers(4)]) + c[1] * w(sites[0]) * w(sites[3]) + c[2] * w(sites[1]) * w(sites[2])

    f = synthesize(sys, rng, local)
    dec = ex.omc_decompose(sys, f)
    assert dec.residual < 1e-9 and dec.certified


def test_decompose_pure_martingale():
    sys = ex.EmbeddedSystem(Box((-2,), (2,)))
    m = sys.omega((0,)) * sys.omega((-1,))
    dec = ex.omc_decompose(sys, m)
    assert dec.residual < 1e-12 and dec.certified
    assert np.allclose(dec.martingale_part(), m)
    assert np.allclose(dec.parts[lt.full(1)], 0)


def test_decompose_two_tap_field():
    sys = fm.exact_embed(fm.LinearFieldSpec(1, {(0,): 0.5, (1,): 0.5}, RAD), window=Box((-4,), (3,)))
    dec = ex.omc_decompose(sys, sys.observable)
    assert dec.residual < 1e-12 and dec.certified
    assert np.allclose(dec.martingale_part(), sys.omega((0,)))


def test_decompose_refuses_rotation_invariant():
    sys = ex.rotation_system(4, step=2)
    f = np.array([1.0, 0.0, 1.0, 0.0]) - 0.5
    rep = ex.verify_equivalence(sys, f, 64)
    assert rep.decomposition.residual > 1e-3
    assert not rep.bounded and rep.agree
    assert rep.diagonal_growth[frozenset()] == pytest.approx(1.0, abs=0.05)


def test_decompose_rejects_uncentered(rng):
    sys = ex.random_system(rng, 1)
    with pytest.raises(ValueError):
        ex.omc_decompose(sys, np.ones(sys.size))


def test_zero_function():
    sys = ex.product_rotation_system((2, 3))
    rep = ex.verify_equivalence(sys, np.zeros(sys.size), 16)
    assert all(v == 0 for v in rep.sups.values())
    assert all(not np.any(m) for m in rep.decomposition.parts.values())
    assert rep.bounded and rep.solvable


def test_decomposition_json(rng):
    sys = ex.random_system(rng, 2)
    f = random_centered(sys, rng)
    doc = json.loads(json.dumps(ex.omc_decompose(sys, f).to_json()))
    assert {tuple(p["J"]) for p in doc["parts"]} == {(), (1,), (2,), (1, 2)}


def test_hannan_projector_embedded():
    f = fm.LinearFieldSpec(1, {(0,): 2.0, (1,): 3.0}, RAD)
    sys = fm.exact_embed(f, radius=1)
    assert np.allclose(ex.hannan_projector(sys, (-1,), sys.observable), 3.0 * sys.omega((-1,)))
    assert np.allclose(ex.hannan_projector(sys, (0,), sys.observable), 2.0 * sys.omega((0,)))
    assert np.allclose(ex.hannan_projector(sys, (1,), sys.observable), 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 3))
def test_contraction_property(seed, d):
    r = np.random.default_rng(seed)
    sys = ex.random_system(r, d)
    f = r.normal(size=sys.size)
    for E in lt.subsets(d):
        assert sys.norm(ex.apply_PE(sys, E, lt.zeros(d), f)) <= sys.norm(f) + 1e-12
