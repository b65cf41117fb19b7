import math

import numpy as np
import pytest

from orthofield import exactsys as ex
from orthofield import fieldmodels as fm
from orthofield import lattice as lt
from orthofield import projections as pj
from orthofield.lattice import Box

RAD = fm.InnovationSpec("rademacher")


def random_field(rng, d, radius=1, innovation=RAD):
    coeffs = {k: rng.normal() for k in lt.iterate_box(Box((-radius,) * d, (radius,) * d)) if rng.random() < 0.6}
    coeffs[lt.zeros(d)] = rng.normal()
    return fm.LinearFieldSpec(d, coeffs, innovation)


def test_delta_examples():
    f = fm.LinearFieldSpec.delta(1)
    assert pj.linear_PE(f, frozenset(), (0,)).coeffs == {(0,): 1.0}
    for i in range(5):
        assert pj.linear_PE(f, lt.full(1), (i,)).coeffs == {}


def test_linear_PE_one_dim_closed_form():
    f = fm.LinearFieldSpec(1, {(-2,): 1.0, (-1,): 2.0, (0,): 3.0, (1,): 4.0})
    # E[U^1 f | F_0] keeps the innovations at sites ≤ 0 of Σ a_l ε_{1-l}
    assert pj.linear_PE(f, frozenset(), (1,)).coeffs == {(0,): 4.0}
    # U^{-1} f - E[U^{-1} f | F_0] keeps sites ≥ 1 of Σ a_l ε_{-1-l}
    assert pj.linear_PE(f, lt.full(1), (1,)).coeffs == {(-1,): 1.0}
    assert pj.linear_PE(f, lt.full(1), (0,)).coeffs == {(-2,): 1.0, (-1,): 2.0}


@pytest.mark.parametrize("d,window,imax", [(1, Box((-3,), (3,)), 2), (2, Box((-2, -2), (1, 1)), 1)])
def test_against_exact_embedding(rng, d, window, imax):
    for _ in range(4):
        f = random_field(rng, d)
        sys = fm.exact_embed(f, window=window)
        for E in lt.subsets(d):
            for i in lt.iterate_box(Box(lt.zeros(d), (imax,) * d)):
                try:
                    exact = ex.apply_PE(sys, E, i, sys.observable)
                except ex.WrapAround:
                    continue
                sym = fm.embed_vector(sys, pj.linear_PE(f, E, i).field)
                assert np.max(np.abs(exact - sym)) <= 1e-12


def test_pi_examples():
    f = fm.LinearFieldSpec.delta(2)
    assert pj.linear_pi(f, (0, 0)) == 1.0 and pj.linear_pi(f, (1, 0)) == 0.0
    g = fm.LinearFieldSpec(1, {(0,): 2.0, (1,): 3.0}, RAD)
    assert pj.linear_pi(g, (-1,)) == 3.0
    sys = fm.exact_embed(g, radius=1)
    assert np.allclose(ex.hannan_projector(sys, (-1,), sys.observable), pj.linear_pi(g, (-1,)) * sys.omega((-1,)))


def test_pi_norm_sum(rng):
    f = random_field(rng, 2, innovation=fm.InnovationSpec(sd=1.7))
    total = sum(abs(pj.linear_pi(f, lt.neg(k))) * f.innovation.sd for k in lt.iterate_box(Box((-2, -2), (2, 2))))
    assert total == pytest.approx(1.7 * sum(abs(v) for v in f.coeffs.values()), abs=1e-12)


def test_sum_PE_norm_examples():
    f = fm.LinearFieldSpec.delta(1, fm.InnovationSpec(sd=2.5))
    for n in (1, 3, 10):
        assert pj.sum_PE_norm(f, frozenset(), (n,)) == pytest.approx(2.5)
        assert pj.sum_PE_norm(f, lt.full(1), (n,)) == 0.0
    with pytest.raises(ValueError):
        pj.sum_PE_norm(f, frozenset(), (0,))


def test_sum_PE_norm_vs_exact(rng):
    f = random_field(rng, 2)
    sys = fm.exact_embed(f, window=Box((-2, -2), (1, 1)))
    for E in lt.subsets(2):
        n = (2, 1)
        try:
            acc = sum(ex.apply_PE(sys, E, i, sys.observable) for i in lt.iterate_box(Box((0, 0), (1, 0))))
        except ex.WrapAround:
            continue
        assert sys.norm(acc) == pytest.approx(pj.sum_PE_norm(f, E, n), abs=1e-12)


def test_semigroup_on_certified_fields(rng):
    for _ in range(5):
        base = random_field(rng, 2)
        for E in lt.subsets(2):
            f = pj.linear_PE(base, E, (0, 0)).field
            if f.is_zero:
                continue
            sys = fm.exact_embed(f, radius=max(1, f.radius()))
            assert ex.member_HE(sys, E, sys.observable) or (not E and abs(sys.mean(sys.observable)) > 0)
            for j in lt.iterate_box(Box((0, 0), (2, 2))):
                for k in lt.iterate_box(Box((0, 0), (2, 2))):
                    lhs = pj.linear_PE(pj.linear_PE(f, E, k), E, j).coeffs
                    rhs = pj.linear_PE(f, E, lt.add(j, k)).coeffs
                    assert lhs == rhs


def test_contraction(rng):
    for d in (1, 2, 3):
        f = random_field(rng, d, innovation=fm.InnovationSpec())
        for E in lt.subsets(d):
            assert pj.linear_PE(f, E, lt.zeros(d)).norm() <= f.norm() + 1e-12


def test_coefficient_csv():
    f = fm.LinearFieldSpec(2, {(0, 0): 1.0, (1, -1): 0.5})
    p = pj.linear_PE(f, frozenset(), (0, 0))
    assert p.coeff_csv() == "i1,i2,value\n0,0,1.0\n"
    assert "P_{}" in p.lineage
