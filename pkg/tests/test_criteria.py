import math

import numpy as np
import pytest
from scipy.special import zeta

from orthofield import criteria as cr
from orthofield import fieldmodels as fm
from orthofield import lattice as lt
from orthofield import projections as pj
from orthofield.lattice import Box


def test_hannan_examples():
    r = cr.hannan_check(fm.LinearFieldSpec.delta(2))
    assert r.satisfied and r.entries[0].total == 1.0
    r = cr.hannan_check(fm.LinearFieldSpec(2, {(0, 0): 1.0, (1, 0): -1.0}))
    assert r.entries[0].total == 2.0
    r = cr.hannan_check(fm.LinearFieldSpec.product_form([0.5]))
    assert r.entries[0].total == pytest.approx(2.0, abs=1e-12)
    assert r.notes and "truncated" in r.notes[0]


def test_delta_En_examples():
    f = fm.LinearFieldSpec.delta(1)
    for n in (1, 2, 7):
        assert cr.delta_En(f, frozenset(), (n,)) == 1.0
        assert cr.delta_En(f, lt.full(1), (n,)) == 0.0


def test_delta_matches_sum_norm(rng):
    for d in (1, 2):
        for _ in range(4):
            coeffs = {k: rng.normal() for k in lt.iterate_box(Box((-2,) * d, (2,) * d)) if rng.random() < 0.5}
            f = fm.LinearFieldSpec(d, coeffs, fm.InnovationSpec(sd=1.3))
            for E in lt.subsets(d):
                for n in lt.iterate_box(Box(lt.ones(d), (4,) * d)):
                    assert 1.3 ** 2 * cr.delta_En(f, E, n) == pytest.approx(pj.sum_PE_norm(f, E, n) ** 2, abs=1e-10)


def test_mw_delta_one_dim():
    r = cr.mw_check(fm.LinearFieldSpec.delta(1, fm.InnovationSpec(sd=2.0)), 16)
    empty, full = r.entries
    assert empty.partial_sum == pytest.approx(2.0 * sum(n ** -1.5 for n in range(1, 17)), abs=1e-10)
    assert empty.partial_sum + empty.tail_bound == pytest.approx(2.0 * zeta(1.5), abs=1e-10)
    assert full.total == 0.0
    assert r.satisfied


def test_mw_delta_two_dim():
    r = cr.mw_check(fm.LinearFieldSpec.delta(2), 8)
    assert r.satisfied and len(r.entries) == 4
    assert r.entries[0].total == pytest.approx(zeta(1.5) ** 2, abs=1e-10)
    assert all(e.total == 0.0 for e in r.entries[1:])


def test_mw_zero_field():
    r = cr.mw_check(fm.LinearFieldSpec(2, {}), 4)
    assert all(e.total == 0 and e.partial_sum == 0 for e in r.entries)


def test_mw_partial_matches_bruteforce(rng):
    for d in (1, 2):
        coeffs = {k: rng.normal() for k in lt.iterate_box(Box((-2,) * d, (2,) * d)) if rng.random() < 0.5}
        f = fm.LinearFieldSpec(d, coeffs)
        r = cr.mw_check(f, 6)
        for e in r.entries:
            assert e.partial_sum == pytest.approx(cr.mw_partial_bruteforce(f, e.E, 6), abs=1e-10)
            assert e.tail_bound >= 0
            assert e.verdict == cr.SATISFIED


def test_mw_requires_truncation_point():
    with pytest.raises(ValueError):
        cr.mw_check(fm.LinearFieldSpec.delta(1), 3)


def test_zero_coefficient_noop(rng):
    f = fm.LinearFieldSpec(2, {(0, 0): 1.0, (1, -1): 0.4})
    g = fm.LinearFieldSpec(2, {(0, 0): 1.0, (1, -1): 0.4, (2, 2): 0.0})
    for E in lt.subsets(2):
        assert cr.delta_En(f, E, (3, 2)) == cr.delta_En(g, E, (3, 2))


def test_scaling(rng):
    f = fm.LinearFieldSpec(2, {(0, 0): 1.0, (1, -1): 0.4, (-1, 0): -0.7})
    g = f.scaled(-3.0)
    for E in lt.subsets(2):
        assert cr.delta_En(g, E, (2, 3)) == pytest.approx(9.0 * cr.delta_En(f, E, (2, 3)))
    for a, b in zip(cr.mw_check(f, 4).entries, cr.mw_check(g, 4).entries):
        assert b.total == pytest.approx(3.0 * a.total)
    assert cr.hannan_check(g).entries[0].total == pytest.approx(3.0 * cr.hannan_check(f).entries[0].total)
