import math

import numpy as np
import pytest

from moment_opf import MomentIndexMap, Polynomial, UnknownMonomialError, apply_L, basis
from moment_opf._polynomial import Exponent, homogeneous_basis, lift_point, symbolic_outer


# 2-bus variable layout with the reference V_q eliminated
VD1, VD2, VQ2 = 0, 1, 3


def _random_polynomial(rng, variables, degree=3, terms=6) -> Polynomial:
    p = Polynomial.constant(rng.normal())
    for _ in range(terms):
        size = int(rng.integers(1, degree + 1))
        e = Exponent.from_vars(rng.choice(variables, size=size))
        p = p + Polynomial.monomial(e, rng.normal())
    return p


def test_monomial_product():
    vd1 = Polynomial.variable(VD1)

    assert vd1 * vd1 == Polynomial.monomial(Exponent(((VD1, 2),)))
    assert (vd1 * 0).is_zero()


def test_binomial_expansion():
    fV = Polynomial.variable(VD2) ** 2 + Polynomial.variable(VQ2) ** 2

    squared = fV**2

    assert len(squared.terms) == 3
    assert squared.degree == 4
    assert squared.terms[Exponent(((VD2, 2), (VQ2, 2)))] == 2.0


def test_small_coefficients_dropped():
    p = Polynomial.variable(0) * 1e-13 + Polynomial.variable(1)

    assert p.variables() == frozenset({1})


def test_basis_order_matches_graded_lex():
    x2 = basis([VD1, VD2, VQ2], 2)

    assert [e.expanded() for e in x2] == [
        (),
        (VD1,),
        (VD2,),
        (VQ2,),
        (VD1, VD1),
        (VD1, VD2),
        (VD1, VQ2),
        (VD2, VD2),
        (VD2, VQ2),
        (VQ2, VQ2),
    ]
    assert basis([VD1, VD2], 0) == [Exponent()]


@pytest.mark.parametrize("order, length", [(1, 21), (2, 231), (3, 1771)])
def test_basis_length_for_ten_buses(order, length):
    assert len(basis(range(20), order)) == length


@pytest.mark.parametrize("nvars", [1, 4, 9, 20])
@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_basis_length_closed_form(nvars, order):
    assert len(basis(range(nvars), order)) == math.comb(nvars + order, order)
    assert len(homogeneous_basis(range(nvars), order)) == math.comb(nvars + order - 1, order)


def test_apply_L_voltage_bound():
    index_map = MomentIndexMap()
    g = Polynomial.variable(VD2) ** 2 + Polynomial.variable(VQ2) ** 2 - 0.95**2

    expr = apply_L(g, index_map)

    assert expr.constant == pytest.approx(-(0.95**2))
    assert expr.coeffs == {
        index_map.index(Exponent(((VD2, 2),))): 1.0,
        index_map.index(Exponent(((VQ2, 2),))): 1.0,
    }


def test_apply_L_constant():
    expr = apply_L(Polynomial.constant(5.0), MomentIndexMap())

    assert expr.constant == 5.0
    assert expr.is_constant()


def test_apply_L_without_registration():
    index_map = MomentIndexMap()

    with pytest.raises(UnknownMonomialError):
        apply_L(Polynomial.variable(VD1), index_map, register=False)


def test_apply_L_is_linear(rng):
    variables = [0, 1, 2, 3]
    for _ in range(20):
        p, q = _random_polynomial(rng, variables), _random_polynomial(rng, variables)
        a, b = rng.normal(size=2)
        index_map = MomentIndexMap()

        combined = apply_L(p * a + q * b, index_map)
        separate = apply_L(p, index_map) * a + apply_L(q, index_map) * b
        z = rng.normal(size=len(index_map))

        assert combined.evaluate(z) == pytest.approx(separate.evaluate(z), rel=1e-10, abs=1e-10)


def test_lifted_point_evaluates_polynomials(rng):
    variables = [0, 1, 2, 3, 4]
    for _ in range(20):
        p = _random_polynomial(rng, variables, degree=4)
        x = rng.normal(size=5)
        index_map = MomentIndexMap()
        expr = apply_L(p, index_map)

        y = lift_point(x, index_map)

        assert expr.evaluate(y) == pytest.approx(p.evaluate(x), rel=1e-10, abs=1e-10)


def test_moment_matrix_structure():
    x2 = basis([VD1, VD2, VQ2], 2)

    M = symbolic_outer(x2)

    assert len(M) == 10
    assert M[0][0] == Polynomial.constant(1.0)
    assert M[1][4] == Polynomial.monomial(Exponent(((VD1, 3),)))
    assert M[4][9] == Polynomial.monomial(Exponent(((VD1, 2), (VQ2, 2))))
    for i in range(10):
        for j in range(10):
            assert M[i][j] == M[j][i]


def test_localizing_matrix_entries():
    g = Polynomial.variable(VD2) ** 2 + Polynomial.variable(VQ2) ** 2 - 0.95**2
    x1 = basis([VD1, VD2, VQ2], 1)

    M = symbolic_outer(x1, g)

    assert len(M) == 4
    assert M[0][0] == g
    assert M[1][2] == g.times_monomial(Exponent(((VD1, 1), (VD2, 1))))
    assert symbolic_outer([Exponent()]) == [[Polynomial.constant(1.0)]]


def test_index_map_never_registers_constant():
    index_map = MomentIndexMap()

    with pytest.raises(ValueError):
        index_map.register(Exponent())

    t = index_map.auxiliary("t1")
    idx = index_map.register(Exponent(((0, 2),)))
    assert (t, idx) == (0, 1)
    assert index_map.auxiliaries() == [(0, "t1")]
    assert len(index_map) == 2


def test_substitute_zero():
    p = Polynomial.variable(0) * Polynomial.variable(1) + Polynomial.variable(0) ** 2

    assert p.substitute_zero(1) == Polynomial.variable(0) ** 2


def test_exponent_rejects_negative_powers():
    with pytest.raises(ValueError):
        Exponent(((0, -1),))


def test_lift_point_ignores_auxiliaries():
    index_map = MomentIndexMap()
    index_map.auxiliary("t")
    index_map.register(Exponent(((0, 1), (1, 1))))

    np.testing.assert_allclose(lift_point([2.0, 3.0], index_map), [0.0, 6.0])
