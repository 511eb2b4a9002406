"""Exact linear algebra: integer null spaces and stationary laws."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mscrn.errors import IsolatedSpeciesError, ReducibleChainError
from mscrn.exact import (closed_classes, format_rational, integer_nullspace,
                         parse_rational, stationary_distribution,
                         strongly_connected_components)


def test_parse_rational_forms():
    assert parse_rational("3/2") == Fraction(3, 2)
    assert parse_rational("2") == Fraction(2)
    # decimal converts exactly, not through binary float
    assert parse_rational("0.1") == Fraction(1, 10)
    assert format_rational(Fraction(3, 2)) == "3/2"
    assert format_rational(Fraction(4, 2)) == "2"


def test_nullspace_of_activation_pair():
    # zeta_f = [[-1, 1], [1, -1]]; transpose has null space spanned by (1, 1)
    basis = integer_nullspace(np.array([[-1, 1], [1, -1]]).T)
    assert basis == [(1, 1)]


def test_nullspace_full_rank_empty():
    assert integer_nullspace(np.eye(2, dtype=int)) == []


def test_nullspace_single_fast_row():
    # B-row (-1, 1, -1): transpose is 3x1, only theta = 0 annihilates it
    assert integer_nullspace(np.array([[-1], [1], [-1]])) == []


def test_nullspace_primitive_and_deterministic():
    m = np.array([[2, 4], [1, 2]])  # rank 1, null space span{(2, -1)}
    basis = integer_nullspace(m)
    assert basis == [(2, -1)]
    assert integer_nullspace(m) == basis


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(-3, 3), min_size=3, max_size=3),
                min_size=1, max_size=4))
def test_nullspace_annihilates(rows):
    m = np.array(rows)
    for vec in integer_nullspace(m):
        assert all(sum(m[r][c] * vec[c] for c in range(3)) == 0 for r in range(len(rows)))
        from math import gcd
        g = 0
        for x in vec:
            g = gcd(g, abs(x))
        assert g == 1


def test_scc_cycle_and_tail():
    # 0 <-> 1, 2 -> 0: classes {0,1} (closed) and {2} (transient)
    comps = strongly_connected_components(3, {(0, 1), (1, 0), (2, 0)})
    assert sorted(map(tuple, comps)) == [(0, 1), (2,)]
    assert closed_classes(3, {(0, 1), (1, 0), (2, 0)}) == [[0, 1]]


def test_stationary_two_state():
    # balance: pi1 * 1 = pi2 * 2 -> (2/3, 1/3), exact
    pi = stationary_distribution([[0, 1], [2, 0]])
    assert pi == [Fraction(2, 3), Fraction(1, 3)]


def test_stationary_symmetric_cycle():
    rates = [[0, 1, 0], [0, 0, 1], [1, 0, 0]]
    assert stationary_distribution(rates) == [Fraction(1, 3)] * 3


def test_stationary_single_state():
    assert stationary_distribution([[0]]) == [Fraction(1)]


def test_stationary_transient_state_gets_zero():
    # 2 only leaks into the 0<->1 pair
    pi = stationary_distribution([[0, 1, 0], [2, 0, 0], [1, 0, 0]])
    assert pi == [Fraction(2, 3), Fraction(1, 3), Fraction(0)]


def test_stationary_errors():
    # two absorbing states fed by a transient one -> two closed classes
    with pytest.raises(ReducibleChainError):
        stationary_distribution([[0, 0, 0], [0, 0, 0], [1, 1, 0]])
    with pytest.raises(IsolatedSpeciesError):
        stationary_distribution([[0, 0], [0, 0]])


def test_stationary_two_closed_classes():
    with pytest.raises(ReducibleChainError):
        stationary_distribution([[0, 0, 0, 0],
                                 [0, 0, 0, 0],
                                 [1, 0, 0, 0],
                                 [0, 1, 0, 0]])
