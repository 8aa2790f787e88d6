"""Tests for the adadf.util package."""

from __future__ import annotations

import numpy as np
import pytest

from adadf.util import (
    floor_count,
    make_generator,
    parse_float_list,
    parse_int_list,
)


def test_make_generator() -> None:
    first = make_generator(7, 1).random(4)
    assert np.array_equal(first, make_generator(7, 1).random(4))
    assert not np.array_equal(first, make_generator(7, 2).random(4))
    assert not np.array_equal(first, make_generator(8, 1).random(4))
    assert not np.array_equal(first, make_generator(7, 1, 3).random(4))


def test_floor_count() -> None:
    assert 0.29 * 100 < 29
    assert floor_count(0.29, 100, 1e-9) == 29
    assert floor_count(0.7, 10, 1e-9) == 7
    assert floor_count(0.75, 10, 1e-9) == 7
    assert floor_count(1.0, 10, 1e-9) == 10


def test_parse_lists() -> None:
    assert parse_float_list(["0.1,0.2", " 0.3 ", ""]) == [0.1, 0.2, 0.3]
    assert parse_int_list(["1,3", "5"]) == [1, 3, 5]
    with pytest.raises(ValueError):
        parse_float_list(["a"])
    with pytest.raises(ValueError):
        parse_int_list(["1.5"])
