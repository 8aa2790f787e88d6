"""General utility functions."""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from typing import Iterable, List

__all__ = [
    "floor_count",
    "make_generator",
    "parse_float_list",
    "parse_int_list",
]


def make_generator(
    seed: int, stream: int, *extra: int
) -> np.random.Generator:
    """Create a seeded random generator for one stream of randomness.

    All randomness in adadf comes from PCG64 generators seeded through
    `numpy.random.SeedSequence` with the entropy ``[seed, stream, *extra]``.
    PCG64 is a portable 64-bit permuted congruential generator, so a given
    seed and stream produce the same numbers on every platform.

    Parameters
    ----------
    seed : `int`
        The user-visible seed.
    stream : `int`
        One of the ``STREAM_*`` constants in `adadf.constants`.
    *extra : `int`
        Further entropy, such as the epoch of a per-epoch stream.

    Returns
    -------
    generator : `numpy.random.Generator`
        A generator that no other stream shares.
    """
    return np.random.Generator(np.random.PCG64([seed, stream, *extra]))


def floor_count(rate: float, n: int, guard: float) -> int:
    """Return ``floor(rate * n)`` robust to representation error.

    ``0.29 * 100`` is ``28.999999999999996`` in binary floating point, which
    would floor to 28.  The guard is added before flooring.
    """
    return min(n, int(math.floor(rate * n + guard)))


def parse_float_list(values: Iterable[str]) -> List[float]:
    """Parse comma-separated or repeated values into floats.

    Parameters
    ----------
    values : Iterable[`str`]
        Raw values such as ``["0.1,0.2", "0.3"]``.

    Returns
    -------
    result : List[`float`]
        The flattened numbers in order.

    Raises
    ------
    ValueError
        One of the values is not a number.
    """
    result = []
    for value in values:
        for part in value.split(","):
            if part.strip():
                result.append(float(part))
    return result


def parse_int_list(values: Iterable[str]) -> List[int]:
    """Parse comma-separated or repeated values into integers."""
    result = []
    for value in parse_float_list(values):
        if not value.is_integer():
            raise ValueError(f"{value} is not an integer")
        result.append(int(value))
    return result
