"""Loss terms and their epoch ramp weighting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from adadf.autodiff import (
    Tensor,
    add,
    div,
    log,
    mean,
    mul,
    neg,
    pick,
    relu,
    sub,
    take,
    tensor_sum,
)
from adadf.constants import COUNT_GUARD, LOG_EPSILON
from adadf.distributions import check_labels
from adadf.exceptions import ContractError, DimensionError
from adadf.util import floor_count

if TYPE_CHECKING:
    from typing import Optional, Tuple, Union

    LossLike = Union[Tensor, float]

__all__ = [
    "LossTerms",
    "alpha1",
    "alpha2",
    "cross_entropy",
    "high_group_size",
    "joint_loss",
    "kl_divergence",
    "rank_regularization",
]


@dataclass(frozen=True)
class LossTerms:
    """Values of the loss terms of one optimizer step."""

    l_ce: float
    """Cross-entropy of the auxiliary branch."""

    l_kld: float
    """KL divergence of the target branch from the fused targets."""

    l_rr: float
    """Rank regularization of the averaged attention weights."""

    l_total: float
    """``l_rr + alpha1 * l_ce + alpha2 * l_kld``."""

    alpha1: Optional[float] = None
    """Ramp weight of the cross-entropy.

    `None` for the single-label baseline, whose loss is not ramped.
    """

    alpha2: Optional[float] = None
    """Ramp weight of the KL divergence, `None` when not ramped."""


def cross_entropy(p: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log probability of each sample's label.

    Raises
    ------
    adadf.exceptions.ContractError
        A label is not a class of ``p``.
    """
    if p.data.ndim != 2:
        raise DimensionError("cross_entropy", p.shape, (len(labels),))
    labels = check_labels(labels, p.shape[1])
    return neg(mean(log(pick(p, labels))))


def kl_divergence(d: np.ndarray, p: Tensor) -> Tensor:
    """Mean KL divergence of predictions ``p`` from detached targets ``d``.

    Computed as ``(1/N) Σ d·(log d − log p)`` with both logarithms clamped
    at 1e-12, so zero target entries contribute nothing and identical rows
    give exactly zero.
    """
    targets = np.asarray(d, dtype=p.dtype)
    if targets.shape != p.shape or p.data.ndim != 2:
        raise DimensionError("kl_divergence", targets.shape, p.shape)
    log_targets = Tensor(np.log(np.maximum(targets, LOG_EPSILON)))
    terms = mul(Tensor(targets), sub(log_targets, log(p)))
    return div(tensor_sum(terms), float(p.shape[0]))


def high_group_size(n: int, ratio: float) -> int:
    """Size of the high attention group, ``floor(ratio * n)`` in [1, n-1]."""
    return max(1, min(n - 1, floor_count(ratio, n, COUNT_GUARD)))


def rank_regularization(w_avg: Tensor, delta: float, ratio: float) -> Tensor:
    """Hinge on the gap between high and low attention group means.

    The weights are sorted in descending order.  The first
    `high_group_size` of them form the high group and the rest the low
    group.  The loss is ``max(0, delta - (mean_high - mean_low))``.

    Raises
    ------
    adadf.exceptions.ContractError
        There are fewer than two weights or ``ratio`` is outside (0, 1).
    """
    if w_avg.data.ndim != 1:
        raise ContractError(f"weights must be a vector, got {w_avg.shape}")
    n = w_avg.shape[0]
    if n < 2:
        raise ContractError("rank regularization needs at least two samples")
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"ratio={ratio} outside (0, 1)")
    order = np.argsort(-w_avg.data, kind="stable")
    m = high_group_size(n, ratio)
    high = mean(take(w_avg, order[:m]))
    low = mean(take(w_avg, order[m:]))
    return relu(sub(delta, sub(high, low)))


def _check_epoch(e: int, beta: int) -> None:
    if e < 1 or beta < 1:
        msg = f"ramps need e ≥ 1 and beta ≥ 1, got e={e}, beta={beta}"
        raise ContractError(msg)


def alpha1(e: int, beta: int) -> float:
    """Cross-entropy ramp: 1 up to ``beta``, then ``exp(-(1 - beta/e)²)``."""
    _check_epoch(e, beta)
    if e <= beta:
        return 1.0
    return math.exp(-((1.0 - beta / e) ** 2))


def alpha2(e: int, beta: int) -> float:
    """KL ramp: ``exp(-(1 - e/beta)²)`` up to ``beta``, then 1."""
    _check_epoch(e, beta)
    if e <= beta:
        return math.exp(-((1.0 - e / beta) ** 2))
    return 1.0


def _value(term: LossLike) -> float:
    return term.item() if isinstance(term, Tensor) else float(term)


def joint_loss(
    l_ce: LossLike, l_kld: LossLike, l_rr: LossLike, e: int, beta: int
) -> Tuple[Tensor, LossTerms]:
    """Combine the loss terms with the ramp weights of epoch ``e``.

    Returns
    -------
    total : `adadf.autodiff.Tensor`
        ``l_rr + alpha1(e, beta) * l_ce + alpha2(e, beta) * l_kld``, on the
        tape of its terms.
    terms : `LossTerms`
        The values of every term and weight.
    """
    a1 = alpha1(e, beta)
    a2 = alpha2(e, beta)
    total = add(add(l_rr, mul(l_ce, a1)), mul(l_kld, a2))
    terms = LossTerms(
        l_ce=_value(l_ce),
        l_kld=_value(l_kld),
        l_rr=_value(l_rr),
        l_total=total.item(),
        alpha1=a1,
        alpha2=a2,
    )
    return total, terms
