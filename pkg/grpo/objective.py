"""
Group-relative advantages and the masked clipped objective.

Losses are masked means over action tokens: observation tokens never
enter a sum, so their log-probabilities cannot change the result.
"""
import math
from typing import Sequence

import numpy as np

from .exceptions import EmptyMask, GroupTooSmall


def group_advantages(rewards: Sequence[float]) -> tuple[float, float, list[float]]:
    """
    Standardize rewards within a group with the population standard
    deviation; a group whose rewards are all equal gets zero advantages.
    """
    if len(rewards) < 2:
        raise GroupTooSmall(len(rewards))
    values = [float(r) for r in rewards]
    if max(values) == min(values):
        return values[0], 0.0, [0.0] * len(values)
    mu = math.fsum(values) / len(values)
    sigma = math.sqrt(math.fsum((r - mu) ** 2 for r in values) / len(values))
    return mu, sigma, [(r - mu) / sigma for r in values]


def _masked(values, mask) -> tuple[np.ndarray, np.ndarray]:
    selected = np.asarray(mask, dtype=bool)
    if not selected.any():
        raise EmptyMask()
    return np.asarray(values, dtype=np.float64), selected


def clipped_surrogate(new_lp: Sequence[float], old_lp: Sequence[float], mask: Sequence[int],
                      advantage: float, eps: float) -> float:
    new, selected = _masked(new_lp, mask)
    old = np.asarray(old_lp, dtype=np.float64)
    if new.shape != old.shape or new.shape != selected.shape:
        raise ValueError('log-probabilities and mask differ in length')
    ratio = np.exp(new[selected] - old[selected])
    terms = np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)
    return -float(terms.sum() / selected.sum())


def k3(new: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """
    Per-token ``exp(ref - new) - (ref - new) - 1``.
    """
    delta = ref - new
    return np.maximum(np.expm1(delta) - delta, 0.0)


def kl_term(new_lp: Sequence[float], ref_lp: Sequence[float], mask: Sequence[int]) -> float:
    new, selected = _masked(new_lp, mask)
    ref = np.asarray(ref_lp, dtype=np.float64)
    if new.shape != ref.shape or new.shape != selected.shape:
        raise ValueError('log-probabilities and mask differ in length')
    return float(k3(new[selected], ref[selected]).sum() / selected.sum())
