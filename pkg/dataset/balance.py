"""
Training-set construction from labeled pools.
"""
import logging
from typing import Sequence

import numpy as np

from .domain import DatasetMix, Label, TaskInstance
from .exceptions import InsufficientPool

logger = logging.getLogger(__name__)


def split_by_label(tasks: Sequence[TaskInstance]) -> tuple[list[TaskInstance], list[TaskInstance]]:
    easy = [task for task in tasks if task.label == Label.EASY]
    hard = [task for task in tasks if task.label == Label.HARD]
    return easy, hard


def _check_pool(pool: Sequence[TaskInstance], label: Label, requested: int) -> None:
    wrong = [task.task_id for task in pool if task.label != label]
    if wrong:
        raise ValueError(f'{label.value} pool holds tasks labeled otherwise: {wrong[:5]}')
    if len(pool) < requested:
        raise InsufficientPool(label.value, len(pool), requested)


def _take(rng: np.random.Generator, pool: Sequence[TaskInstance], count: int) -> list[TaskInstance]:
    return [pool[int(i)] for i in rng.choice(len(pool), size=count, replace=False)]


def build_mixture(easy: Sequence[TaskInstance], hard: Sequence[TaskInstance], mix: DatasetMix,
                  size: int, seed: int) -> list[TaskInstance]:
    """
    ``size`` tasks drawn without replacement: all easy, all hard, or half
    and half, shuffled deterministically by ``seed``.
    """
    mix = DatasetMix(mix)
    if size < 0:
        raise ValueError('size must be non-negative')
    if mix == DatasetMix.BALANCED:
        if size % 2:
            raise ValueError('a balanced dataset needs an even size')
        n_easy, n_hard = size // 2, size // 2
    elif mix == DatasetMix.EASY:
        n_easy, n_hard = size, 0
    else:
        n_easy, n_hard = 0, size
    _check_pool(easy, Label.EASY, n_easy)
    _check_pool(hard, Label.HARD, n_hard)

    rng = np.random.default_rng(seed)
    picked = _take(rng, easy, n_easy) + _take(rng, hard, n_hard)
    tasks = [picked[int(i)] for i in rng.permutation(len(picked))]
    logger.info('dataset built mix=%s easy=%d hard=%d seed=%d', mix.value, n_easy, n_hard, seed)
    return tasks


def build_balanced(easy: Sequence[TaskInstance], hard: Sequence[TaskInstance],
                   n_per_class: int, seed: int) -> list[TaskInstance]:
    return build_mixture(easy, hard, DatasetMix.BALANCED, 2 * n_per_class, seed)
