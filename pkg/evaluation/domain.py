from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from django.db import models
from django.utils.translation import gettext_lazy as _

SubsetKey = tuple[str, str]


class EvalMode(models.TextChoices):
    AGENT = 'agent', _('Tagged search agent')
    DIRECT = 'direct', _('Direct answer, no retrieval')
    RAG = 'rag', _('Answer over one retrieval with the question')


class ReportFormat(models.TextChoices):
    TABLE = 'table', _('Aligned text table')
    JSONL = 'jsonl', _('JSON lines')
    PDF = 'pdf', _('PDF document')


@dataclass(frozen=True)
class EvalRecord:
    """
    Outcome of one evaluated task.
    """
    task_id: str
    source: str
    label: str
    mode: EvalMode
    answer: str
    em: int
    rt: int
    text: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'mode', EvalMode(self.mode))
        if self.em not in (0, 1):
            raise ValueError('em must be 0 or 1')
        if self.rt < 0:
            raise ValueError('rt must be non-negative')


@dataclass(frozen=True)
class SubsetStats:
    em_mean: float
    rt_mean: float
    n: int


@dataclass(frozen=True)
class EvalReport:
    """
    EM and RT per (source, label) subset.

    ``overall`` averages the subset means with equal weight; its ``n`` is
    the total number of tasks.
    """
    per_subset: Mapping[SubsetKey, SubsetStats]
    overall: SubsetStats
    mode: EvalMode = EvalMode.AGENT
    subsets: tuple[SubsetKey, ...] = field(default=(), init=False)

    def __post_init__(self):
        object.__setattr__(self, 'per_subset', MappingProxyType(dict(self.per_subset)))
        object.__setattr__(self, 'mode', EvalMode(self.mode))
        object.__setattr__(self, 'subsets', tuple(sorted(self.per_subset, key=subset_order)))
        if not self.per_subset:
            raise ValueError('a report needs at least one subset')
        if any(stats.n < 1 for stats in self.per_subset.values()):
            raise ValueError('every subset must hold at least one task')


LABEL_ORDER = {'easy': 0, 'hard': 1}


def subset_order(key: SubsetKey) -> tuple:
    source, label = key
    return (source, LABEL_ORDER.get(label, len(LABEL_ORDER)), label)


def subset_name(key: SubsetKey) -> str:
    source, label = key
    return f'{source}/{label}' if source else label
