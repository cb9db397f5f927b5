from dataclasses import dataclass
from typing import Optional

from django.db import models
from django.utils.translation import gettext_lazy as _


class RewardVariant(models.TextChoices):
    FULL = 'full', _('Answer and knowledge-boundary reward')
    NO_KB = 'no_kb', _('Answer reward only')
    NO_KB_MINUS = 'no_kb_minus', _('Without the failed-search reward')


@dataclass(frozen=True)
class RewardConfig:
    r_kb_plus: float = 0.6
    r_kb_minus: float = 0.05
    rt_max: int = 3
    variant: RewardVariant = RewardVariant.FULL

    def __post_init__(self):
        object.__setattr__(self, 'variant', RewardVariant(self.variant))
        if self.rt_max < 1:
            raise ValueError('rt_max must be at least 1')
        if not 0.0 < self.r_kb_minus <= self.r_kb_plus / 4:
            raise ValueError('r_kb_minus must lie in (0, r_kb_plus / 4]')


@dataclass(frozen=True)
class RewardBreakdown:
    """
    ``r_ans`` and ``r_kb`` are None when the format is invalid.
    """
    format_valid: bool
    r_ans: Optional[int]
    r_kb: Optional[float]
    total: float
    rt: int = 0

    def __post_init__(self):
        if not self.format_valid and (self.r_ans is not None or self.r_kb is not None):
            raise ValueError('an invalid trajectory carries no answer or boundary reward')
