from dataclasses import dataclass

from django.db import models
from django.utils.translation import gettext_lazy as _


class KLReference(models.TextChoices):
    INITIAL_POLICY = 'initial_policy', _('Initial policy')
    ITERATION_SNAPSHOT = 'iteration_snapshot', _('Iteration snapshot')


@dataclass(frozen=True)
class OptimConfig:
    clip_eps: float = 0.2
    kl_coeff: float = 0.001
    learning_rate: float = 0.05
    steps: int = 200
    batch_tasks: int = 4
    kl_reference: KLReference = KLReference.ITERATION_SNAPSHOT
    inner_epochs: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'kl_reference', KLReference(self.kl_reference))
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError('clip_eps must lie in (0, 1)')
        if self.kl_coeff < 0:
            raise ValueError('kl_coeff must be non-negative')
        if self.learning_rate <= 0:
            raise ValueError('learning_rate must be positive')
        if self.steps < 0:
            raise ValueError('steps must be non-negative')
        if self.batch_tasks < 1:
            raise ValueError('batch_tasks must be at least 1')
        if self.inner_epochs < 1:
            raise ValueError('inner_epochs must be at least 1')
