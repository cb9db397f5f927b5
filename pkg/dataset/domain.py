from dataclasses import dataclass, field, replace

from django.db import models
from django.utils.translation import gettext_lazy as _


class Label(models.TextChoices):
    EASY = 'easy', _('Easy')
    HARD = 'hard', _('Hard')
    UNLABELED = 'unlabeled', _('Unlabeled')


class DatasetMix(models.TextChoices):
    BALANCED = 'balanced', _('Balanced 1:1')
    EASY = 'easy', _('Easy only')
    HARD = 'hard', _('Hard only')


@dataclass(frozen=True)
class TaskInstance:
    """
    A question with its gold answers.

    ``facts`` lists the (entity, attribute) keys a synthetic question needs;
    it is empty for tasks ingested from external datasets.
    """
    task_id: str
    question: str
    golds: tuple[str, ...]
    label: Label = Label.UNLABELED
    source: str = ''
    facts: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        if not self.golds:
            raise ValueError(f'task {self.task_id} has no gold answers')
        object.__setattr__(self, 'golds', tuple(self.golds))
        object.__setattr__(self, 'label', Label(self.label))
        object.__setattr__(self, 'facts', tuple(tuple(key) for key in self.facts))

    def with_label(self, label: Label) -> 'TaskInstance':
        return replace(self, label=label)
