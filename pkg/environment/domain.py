from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

FactKey = tuple[str, str]


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str

    def __post_init__(self):
        if not self.body:
            raise ValueError(f'document {self.doc_id} has an empty body')

    @property
    def indexed_text(self) -> str:
        return f'{self.title} {self.body}'


@dataclass(frozen=True)
class RetrievalResult:
    query: str
    hits: tuple[tuple[str, float], ...]
    k: int


@dataclass(frozen=True)
class SyntheticWorld:
    """
    A table of (entity, attribute) -> value facts.

    ``internal_subset`` holds the fact keys the toy policy is seeded with,
    i.e. the facts inside its knowledge boundary. ``unindexed`` holds the
    facts the corpus has no document for.
    """
    seed: int
    entities: tuple[str, ...]
    facts: Mapping[FactKey, str]
    internal_subset: frozenset[FactKey]
    question_templates: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    unindexed: frozenset[FactKey] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'facts', MappingProxyType(dict(self.facts)))
        object.__setattr__(self, 'internal_subset', frozenset(self.internal_subset))
        object.__setattr__(self, 'unindexed', frozenset(self.unindexed))
        object.__setattr__(self, 'question_templates',
                           MappingProxyType({k: tuple(v) for k, v in self.question_templates.items()}))
        if not self.internal_subset <= set(self.facts):
            raise ValueError('internal_subset must be a subset of facts')
        if not self.unindexed <= set(self.facts):
            raise ValueError('unindexed must be a subset of facts')
        if self.unindexed & self.internal_subset:
            raise ValueError('internal facts are always indexed')

    def is_internal(self, keys) -> bool:
        return all(tuple(key) in self.internal_subset for key in keys)
