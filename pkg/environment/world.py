"""
Synthetic fact world for desk-scale training.

Every fact gets its own document, so the templated fact query retrieves
it at rank 1. A seeded share of the facts forms the internal subset the
toy policy is taught before reinforcement learning starts. The corpus may
leave out part of the remaining facts, so a search for them finds only
neighbouring documents.
"""
import logging
from dataclasses import replace

import numpy as np

from dataset.domain import Label, TaskInstance

from .domain import Document, FactKey, SyntheticWorld

logger = logging.getLogger(__name__)

PLAIN_ATTRIBUTES = ('capital', 'founder', 'river')
RELATION = 'ally'
ATTRIBUTES = (*PLAIN_ATTRIBUTES, RELATION)

SYLLABLES = (
    'ba', 'dor', 'ka', 'lin', 'mar', 'nu', 'quo', 'ras', 'sel', 'tav',
    'vek', 'zor', 'ith', 'gal', 'mek', 'pra', 'dun', 'fey', 'hol', 'jur',
)

ONE_HOP_TEMPLATES = (
    'What is the {attribute} of {entity}?',
    'Name the {attribute} of {entity}.',
)
TWO_HOP_TEMPLATE = 'What is the {attribute} of the ally of {entity}?'

SOURCE_ONE_HOP = 'synthetic-1hop'
SOURCE_TWO_HOP = 'synthetic-2hop'


def fact_doc_id(entity: str, attribute: str) -> str:
    return f'{entity.lower()}-{attribute}'


def fact_query(entity: str, attribute: str) -> str:
    return f'{entity} {attribute}'


def fact_document(entity: str, attribute: str, value: str) -> Document:
    return Document(
        doc_id=fact_doc_id(entity, attribute),
        title=f'{entity} {attribute}',
        body=f'The {attribute} of {entity} is {value}.',
    )


def world_documents(world: SyntheticWorld) -> list[Document]:
    return [fact_document(entity, attribute, value)
            for (entity, attribute), value in world.facts.items()
            if (entity, attribute) not in world.unindexed]


def _names(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    names = []
    reserved = {word.capitalize() for word in ATTRIBUTES}
    while len(names) < count:
        n_syllables = int(rng.integers(2, 4))
        picks = rng.integers(0, len(SYLLABLES), size=n_syllables)
        name = ''.join(SYLLABLES[i] for i in picks).capitalize()
        if name in taken or name in reserved:
            continue
        taken.add(name)
        names.append(name)
    return names


def generate_world(seed: int, n_entities: int, internal_fraction: float, *,
                   two_hop_fraction: float = 0.0, paraphrases: int = 1,
                   external_coverage: float = 1.0
                   ) -> tuple[SyntheticWorld, list[TaskInstance], list[Document]]:
    """
    Build a world, its question set and its corpus.

    A task is labeled easy iff every fact it needs is internal.
    ``external_coverage`` is the share of non-internal facts that get a
    document; internal facts always do.
    """
    if n_entities < 2:
        raise ValueError('n_entities must be at least 2')
    if not 0.0 <= internal_fraction <= 1.0:
        raise ValueError('internal_fraction must lie in [0, 1]')
    if not 0.0 <= two_hop_fraction <= 1.0:
        raise ValueError('two_hop_fraction must lie in [0, 1]')
    if not 0.0 <= external_coverage <= 1.0:
        raise ValueError('external_coverage must lie in [0, 1]')
    if not 1 <= paraphrases <= len(ONE_HOP_TEMPLATES):
        raise ValueError(f'paraphrases must lie in [1, {len(ONE_HOP_TEMPLATES)}]')

    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    entities = _names(rng, n_entities, taken)

    facts: dict[FactKey, str] = {}
    for entity in entities:
        values = _names(rng, len(PLAIN_ATTRIBUTES), taken)
        for attribute, value in zip(PLAIN_ATTRIBUTES, values):
            facts[(entity, attribute)] = value
        others = [other for other in entities if other != entity]
        facts[(entity, RELATION)] = others[int(rng.integers(0, len(others)))]

    keys = list(facts)
    n_internal = int(round(internal_fraction * len(keys)))
    order = rng.permutation(len(keys))
    internal = frozenset(keys[i] for i in order[:n_internal])

    world = SyntheticWorld(
        seed=seed,
        entities=tuple(entities),
        facts=facts,
        internal_subset=internal,
        question_templates={
            'one_hop': ONE_HOP_TEMPLATES[:paraphrases],
            'two_hop': (TWO_HOP_TEMPLATE,),
        },
    )

    def label(needed) -> Label:
        return Label.EASY if world.is_internal(needed) else Label.HARD

    tasks: list[TaskInstance] = []
    for (entity, attribute), value in facts.items():
        for number, template in enumerate(ONE_HOP_TEMPLATES[:paraphrases]):
            needed = ((entity, attribute),)
            tasks.append(TaskInstance(
                task_id=f'{fact_doc_id(entity, attribute)}-{number}',
                question=template.format(attribute=attribute, entity=entity),
                golds=(value,),
                label=label(needed),
                source=SOURCE_ONE_HOP,
                facts=needed,
            ))

    candidates = [(entity, attribute) for entity in entities for attribute in PLAIN_ATTRIBUTES]
    n_two_hop = int(round(two_hop_fraction * len(candidates)))
    for i in sorted(rng.permutation(len(candidates))[:n_two_hop]):
        entity, attribute = candidates[i]
        ally = facts[(entity, RELATION)]
        needed = ((entity, RELATION), (ally, attribute))
        tasks.append(TaskInstance(
            task_id=f'{fact_doc_id(entity, RELATION)}-{attribute}',
            question=TWO_HOP_TEMPLATE.format(attribute=attribute, entity=entity),
            golds=(facts[(ally, attribute)],),
            label=label(needed),
            source=SOURCE_TWO_HOP,
            facts=needed,
        ))

    external = [key for key in keys if key not in internal]
    n_indexed = int(round(external_coverage * len(external)))
    unindexed = frozenset(external[i] for i in rng.permutation(len(external))[n_indexed:])
    world = replace(world, unindexed=unindexed)

    docs = world_documents(world)
    logger.info('world generated seed=%d entities=%d facts=%d internal=%d unindexed=%d tasks=%d',
                seed, len(entities), len(facts), len(internal), len(unindexed), len(tasks))
    return world, tasks, docs
