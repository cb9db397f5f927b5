import json
import math
import random
import tempfile
from collections import Counter
from dataclasses import replace
from pathlib import Path

from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from dataset.domain import Label
from kb_harness.exceptions import RecordError
from kb_harness.utils import dump_records, load_records

from .domain import Document, RetrievalResult
from .exceptions import DuplicateIdError
from .index import (
    NO_RESULTS,
    analyze,
    format_observation,
    index_corpus,
    observation_body,
    retrieve,
)
from .serializers import DocumentSerializer, WorldDumpSerializer
from .world import RELATION, SOURCE_TWO_HOP, fact_doc_id, fact_query, generate_world

WORDS = ['river', 'castle', 'north', 'iron', 'glass', 'king', 'salt', 'wind',
         'stone', 'harbor', 'tower', 'moss', 'ember', 'frost', 'lake', 'crown']


def random_corpus(n_docs, seed=0):
    rng = random.Random(seed)
    docs = []
    for i in range(n_docs):
        title = ' '.join(rng.choice(WORDS) for _ in range(rng.randint(1, 3)))
        body = ' '.join(rng.choice(WORDS) for _ in range(rng.randint(3, 20))) + '.'
        docs.append(Document(f'doc-{i:03d}', title.title(), body))
    return docs


def brute_force_ranking(docs, query, k, k1=1.2, b=0.75):
    """
    Score every document against the query from scratch.
    """
    texts = [analyze(f'{d.title} {d.body}') for d in docs]
    n = len(docs)
    avgdl = sum(len(t) for t in texts) / n
    scored = []
    for doc, terms in zip(docs, texts):
        counts = Counter(terms)
        score = 0.0
        for term in analyze(query):
            tf = counts[term]
            if not tf:
                continue
            df = sum(1 for other in texts if term in other)
            weight = max(0.0, math.log(1.0 + (n - df + 0.5) / (df + 0.5)))
            score += weight * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len(terms) / avgdl))
        if score > 0.0:
            scored.append((doc.doc_id, score))
    scored.sort(key=lambda hit: (-hit[1], hit[0]))
    return scored[:k]


class IndexCorpusTests(SimpleTestCase):

    def test_empty_corpus(self):
        index = index_corpus([])
        self.assertEqual(index.n_docs, 0)
        self.assertEqual(retrieve(index, 'anything at all', 3).hits, ())

    def test_shared_term_posting_list(self):
        index = index_corpus([
            Document('a', 'Salt', 'salt road'),
            Document('b', 'Iron', 'salt mine'),
            Document('c', 'Glass', 'salt flats'),
        ])
        self.assertEqual(len(index.postings['salt']), 3)
        self.assertEqual(index.document_frequency('salt'), 3)

    def test_duplicate_ids_rejected(self):
        with self.assertRaises(DuplicateIdError) as ctx:
            index_corpus([Document('a', 'x', 'y'), Document('a', 'z', 'w')])
        self.assertEqual(ctx.exception.doc_id, 'a')

    def test_empty_body_rejected(self):
        with self.assertRaises(ValueError):
            Document('a', 'title', '')

    def test_document_frequencies_match_recount(self):
        docs = random_corpus(100)
        index = index_corpus(docs)
        for word in WORDS:
            expected = sum(1 for d in docs if word in analyze(f'{d.title} {d.body}'))
            self.assertEqual(index.document_frequency(word), expected)

    def test_index_is_read_only(self):
        index = index_corpus(random_corpus(5))
        with self.assertRaises(TypeError):
            index.postings['new'] = ()


class RetrieveTests(SimpleTestCase):

    def test_no_corpus_terms(self):
        index = index_corpus(random_corpus(10))
        self.assertEqual(retrieve(index, 'zebra quartz', 3).hits, ())

    def test_single_doc_title_query(self):
        index = index_corpus([Document('only', 'Veltor capital', 'The capital of Veltor is Drassa.')])
        hits = retrieve(index, 'Veltor capital', 3).hits
        self.assertEqual(hits[0][0], 'only')
        self.assertGreater(hits[0][1], 0.0)

    def test_k_must_be_positive(self):
        with self.assertRaises(ValueError):
            retrieve(index_corpus([]), 'q', 0)

    def test_matches_brute_force_scorer(self):
        docs = random_corpus(100, seed=3)
        index = index_corpus(docs)
        rng = random.Random(11)
        for _ in range(20):
            query = ' '.join(rng.choice(WORDS + ['zebra']) for _ in range(rng.randint(1, 4)))
            k = rng.randint(1, 10)
            with self.subTest(query=query, k=k):
                self.assertEqual(list(retrieve(index, query, k).hits),
                                 brute_force_ranking(docs, query, k))

    def test_tie_break_by_doc_id(self):
        index = index_corpus([
            Document('b', 'Frost', 'same text'),
            Document('a', 'Frost', 'same text'),
        ])
        self.assertEqual([doc_id for doc_id, _ in retrieve(index, 'frost', 2).hits], ['a', 'b'])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=5), st.integers(1, 20))
    def test_scores_non_increasing(self, words, k):
        index = index_corpus(random_corpus(40, seed=5))
        result = retrieve(index, ' '.join(words), k)
        self.assertLessEqual(len(result.hits), k)
        scores = [score for _, score in result.hits]
        self.assertEqual(scores, sorted(scores, reverse=True))
        self.assertEqual(result, retrieve(index, ' '.join(words), k))


class FormatObservationTests(SimpleTestCase):

    def setUp(self):
        self.docs = [
            Document('a', 'Alpha', 'x' * 40),
            Document('b', 'Beta', 'y' * 40),
            Document('c', 'Gamma', 'z' * 40),
        ]
        self.index = index_corpus(self.docs)

    def test_empty_hits(self):
        result = RetrievalResult('q', (), 3)
        self.assertEqual(format_observation(result, self.index, 100),
                         '<context>No results found.</context>')

    def test_one_hit(self):
        result = RetrievalResult('q', (('a', 1.0),), 3)
        self.assertEqual(format_observation(result, self.index, 1000),
                         '<context>Title: Alpha\n' + 'x' * 40 + '</context>')

    def test_cut_at_block_boundary(self):
        blocks = [f'Title: {d.title}\n{d.body}' for d in self.docs]
        budget = len(blocks[0]) + 2 + len(blocks[1]) + 5
        result = RetrievalResult('q', (('a', 3.0), ('b', 2.0), ('c', 1.0)), 3)
        body = observation_body(result, self.index, budget)
        self.assertEqual(body.count('Title: '), 2)
        self.assertLessEqual(len(body), budget)
        self.assertEqual(body, '\n\n'.join(blocks[:2]))

    def test_oversized_first_block_is_cut(self):
        result = RetrievalResult('q', (('a', 2.0), ('b', 1.0)), 3)
        body = observation_body(result, self.index, 10)
        self.assertEqual(body, ('Title: Alpha\n' + 'x' * 40)[:10])
        self.assertNotEqual(body, NO_RESULTS)

    def test_sentinel(self):
        self.assertEqual(observation_body(RetrievalResult('q', (), 1), self.index, 5), NO_RESULTS)


class GenerateWorldTests(SimpleTestCase):

    def test_all_internal(self):
        _, tasks, _ = generate_world(1, 10, 1.0)
        self.assertTrue(all(task.label == Label.EASY for task in tasks))

    def test_none_internal(self):
        _, tasks, _ = generate_world(1, 10, 0.0, two_hop_fraction=0.5)
        self.assertTrue(all(task.label == Label.HARD for task in tasks))

    def test_deterministic(self):
        def dump(seed):
            world, tasks, docs = generate_world(seed, 12, 0.5, two_hop_fraction=0.3)
            return json.dumps({
                'world': WorldDumpSerializer((world, tasks)).data,
                'docs': DocumentSerializer(docs, many=True).data,
            }, sort_keys=True)
        self.assertEqual(dump(7), dump(7))
        self.assertNotEqual(dump(7), dump(8))

    def test_one_document_per_fact(self):
        world, _, docs = generate_world(2, 8, 0.5)
        self.assertEqual(len(docs), len(world.facts))
        self.assertEqual({d.doc_id for d in docs},
                         {fact_doc_id(e, a) for e, a in world.facts})

    def test_internal_subset_size(self):
        world, _, _ = generate_world(3, 10, 0.25)
        self.assertEqual(len(world.internal_subset), round(0.25 * len(world.facts)))
        self.assertLessEqual(world.internal_subset, set(world.facts))

    def test_questions_answerable_from_facts(self):
        world, tasks, _ = generate_world(4, 10, 0.5, two_hop_fraction=0.5, paraphrases=2)
        for task in tasks:
            value = None
            for entity, attribute in task.facts:
                self.assertIn((entity, attribute), world.facts)
                value = world.facts[(entity, attribute)]
            self.assertEqual(task.golds, (value,))

    def test_two_hop_labels(self):
        world, tasks, _ = generate_world(5, 12, 0.5, two_hop_fraction=1.0)
        two_hop = [task for task in tasks if task.source == SOURCE_TWO_HOP]
        self.assertTrue(two_hop)
        for task in two_hop:
            self.assertEqual(task.facts[0][1], RELATION)
            both = all(key in world.internal_subset for key in task.facts)
            self.assertEqual(task.label == Label.EASY, both)

    def test_every_fact_recoverable_at_rank_one(self):
        world, _, docs = generate_world(6, 50, 0.5)
        self.assertLessEqual(len(world.facts), 200)
        index = index_corpus(docs)
        for entity, attribute in world.facts:
            hits = retrieve(index, fact_query(entity, attribute), 1).hits
            self.assertEqual(hits[0][0], fact_doc_id(entity, attribute))

    def test_needs_two_entities(self):
        with self.assertRaises(ValueError):
            generate_world(0, 1, 0.5)

    def test_external_coverage(self):
        world, _, docs = generate_world(6, 20, 0.5, external_coverage=0.25)
        external = set(world.facts) - world.internal_subset
        self.assertEqual(len(world.unindexed), len(external) - round(0.25 * len(external)))
        self.assertLessEqual(world.unindexed, external)
        self.assertEqual({d.doc_id for d in docs},
                         {fact_doc_id(e, a) for e, a in world.facts if (e, a) not in world.unindexed})

    def test_coverage_leaves_facts_and_tasks_alone(self):
        full, full_tasks, _ = generate_world(7, 12, 0.5, two_hop_fraction=0.3)
        thin, thin_tasks, _ = generate_world(7, 12, 0.5, two_hop_fraction=0.3, external_coverage=0.2)
        self.assertEqual(dict(thin.facts), dict(full.facts))
        self.assertEqual(thin.internal_subset, full.internal_subset)
        self.assertEqual(thin_tasks, full_tasks)
        self.assertFalse(full.unindexed)

    def test_unindexed_fact_is_missed(self):
        world, _, docs = generate_world(8, 10, 0.5, external_coverage=0.0)
        index = index_corpus(docs)
        for entity, attribute in sorted(world.unindexed)[:10]:
            hits = retrieve(index, fact_query(entity, attribute), 3).hits
            self.assertNotIn(fact_doc_id(entity, attribute), [doc_id for doc_id, _ in hits])

    def test_coverage_bounds(self):
        with self.assertRaises(ValueError):
            generate_world(0, 4, 0.5, external_coverage=1.5)

    def test_internal_facts_stay_indexed(self):
        world, _, _ = generate_world(2, 4, 0.5)
        with self.assertRaises(ValueError):
            replace(world, unindexed=frozenset({min(world.internal_subset)}))

    def test_world_dump_round_trip(self):
        world, tasks, _ = generate_world(9, 6, 0.5, two_hop_fraction=0.5, external_coverage=0.5)
        payload = json.loads(json.dumps(WorldDumpSerializer((world, tasks)).data))
        serializer = WorldDumpSerializer(data=payload)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        loaded, loaded_tasks = serializer.save()
        self.assertEqual(dict(loaded.facts), dict(world.facts))
        self.assertEqual(loaded.internal_subset, world.internal_subset)
        self.assertEqual(loaded.unindexed, world.unindexed)
        self.assertEqual(loaded_tasks, tasks)


class CorpusFileTests(SimpleTestCase):

    def test_corpus_file_round_trip(self):
        docs = random_corpus(5)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'corpus.jsonl'
            dump_records(path, docs, DocumentSerializer)
            self.assertEqual(load_records(path, DocumentSerializer), docs)

    def test_bad_line_reports_position(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'corpus.jsonl'
            path.write_text('{"doc_id": "a", "title": "t", "body": "b"}\n{"doc_id": "b", "title": "t"}\n')
            with self.assertRaises(RecordError) as ctx:
                load_records(path, DocumentSerializer)
            self.assertEqual(ctx.exception.line, 2)
            self.assertIn('body', ctx.exception.errors)
