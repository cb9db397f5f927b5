import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from django.test import SimpleTestCase
from hypothesis import given
from hypothesis import strategies as st

from environment import index as environment_index
from environment.index import index_corpus
from environment.world import generate_world
from policy.scripted import ScriptedPolicy
from policy.seeding import SeedingConfig, seed_toy_policy
from rollout import engine as rollout_engine

from .balance import build_balanced, build_mixture, split_by_label
from .domain import DatasetMix, Label, TaskInstance
from .exceptions import InsufficientPool
from .probing import (
    ProbeConfig, extract_probe_answer, label_question, label_tasks, load_exemplars,
    probe_dataset, probe_prompt, probe_question, read_probe_cache, synthetic_exemplars,
    write_probe_cache,
)
from .serializers import TaskInstanceSerializer

SLOW = os.environ.get('KBH_SLOW_TESTS') == '1'

TASK = TaskInstance('france-capital-0', 'What is the capital of France?', ('Paris',))


def pool(label, count, prefix=None):
    prefix = prefix or label.value
    return [TaskInstance(f'{prefix}-{i}', f'Question {prefix} {i}?', (f'a{i}',), label=label)
            for i in range(count)]


class ExemplarTests(SimpleTestCase):

    def test_default_asset_holds_three_exemplars(self):
        exemplars = load_exemplars()
        self.assertEqual(len(exemplars), 3)
        for exemplar in exemplars:
            self.assertTrue(exemplar.startswith('Question:'))
            self.assertIn('So the answer is', exemplar)

    def test_synthetic_exemplars_use_internal_facts(self):
        world, _tasks, _docs = generate_world(1, 6, 0.5)
        exemplars = synthetic_exemplars(world)
        self.assertEqual(len(exemplars), 3)
        for exemplar in exemplars:
            self.assertTrue(any(f'of {entity} is {world.facts[(entity, attribute)]}' in exemplar
                                for entity, attribute in world.internal_subset))

    def test_prompt_ends_on_the_answer_cue(self):
        prompt = probe_prompt(TASK.question, ('Question: a?\nAnswer: b.',))
        self.assertTrue(prompt.startswith('Question: a?\nAnswer: b.\n\n'))
        self.assertTrue(prompt.endswith(f'Question: {TASK.question}\nAnswer:'))


class ExtractProbeAnswerTests(SimpleTestCase):

    def test_plain_answer(self):
        self.assertEqual(extract_probe_answer(' Paris'), 'Paris')

    def test_scaffold_is_stripped(self):
        self.assertEqual(
            extract_probe_answer('France is in Europe.\nIts seat is Paris. So the answer is Paris.'),
            'Paris')

    def test_empty_generation(self):
        self.assertEqual(extract_probe_answer('  \n'), '')


class ProbeTests(SimpleTestCase):

    def config(self, n=4):
        return ProbeConfig(n_samples=n, exemplars=load_exemplars())

    def test_gold_answer_every_time(self):
        policy = ScriptedPolicy([' Paris'])
        probe = probe_question(policy, TASK, self.config(), seed=0)
        self.assertEqual(probe, [('Paris', 1)] * 4)
        self.assertEqual(label_question(probe), Label.EASY)

    def test_always_wrong(self):
        policy = ScriptedPolicy([' So the answer is Lyon.'])
        probe = probe_question(policy, TASK, self.config(), seed=0)
        self.assertEqual(probe, [('Lyon', 0)] * 4)
        self.assertEqual(label_question(probe), Label.HARD)

    def test_empty_generation_scores_zero(self):
        policy = ScriptedPolicy(['\n'])
        self.assertEqual(probe_question(policy, TASK, self.config(2), seed=0), [('', 0), ('', 0)])

    def test_at_least_once_rule(self):
        self.assertEqual(label_question([('a', 0), ('b', 0), ('c', 1), ('d', 0)]), Label.EASY)
        self.assertEqual(label_question([('a', 0)] * 4), Label.HARD)
        self.assertEqual(label_question([('a', 1)]), Label.EASY)

    def test_empty_probe_is_rejected(self):
        with self.assertRaises(ValueError):
            label_question([])

    @given(st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=12))
    def test_label_matches_any(self, ems):
        expected = Label.EASY if any(ems) else Label.HARD
        self.assertEqual(label_question([('x', em) for em in ems]), expected)

    def test_config_rejects_zero_samples(self):
        with self.assertRaises(ValueError):
            ProbeConfig(n_samples=0)

    def test_label_tasks_requires_a_probe(self):
        with self.assertRaises(KeyError):
            label_tasks([TASK], {})


class ToyProbeTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.world, cls.tasks, docs = generate_world(2, 4, 0.5)
        cls.index = index_corpus(docs)
        cls.policy = seed_toy_policy(cls.world, cls.tasks, cls.index,
                                     SeedingConfig(feature_dim=256, epochs=20))
        cls.cfg = ProbeConfig(n_samples=3, exemplars=synthetic_exemplars(cls.world))

    def test_fixed_seed_reproduces_samples(self):
        first = probe_dataset(self.policy, self.tasks, self.cfg, seed=5)
        second = probe_dataset(self.policy, self.tasks, self.cfg, seed=5)
        self.assertEqual(first, second)
        self.assertEqual(label_tasks(self.tasks, first), label_tasks(self.tasks, second))

    def test_threaded_probing_matches_serial(self):
        serial = probe_dataset(self.policy, self.tasks, self.cfg, seed=5)
        threaded = probe_dataset(self.policy, self.tasks, self.cfg, seed=5, workers=4)
        self.assertEqual(serial, threaded)

    def test_probing_never_retrieves(self):
        with mock.patch.object(environment_index, 'retrieve', wraps=environment_index.retrieve) as env_retrieve, \
                mock.patch.object(rollout_engine, 'retrieve', wraps=rollout_engine.retrieve) as engine_retrieve:
            probe_dataset(self.policy, self.tasks, self.cfg, seed=5)
        self.assertEqual(env_retrieve.call_count, 0)
        self.assertEqual(engine_retrieve.call_count, 0)

    def test_probe_cache_relabels_without_generation(self):
        probes = probe_dataset(self.policy, self.tasks, self.cfg, seed=5)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'probe.jsonl'
            self.assertEqual(write_probe_cache(path, probes), len(self.tasks))
            cached = read_probe_cache(path)
        self.assertEqual(cached, probes)
        self.assertEqual(label_tasks(self.tasks, cached), label_tasks(self.tasks, probes))


class BalanceTests(SimpleTestCase):

    def test_exhaustive_take(self):
        easy, hard = pool(Label.EASY, 2), pool(Label.HARD, 2)
        tasks = build_balanced(easy, hard, 2, seed=0)
        self.assertEqual(sorted(t.task_id for t in tasks), sorted(t.task_id for t in easy + hard))

    def test_short_side_is_named(self):
        with self.assertRaises(InsufficientPool) as caught:
            build_balanced(pool(Label.EASY, 5), pool(Label.HARD, 1), 2, seed=0)
        self.assertEqual(caught.exception.side, 'hard')

    def test_seed_fixes_the_order(self):
        easy, hard = pool(Label.EASY, 30), pool(Label.HARD, 30)
        first = build_balanced(easy, hard, 10, seed=4)
        self.assertEqual(first, build_balanced(easy, hard, 10, seed=4))
        self.assertNotEqual([t.task_id for t in first],
                            [t.task_id for t in build_balanced(easy, hard, 10, seed=5)])

    @given(st.integers(min_value=0, max_value=20), st.integers(min_value=0, max_value=2**32 - 1))
    def test_balanced_counts_are_exact(self, n_per_class, seed):
        tasks = build_balanced(pool(Label.EASY, 20), pool(Label.HARD, 20), n_per_class, seed)
        self.assertEqual(len(tasks), 2 * n_per_class)
        easy, hard = split_by_label(tasks)
        self.assertEqual(len(easy), n_per_class)
        self.assertEqual(len(hard), n_per_class)
        self.assertEqual(len({t.task_id for t in tasks}), len(tasks))

    def test_single_class_mixtures(self):
        easy, hard = pool(Label.EASY, 6), pool(Label.HARD, 6)
        self.assertTrue(all(t.label == Label.EASY for t in build_mixture(easy, hard, DatasetMix.EASY, 5, 0)))
        self.assertTrue(all(t.label == Label.HARD for t in build_mixture(easy, hard, DatasetMix.HARD, 5, 0)))

    def test_odd_balanced_size_is_rejected(self):
        with self.assertRaises(ValueError):
            build_mixture(pool(Label.EASY, 6), pool(Label.HARD, 6), DatasetMix.BALANCED, 5, 0)

    def test_mislabeled_pool_is_rejected(self):
        with self.assertRaises(ValueError):
            build_balanced(pool(Label.HARD, 3, 'x'), pool(Label.HARD, 3), 1, seed=0)

    def test_dataset_file_round_trip(self):
        tasks = build_balanced(pool(Label.EASY, 3), pool(Label.HARD, 3), 3, seed=1)
        records = [TaskInstanceSerializer(task).data for task in tasks]
        serializer = TaskInstanceSerializer(data=records, many=True)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save(), tasks)


@unittest.skipUnless(SLOW, 'set KBH_SLOW_TESTS=1 to run dataset construction on the synthetic world')
class BoundaryRecoveryTests(SimpleTestCase):
    """
    Probing a policy seeded on exactly the internal facts recovers the
    generator's easy/hard labels.
    """

    def test_labels_match_the_generator(self):
        world, tasks, docs = generate_world(7, 40, 0.5)
        policy = seed_toy_policy(world, tasks, index_corpus(docs), SeedingConfig(feature_dim=2048))
        cfg = ProbeConfig(n_samples=5, exemplars=synthetic_exemplars(world))
        probes = probe_dataset(policy, tasks, cfg, seed=7, workers=4)
        labeled = label_tasks(tasks, probes)
        agreement = sum(a.label == b.label for a, b in zip(tasks, labeled)) / len(tasks)
        self.assertGreaterEqual(agreement, 0.95)

        easy, hard = split_by_label(labeled)
        n = min(len(easy), len(hard))
        balanced = build_balanced(easy, hard, n, seed=7)
        self.assertEqual(sum(t.label == Label.EASY for t in balanced), n)
        self.assertEqual(sum(t.label == Label.HARD for t in balanced), n)
