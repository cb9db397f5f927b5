import json
import math
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from dataset.domain import Label, TaskInstance
from environment.domain import Document
from environment.index import index_corpus
from environment.world import generate_world
from kb_harness.utils import load_records
from policy.scripted import ScriptedPolicy
from policy.seeding import SeedingConfig, seed_toy_policy
from rollout.domain import RolloutConfig

from .domain import EvalMode, EvalRecord, EvalReport, ReportFormat, SubsetStats
from .report import emit_report, parse_report, write_pdf
from .runner import aggregate, evaluate
from .serializers import EvalRecordSerializer

DOCS = [
    Document('france-capital', 'France capital', 'The capital of France is Paris.'),
    Document('peru-capital', 'Peru capital', 'The capital of Peru is Lima.'),
    Document('france-river', 'France river', 'The river of France is Seine.'),
]
ENV = index_corpus(DOCS)
CFG = RolloutConfig(group_size=2)

TASKS = [
    TaskInstance('t1', 'What is the capital of France?', ('Paris',), Label.EASY, 'nq'),
    TaskInstance('t2', 'What is the capital of Peru?', ('Lima',), Label.HARD, 'nq'),
    TaskInstance('t3', 'What is the river of France?', ('Seine',), Label.EASY, 'hotpot'),
    TaskInstance('t4', 'Who founded Peru?', ('Pizarro',), Label.HARD, 'hotpot'),
]

MIXED = ScriptedPolicy({'questions': {
    TASKS[0].question: ['<think>I know</think><answer>Paris</answer>'],
    TASKS[1].question: ['<think>look</think><search>Peru capital</search>',
                        '<think>found</think><answer>Lima</answer>'],
    TASKS[2].question: ['<think>I know</think><answer>Loire</answer>'],
    TASKS[3].question: ['<think>look</think><search>Peru founder</search>',
                        '<think>again</think><search>Peru history</search>',
                        '<think>unsure</think><answer>Lima</answer>'],
}})


def mixed_report():
    return evaluate(MIXED, ENV, TASKS, CFG, seed=0)


class EvaluateTests(SimpleTestCase):

    def test_correct_without_search(self):
        tasks = [TaskInstance(f'p{i}', f'Capital {i}?', ('Paris',), label, 'nq')
                 for i, label in enumerate((Label.EASY, Label.HARD))]
        report = evaluate(ScriptedPolicy(['<think>sure</think><answer>Paris</answer>']),
                          ENV, tasks, CFG, seed=0)
        for stats in report.per_subset.values():
            self.assertEqual((stats.em_mean, stats.rt_mean), (1.0, 0.0))
        self.assertEqual((report.overall.em_mean, report.overall.rt_mean), (1.0, 0.0))

    def test_one_search_on_unanswerable_tasks(self):
        tasks = [TaskInstance('u1', 'Who is Zorblat?', ('Quux',), Label.HARD, 'nq')]
        policy = ScriptedPolicy(['<think>look</think><search>Zorblat</search>',
                                 '<think>nothing</think><answer>unknown</answer>'])
        report = evaluate(policy, ENV, tasks, CFG, seed=0)
        self.assertEqual(report.per_subset[('nq', 'hard')], SubsetStats(0.0, 1.0, 1))

    def test_mixed_set_matches_hand_count(self):
        report = mixed_report()
        self.assertEqual(dict(report.per_subset), {
            ('nq', 'easy'): SubsetStats(1.0, 0.0, 1),
            ('nq', 'hard'): SubsetStats(1.0, 1.0, 1),
            ('hotpot', 'easy'): SubsetStats(0.0, 0.0, 1),
            ('hotpot', 'hard'): SubsetStats(0.0, 2.0, 1),
        })
        self.assertEqual(report.overall, SubsetStats(0.5, 0.75, 4))

    def test_overall_weights_subsets_equally(self):
        records = [EvalRecord(f'e{i}', 'nq', 'easy', EvalMode.AGENT, 'a', 1, 0) for i in range(3)]
        records.append(EvalRecord('h0', 'nq', 'hard', EvalMode.AGENT, 'b', 0, 2))
        report = aggregate(records)
        self.assertEqual(report.overall, SubsetStats(0.5, 1.0, 4))

    def test_em_recomputed_from_the_log(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'eval.jsonl'
            report = evaluate(MIXED, ENV, TASKS, CFG, seed=0, log_path=path)
            records = load_records(path, EvalRecordSerializer)
        self.assertEqual(aggregate(records), report)
        for key, stats in report.per_subset.items():
            ems = [r.em for r in records if (r.source, r.label) == key]
            self.assertEqual(math.fsum(ems) / len(ems), stats.em_mean)

    def test_unlabeled_tasks_are_rejected(self):
        with self.assertRaises(ValueError):
            evaluate(MIXED, ENV, [TaskInstance('x', 'q?', ('a',))], CFG, seed=0)

    def test_direct_mode_never_searches(self):
        report = evaluate(ScriptedPolicy([' Paris']), ENV, TASKS[:1], CFG, seed=0, mode=EvalMode.DIRECT)
        self.assertEqual(report.overall, SubsetStats(1.0, 0.0, 1))
        self.assertEqual(report.mode, EvalMode.DIRECT)

    def test_rag_mode_searches_once(self):
        report = evaluate(ScriptedPolicy([' So the answer is Paris.']), ENV, TASKS[:1], CFG,
                          seed=0, mode=EvalMode.RAG)
        self.assertEqual(report.overall, SubsetStats(1.0, 1.0, 1))


class ToyEvaluateTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        world, tasks, docs = generate_world(4, 4, 0.5)
        cls.env = index_corpus(docs)
        cls.tasks = tasks
        cls.policy = seed_toy_policy(world, tasks, cls.env, SeedingConfig(feature_dim=256, epochs=20))

    def test_reproducible(self):
        first = evaluate(self.policy, self.env, self.tasks, CFG, seed=9)
        self.assertEqual(first, evaluate(self.policy, self.env, self.tasks, CFG, seed=9))
        self.assertEqual(first, evaluate(self.policy, self.env, self.tasks, CFG, seed=9, workers=3))


class ReportTests(SimpleTestCase):

    def test_rows_and_column_order(self):
        table = emit_report(mixed_report(), ReportFormat.TABLE)
        lines = table.splitlines()
        self.assertEqual(lines[0].split(), ['subset', 'EM', 'RT', 'n'])
        self.assertEqual([line.split()[0] for line in lines[1:]],
                         ['hotpot/easy', 'hotpot/hard', 'nq/easy', 'nq/hard', 'overall'])
        self.assertEqual(lines[-1].split(), ['overall', '0.5000', '0.7500', '4'])

    def test_jsonl_round_trip(self):
        report = mixed_report()
        text = emit_report(report, ReportFormat.JSONL)
        self.assertEqual(len(text.splitlines()), 5)
        self.assertEqual(json.loads(text.splitlines()[-1])['subset'], 'overall')
        self.assertEqual(parse_report(text), report)

    def test_identical_reports_emit_identical_text(self):
        for fmt in (ReportFormat.TABLE, ReportFormat.JSONL):
            self.assertEqual(emit_report(mixed_report(), fmt), emit_report(mixed_report(), fmt))

    def test_pdf_export(self):
        report = mixed_report()
        with tempfile.TemporaryDirectory() as tmp:
            first = write_pdf(report, Path(tmp) / 'a.pdf').read_bytes()
            second = write_pdf(report, Path(tmp) / 'b.pdf').read_bytes()
        self.assertTrue(first.startswith(b'%PDF'))
        self.assertEqual(first, second)

    def test_report_requires_subsets(self):
        with self.assertRaises(ValueError):
            EvalReport({}, SubsetStats(0.0, 0.0, 1))
