import io
import json
import tempfile
from pathlib import Path
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from dataset.domain import Label
from dataset.serializers import TaskInstanceSerializer
from evaluation.report import parse_report
from grpo.serializers import BatchRecordSerializer
from kb_harness.utils import load_records, read_json, read_jsonl

from .config import resolve_config
from .main import main

TOY_FLAGS = [
    '--n-entities', '4', '--feature-dim', '64', '--pretrain-epochs', '5',
    '--group-size', '2', '--batch-tasks', '2', '--max-turns', '3', '--max-tokens', '16',
    '--n-per-class', '2', '--workers', '1',
]


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


class ConfigTests(SimpleTestCase):

    def test_defaults(self):
        cfg = resolve_config({}, environ={})
        self.assertEqual(cfg.max_turns, 6)
        self.assertEqual(cfg.reward_variant, 'full')

    def test_later_layers_win(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.env'
            path.write_text('MAX_TURNS=3\nK_DOCS=5\nSEED=1\n', encoding='utf-8')
            cfg = resolve_config({'seed': '9'}, str(path), environ={'KBH_K_DOCS': '2', 'KBH_SEED': '4'})
        self.assertEqual((cfg.max_turns, cfg.k_docs, cfg.seed), (3, 2, 9))

    def test_values_take_the_default_type(self):
        cfg = resolve_config({'temperature': '0.5', 'steps': '7'}, environ={})
        self.assertEqual(cfg.temperature, 0.5)
        self.assertIsInstance(cfg.steps, int)

    def test_uncoercible_value_is_a_usage_error(self):
        with self.assertRaises(CommandError) as caught:
            resolve_config({'max_turns': 'abc'}, environ={})
        self.assertEqual(caught.exception.returncode, 1)
        self.assertIn('--max-turns', str(caught.exception))

    def test_unknown_choice_is_a_usage_error(self):
        with self.assertRaises(CommandError):
            resolve_config({'reward_variant': 'bogus'}, environ={})

    def test_unknown_config_file_key(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.env'
            path.write_text('NOT_A_KEY=1\n', encoding='utf-8')
            with self.assertRaises(CommandError):
                resolve_config({}, str(path), environ={})

    def test_typed_configs(self):
        cfg = resolve_config({'group_size': '4', 'clip_eps': '0.1', 'reward_variant': 'no_kb'}, environ={})
        self.assertEqual(cfg.rollout().group_size, 4)
        self.assertEqual(cfg.optim().clip_eps, 0.1)
        self.assertEqual(cfg.reward().variant, 'no_kb')

    def test_invalid_typed_config_is_a_usage_error(self):
        cfg = resolve_config({'group_size': '1'}, environ={})
        with self.assertRaises(CommandError):
            cfg.rollout()


class MainTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def gen_world(self, log_dir):
        code, _out, err = run('gen-world', '--seed', '3', '--n-entities', '4', '--log-dir', str(log_dir))
        self.assertEqual(code, 0, err)
        return log_dir

    def test_no_subcommand(self):
        code, _out, err = run()
        self.assertEqual(code, 1)
        self.assertIn('usage:', err)

    def test_unknown_subcommand(self):
        code, _out, err = run('frobnicate')
        self.assertEqual(code, 1)
        self.assertIn('frobnicate', err)

    def test_unknown_flag(self):
        code, _out, err = run('eval', '--no-such-flag', '1')
        self.assertEqual(code, 1)
        self.assertIn('--no-such-flag', err)
        self.assertIn('usage:', err)

    def test_missing_input_is_a_runtime_error(self):
        code, _out, err = run('eval', '--tasks', str(self.dir / 'none.jsonl'),
                              '--corpus', str(self.dir / 'none.jsonl'),
                              '--policy', f'scripted:{self.dir / "none.txt"}',
                              '--log-dir', str(self.dir))
        self.assertEqual(code, 2)
        self.assertIn('none', err)

    def test_gen_world_writes_artifacts_and_manifest(self):
        world = self.gen_world(self.dir)
        for name in ('world.json', 'tasks.jsonl', 'corpus.jsonl', 'manifest.json'):
            self.assertTrue((world / name).is_file(), name)
        manifest = read_json(world / 'manifest.json')
        self.assertEqual(manifest['command'], 'gen-world')
        self.assertEqual(manifest['seed'], 3)
        self.assertEqual(manifest['config']['n_entities'], 4)
        self.assertEqual(len(read_json(world / 'world.json')['tasks']),
                         len(list(read_jsonl(world / 'tasks.jsonl'))))

    def test_eval_happy_path(self):
        world = self.gen_world(self.dir / 'world')
        script = self.dir / 'script.txt'
        script.write_text('<think>I know</think><answer>nobody</answer>\n', encoding='utf-8')
        code, out, err = run('eval', '--tasks', str(world / 'tasks.jsonl'),
                             '--corpus', str(world / 'corpus.jsonl'),
                             '--policy', f'scripted:{script}', '--seed', '7',
                             '--log-dir', str(self.dir / 'eval'), '--report-format', 'jsonl')
        self.assertEqual(code, 0, err)
        report = parse_report(out)
        self.assertEqual(report.overall.em_mean, 0.0)
        self.assertEqual(report.overall.rt_mean, 0.0)
        self.assertTrue((self.dir / 'eval' / 'eval.jsonl').is_file())

    def test_eval_writes_pdf(self):
        world = self.gen_world(self.dir / 'world')
        script = self.dir / 'script.txt'
        script.write_text('<think>I know</think><answer>nobody</answer>\n', encoding='utf-8')
        out_path = self.dir / 'report.pdf'
        code, _out, err = run('eval', '--tasks', str(world / 'tasks.jsonl'),
                              '--corpus', str(world / 'corpus.jsonl'),
                              '--policy', f'scripted:{script}', '--log-dir', str(self.dir / 'eval'),
                              '--report-format', 'pdf', '--out', str(out_path))
        self.assertEqual(code, 0, err)
        self.assertTrue(out_path.read_bytes().startswith(b'%PDF'))

    def test_build_corpus(self):
        world = self.gen_world(self.dir / 'world')
        out = self.dir / 'corpus.jsonl'
        code, stdout, err = run('build-corpus', '--corpus', str(world / 'corpus.jsonl'),
                                '--out', str(out), '--log-dir', str(self.dir))
        self.assertEqual(code, 0, err)
        self.assertIn('docs=16', stdout)
        self.assertEqual(out.read_bytes(), (world / 'corpus.jsonl').read_bytes())

    def test_relabel_from_cache_and_build_dataset(self):
        tasks_path = self.gen_world(self.dir / 'world') / 'tasks.jsonl'
        tasks = load_records(tasks_path, TaskInstanceSerializer)
        cache = self.dir / 'probe.jsonl'
        cache.write_text(''.join(
            json.dumps({'task_id': t.task_id, 'samples': [{'answer': 'x', 'em': int(i % 2 == 0)}]}) + '\n'
            for i, t in enumerate(tasks)), encoding='utf-8')

        labeled_path = self.dir / 'labeled.jsonl'
        code, out, err = run('probe', '--tasks', str(tasks_path), '--probe-cache', str(cache),
                             '--out', str(labeled_path), '--log-dir', str(self.dir))
        self.assertEqual(code, 0, err)
        labeled = load_records(labeled_path, TaskInstanceSerializer)
        self.assertEqual([t.label for t in labeled],
                         [Label.EASY if i % 2 == 0 else Label.HARD for i in range(len(tasks))])

        dataset_path = self.dir / 'dataset.jsonl'
        code, _out, err = run('build-dataset', '--tasks', str(labeled_path), '--n-per-class', '3',
                              '--seed', '1', '--dataset', str(dataset_path), '--log-dir', str(self.dir))
        self.assertEqual(code, 0, err)
        dataset = load_records(dataset_path, TaskInstanceSerializer)
        self.assertEqual(sum(t.label == Label.EASY for t in dataset), 3)
        self.assertEqual(sum(t.label == Label.HARD for t in dataset), 3)

    def test_short_pool_is_a_runtime_error(self):
        tasks_path = self.gen_world(self.dir / 'world') / 'tasks.jsonl'
        code, _out, err = run('build-dataset', '--tasks', str(tasks_path), '--n-per-class', '20',
                              '--log-dir', str(self.dir))
        self.assertEqual(code, 2)
        self.assertIn('easy', err)

    def test_rollout_and_export_batch(self):
        world = self.gen_world(self.dir / 'world')
        script = self.dir / 'script.txt'
        script.write_text('<think>look</think><search>capital</search>\n'
                          '<think>done</think><answer>nobody</answer>\n', encoding='utf-8')
        common = ['--tasks', str(world / 'tasks.jsonl'), '--corpus', str(world / 'corpus.jsonl'),
                  '--policy', f'scripted:{script}', '--group-size', '2', '--log-dir', str(self.dir)]
        code, _out, err = run('rollout', *common)
        self.assertEqual(code, 0, err)
        lines = list(read_jsonl(self.dir / 'trajectories.jsonl'))
        self.assertEqual(len(lines), 2 * len(list(read_jsonl(world / 'tasks.jsonl'))))
        self.assertTrue(all(line['retrieval_count'] == 1 for line in lines))
        self.assertTrue((self.dir / 'groups.jsonl').is_file())

        code, _out, err = run('export-batch', *common, '--batch-tasks', '2')
        self.assertEqual(code, 0, err)
        records = load_records(self.dir / 'batch.jsonl', BatchRecordSerializer)
        self.assertEqual(len(records), 4)
        self.assertTrue(all(record['advantage'] == 0.0 for record in records))

    def test_train_toy_is_deterministic(self):
        logs = []
        for name in ('a', 'b'):
            log_dir = self.dir / name
            code, _out, err = run('train-toy', '--seed', '7', '--steps', '2', *TOY_FLAGS,
                                  '--log-dir', str(log_dir))
            self.assertEqual(code, 0, err)
            self.assertTrue((log_dir / 'policy.npz').is_file())
            logs.append((log_dir / 'train.jsonl').read_bytes())
        self.assertEqual(len(logs[0].splitlines()), 2)
        self.assertEqual(logs[0], logs[1])

    def test_train_toy_rejects_other_policies(self):
        code, _out, err = run('train-toy', '--policy', 'remote:http://localhost:1', '--log-dir', str(self.dir))
        self.assertEqual(code, 1)
        self.assertIn('--policy', err)

    def test_environment_overrides_reach_the_manifest(self):
        with mock.patch.dict('os.environ', {'KBH_N_ENTITIES': '5'}):
            code, _out, err = run('gen-world', '--log-dir', str(self.dir))
        self.assertEqual(code, 0, err)
        self.assertEqual(read_json(self.dir / 'manifest.json')['config']['n_entities'], 5)


class ManagementCommandTests(SimpleTestCase):

    def test_call_command_runs_a_subcommand(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = io.StringIO()
            call_command('gen_world', '--seed', '2', '--n-entities', '3', '--log-dir', tmp,
                         stdout=out, stderr=io.StringIO())
            self.assertTrue((Path(tmp) / 'world.json').is_file())
