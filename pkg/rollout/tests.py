import json
from unittest import mock

import numpy as np
import requests
from django.test import SimpleTestCase

from dataset.domain import TaskInstance
from environment.domain import Document
from environment.index import NO_RESULTS, SEARCH_LIMIT, index_corpus
from policy.domain import GenerationResponse
from policy.remote import RemotePolicy
from policy.scripted import ScriptedPolicy
from policy.serializers import GenerationRequestSerializer
from policy.toy import AGENT_TAGS, ToyPolicy
from protocol.domain import SegmentKind, SegmentSource, Terminal
from protocol.parser import compute_loss_mask, extract_answer, validate_format
from protocol.tokenizer import tokenize

from .domain import RolloutConfig
from .engine import count_valid_retrievals, run_group, run_rollout
from .prompts import agent_prompt, render_prompt
from .serializers import GroupManifestSerializer, TrajectorySerializer

DOCS = [
    Document('france-capital', 'France capital', 'The capital of France is Paris.'),
    Document('peru-capital', 'Peru capital', 'The capital of Peru is Lima.'),
    Document('france-river', 'France river', 'The river of France is Seine.'),
]
ENV = index_corpus(DOCS)
TASK = TaskInstance('france-capital-0', 'What is the capital of France?', ('Paris',))
CFG = RolloutConfig(group_size=2)

DIRECT = '<think>I know this</think><answer>Paris</answer>'
SEARCH = '<think>I need to look it up</think><search>capital France</search>'
FOUND = '<think>found it</think><answer>Paris</answer>'


class RecordingPolicy:
    """
    Wraps a policy and keeps every prompt it was asked to continue.
    """

    def __init__(self, inner):
        self.inner = inner
        self.prompts = []
        self.requests = []

    def generate(self, req):
        self.prompts.append(req.prompt)
        self.requests.append(req)
        return self.inner.generate(req)


def context_zero_walk(tokens):
    """
    Mask rebuilt by walking the token stream for context tags.
    """
    mask, inside = [], False
    for token in tokens:
        if token == '<context>':
            inside = True
        mask.append(0 if inside else 1)
        if token == '</context>':
            inside = False
    return mask


class PromptTests(SimpleTestCase):

    def test_render_fills_placeholders(self):
        self.assertEqual(render_prompt('Search {max_searches} times.\nQuestion: {question}', 'Why?', 4),
                         'Search 4 times.\nQuestion: Why?\n')

    def test_asset_template(self):
        prompt = agent_prompt(TASK.question, 4)
        self.assertIn('You can search 0 - 4 times. 0 is preferable.', prompt)
        self.assertTrue(prompt.endswith(f'Question: {TASK.question}\n'))


class RunRolloutTests(SimpleTestCase):

    def test_direct_answer(self):
        traj = run_rollout(ScriptedPolicy([DIRECT]), ENV, TASK, CFG, seed=0)
        self.assertEqual(traj.parsed.terminal, Terminal.ANSWERED)
        self.assertEqual(traj.retrieval_count, 0)
        self.assertEqual(traj.parsed.answer_text, 'Paris')
        self.assertEqual(set(traj.loss_mask), {1})
        self.assertTrue(validate_format(traj.parsed, traj))

    def test_one_search(self):
        traj = run_rollout(ScriptedPolicy([SEARCH, FOUND]), ENV, TASK, CFG, seed=0)
        contexts = traj.parsed.of_kind(SegmentKind.CONTEXT)
        self.assertEqual(traj.retrieval_count, 1)
        self.assertEqual(len(contexts), 1)
        self.assertTrue(contexts[0].body.startswith('Title: France capital\nThe capital of France is Paris.'))
        self.assertEqual(contexts[0].source, SegmentSource.ENVIRONMENT)
        self.assertEqual(list(traj.loss_mask), context_zero_walk(traj.tokens))
        self.assertEqual(list(traj.loss_mask), compute_loss_mask(traj.parsed))
        self.assertEqual(traj.text, SEARCH + f'<context>{contexts[0].body}</context>' + FOUND)

    def test_over_cap_searches_get_sentinel(self):
        cfg = RolloutConfig(max_turns=10, max_retrievals=4, group_size=2)
        traj = run_rollout(ScriptedPolicy([SEARCH]), ENV, TASK, cfg, seed=0)
        contexts = traj.parsed.of_kind(SegmentKind.CONTEXT)
        self.assertEqual(traj.retrieval_count, 4)
        self.assertEqual(len(contexts), 10)
        self.assertNotEqual(contexts[3].body, SEARCH_LIMIT)
        self.assertEqual(contexts[4].body, SEARCH_LIMIT)
        self.assertEqual(traj.parsed.terminal, Terminal.TRUNCATED)
        self.assertFalse(validate_format(traj.parsed, traj))
        self.assertEqual(count_valid_retrievals(traj), 4)

    def test_recovers_after_cap(self):
        cfg = RolloutConfig(max_turns=6, max_retrievals=1, group_size=2)
        traj = run_rollout(ScriptedPolicy([SEARCH, SEARCH, FOUND]), ENV, TASK, cfg, seed=0)
        self.assertEqual(traj.parsed.terminal, Terminal.ANSWERED)
        self.assertEqual(traj.retrieval_count, 1)
        self.assertEqual(traj.parsed.of_kind(SegmentKind.CONTEXT)[1].body, SEARCH_LIMIT)

    def test_empty_query_does_not_retrieve(self):
        script = ['<think>hmm</think><search>   </search>', FOUND]
        traj = run_rollout(ScriptedPolicy(script), ENV, TASK, CFG, seed=0)
        self.assertEqual(traj.retrieval_count, 0)
        self.assertEqual(traj.parsed.of_kind(SegmentKind.CONTEXT)[0].body, NO_RESULTS)
        self.assertTrue(validate_format(traj.parsed, traj))

    def test_malformed_turn_ends_rollout(self):
        traj = run_rollout(ScriptedPolicy(['<search>capital France</search>']), ENV, TASK, CFG, seed=0)
        self.assertEqual(traj.parsed.terminal, Terminal.MALFORMED)
        self.assertEqual(traj.parsed.errors, ('MissingThink',))
        self.assertEqual(traj.parsed.residue, '<search>capital France</search>')
        self.assertEqual(traj.retrieval_count, 0)
        self.assertEqual(set(traj.loss_mask), {1})

    def test_turn_cap_truncates(self):
        cfg = RolloutConfig(max_turns=2, group_size=2)
        traj = run_rollout(ScriptedPolicy([SEARCH]), ENV, TASK, cfg, seed=0)
        self.assertEqual(traj.parsed.terminal, Terminal.TRUNCATED)
        self.assertEqual(traj.parsed.agent_turns(), 2)

    def test_emission_cut_after_first_action(self):
        script = [SEARCH + '<think>again</think><search>more</search>', FOUND]
        traj = run_rollout(ScriptedPolicy(script), ENV, TASK, CFG, seed=0)
        self.assertEqual(traj.retrieval_count, 1)
        self.assertEqual(traj.parsed.terminal, Terminal.ANSWERED)

    def test_prefix_state(self):
        policy = RecordingPolicy(ScriptedPolicy([SEARCH, SEARCH, FOUND]))
        traj = run_rollout(policy, ENV, TASK, CFG, seed=3)
        prompt_tokens = tokenize(traj.prompt)
        self.assertEqual(len(policy.prompts), 3)
        consumed = 0
        for prompt in policy.prompts:
            self.assertTrue(prompt.startswith(traj.prompt))
            transcript = prompt[len(traj.prompt):]
            while len(''.join(traj.tokens[:consumed])) < len(transcript):
                consumed += 1
            self.assertEqual(''.join(traj.tokens[:consumed]), transcript)
            self.assertEqual(tokenize(prompt), prompt_tokens + list(traj.tokens[:consumed]))

    def test_documents_quoting_a_question_line(self):
        env = index_corpus([Document(d.doc_id, d.title, f'Question: who knows?\n{d.body}') for d in DOCS])
        policy = RecordingPolicy(ScriptedPolicy({
            'default': ['<think>lost</think><answer>WRONG</answer>'],
            'questions': {TASK.question: [SEARCH, FOUND]},
        }))
        traj = run_rollout(policy, env, TASK, CFG, seed=0)
        self.assertIn('Question: who knows?', traj.parsed.of_kind(SegmentKind.CONTEXT)[0].body)
        self.assertEqual(extract_answer(traj.parsed), 'Paris')
        self.assertEqual([req.transcript_start for req in policy.requests], [len(traj.prompt)] * 2)

    def test_scripted_has_no_logprobs(self):
        self.assertIsNone(run_rollout(ScriptedPolicy([DIRECT]), ENV, TASK, CFG, seed=0).old_logprobs)

    def test_toy_logprobs_cover_every_token(self):
        rng = np.random.default_rng(0)
        vocab = (*AGENT_TAGS, '\n', ' capital', ' France', ' Paris')
        policy = ToyPolicy(vocab, rng.normal(size=(64, len(vocab))), feature_dim=64)
        cfg = RolloutConfig(max_tokens=12, group_size=2)
        traj = run_rollout(policy, ENV, TASK, cfg, seed=5)
        self.assertEqual(len(traj.old_logprobs), len(traj.tokens))
        for logprob, bit in zip(traj.old_logprobs, traj.loss_mask):
            if bit:
                self.assertLess(logprob, 0.0)
            else:
                self.assertEqual(logprob, 0.0)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        vocab = (*AGENT_TAGS, ' capital', ' France', ' Paris')
        policy = ToyPolicy(vocab, rng.normal(size=(64, len(vocab))), feature_dim=64)
        cfg = RolloutConfig(max_tokens=10, group_size=2)
        self.assertEqual(run_rollout(policy, ENV, TASK, cfg, seed=9),
                         run_rollout(policy, ENV, TASK, cfg, seed=9))


class SubstitutionTests(SimpleTestCase):
    """
    A remote policy replaying the same emissions, tokenized one character
    at a time, yields the same bookkeeping as the scripted policy.
    """

    def test_remote_matches_scripted(self):
        scripted = ScriptedPolicy([SEARCH, FOUND])

        def serve(url, json=None, timeout=None):
            text = scripted.generate(_request(json)).text
            response = mock.Mock(spec=requests.Response)
            response.status_code = 200
            response.ok = True
            response.json.return_value = {'text': text, 'tokens': list(text),
                                          'logprobs': [-0.5] * len(text)}
            return response

        with mock.patch.object(requests.Session, 'post', side_effect=serve):
            remote = run_rollout(RemotePolicy('http://policy.test'), ENV, TASK, CFG, seed=0)
        local = run_rollout(scripted, ENV, TASK, CFG, seed=0)

        self.assertEqual(remote.text, local.text)
        self.assertEqual(remote.parsed.terminal, local.parsed.terminal)
        self.assertEqual(remote.retrieval_count, local.retrieval_count)
        self.assertEqual([(s.kind, s.body) for s in remote.parsed.segments],
                         [(s.kind, s.body) for s in local.parsed.segments])
        for traj in (remote, local):
            masked = ''.join(t for t, bit in zip(traj.tokens, traj.loss_mask) if not bit)
            contexts = traj.parsed.of_kind(SegmentKind.CONTEXT)
            self.assertEqual(masked, ''.join(s.raw for s in contexts))
        self.assertEqual(len(remote.old_logprobs), len(remote.tokens))


def _request(payload):
    serializer = GenerationRequestSerializer(data=payload)
    serializer.is_valid(raise_exception=True)
    return serializer.save()


class RunGroupTests(SimpleTestCase):

    def test_deterministic_script_gives_identical_members(self):
        group = run_group(ScriptedPolicy([SEARCH, FOUND]), ENV, TASK, CFG, seed=0)
        first, second = group.trajectories
        self.assertEqual((first.seed, second.seed), (0, 1))
        self.assertEqual(first.tokens, second.tokens)
        self.assertEqual(first.parsed, second.parsed)

    def test_unanswerable_script_truncates_all(self):
        cfg = RolloutConfig(max_turns=3, group_size=2)
        group = run_group(ScriptedPolicy([SEARCH]), ENV, TASK, cfg, seed=0)
        self.assertEqual([t.parsed.terminal for t in group.trajectories],
                         [Terminal.TRUNCATED, Terminal.TRUNCATED])

    def test_toy_group_seeds_and_threads(self):
        rng = np.random.default_rng(2)
        vocab = (*AGENT_TAGS, '\n', ' capital', ' France', ' Paris')
        policy = ToyPolicy(vocab, rng.normal(size=(64, len(vocab))), feature_dim=64)
        cfg = RolloutConfig(max_tokens=10, group_size=16)
        sequential = run_group(policy, ENV, TASK, cfg, seed=100)
        threaded = run_group(policy, ENV, TASK, cfg, seed=100, workers=4)
        self.assertEqual(len(sequential.trajectories), 16)
        self.assertEqual(len({t.seed for t in sequential.trajectories}), 16)
        self.assertEqual(sequential.trajectories, threaded.trajectories)

    def test_manifest(self):
        group = run_group(ScriptedPolicy([DIRECT]), ENV, TASK, CFG, seed=7, group_id='g-1')
        self.assertEqual(GroupManifestSerializer(group).data, {
            'task_id': TASK.task_id,
            'group_id': 'g-1',
            'trajectory_ids': [f'{TASK.task_id}/7', f'{TASK.task_id}/8'],
            'seed': 7,
        })


class CountValidRetrievalsTests(SimpleTestCase):

    def test_no_searches(self):
        traj = run_rollout(ScriptedPolicy([DIRECT]), ENV, TASK, CFG, seed=0)
        self.assertEqual(count_valid_retrievals(traj), 0)

    def test_empty_query_excluded(self):
        script = [SEARCH, '<think>x</think><search> </search>',
                  '<think>y</think><search>river France</search>', FOUND]
        traj = run_rollout(ScriptedPolicy(script), ENV, TASK, CFG, seed=0)
        self.assertEqual(count_valid_retrievals(traj), 2)
        self.assertEqual(traj.retrieval_count, 2)

    def test_cap(self):
        cfg = RolloutConfig(max_turns=6, max_retrievals=4, group_size=2)
        traj = run_rollout(ScriptedPolicy([SEARCH] * 6), ENV, TASK, cfg, seed=0)
        self.assertEqual(count_valid_retrievals(traj), 4)
        self.assertEqual(count_valid_retrievals(traj), traj.retrieval_count)


class TrajectoryLogTests(SimpleTestCase):

    def test_log_line_round_trip(self):
        traj = run_rollout(ScriptedPolicy([SEARCH, '<search>oops</search>']), ENV, TASK, CFG, seed=4)
        record = json.loads(json.dumps(TrajectorySerializer(traj, context={'include_prompt': True}).data))
        serializer = TrajectorySerializer(data=record)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save(), traj)

    def test_log_schema(self):
        traj = run_rollout(ScriptedPolicy([SEARCH, FOUND]), ENV, TASK, CFG, seed=0)
        record = TrajectorySerializer(traj).data
        self.assertNotIn('prompt', record)
        self.assertEqual(record['segments'][2]['kind'], 'context')
        self.assertEqual(record['segments'][2]['source'], 'environment')
        self.assertEqual(record['retrieval_count'], 1)

    def test_mismatched_mask_rejected(self):
        traj = run_rollout(ScriptedPolicy([DIRECT]), ENV, TASK, CFG, seed=0)
        record = dict(TrajectorySerializer(traj).data)
        record['loss_mask'] = record['loss_mask'][:-1]
        self.assertFalse(TrajectorySerializer(data=record).is_valid())


class ResponseShapeTests(SimpleTestCase):

    def test_foreign_tokens_fall_back_to_local(self):
        class Mismatched:
            def generate(self, req):
                return GenerationResponse(text=DIRECT, tokens=('x',), token_ids=(1,), logprobs=(-0.1,))

        traj = run_rollout(Mismatched(), ENV, TASK, CFG, seed=0)
        self.assertEqual(list(traj.tokens), tokenize(DIRECT))
        self.assertIsNone(traj.old_logprobs)
