import json
import math
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
import requests
from django.test import SimpleTestCase, override_settings
from hypothesis import given, settings, strategies as st
from rest_framework.test import APIClient

from dataset.domain import Label
from environment.index import format_observation, index_corpus, retrieve
from environment.world import fact_query, generate_world
from protocol.tokenizer import tokenize

from .domain import GenerationRequest, GenerationResponse, PolicyHandle, generate
from .exceptions import ContractViolation, RemoteHTTPError, RemoteUnavailable, UnknownToken
from .loader import load_policy, parse_selection
from .remote import RemotePolicy, remote_generate
from .scripted import ScriptedPolicy
from .seeding import (
    FOUND_THINK, KNOW_THINK, SEARCH_THINK, SeedingConfig, agent_prompt, demonstrations, probe_prompt,
    seed_toy_policy,
)
from .toy import AGENT_TAGS, ToyPolicy, observation_tail, parse_state, question_key

VOCAB = (*AGENT_TAGS, '\n', ' I', ' know', ' need', ' Paris', ' Lyon', ' capital', ' France')
PROMPT = 'You can search.\n\nQuestion: What is the capital of France?\n'
STATES = [
    PROMPT,
    PROMPT + '<think> I',
    PROMPT + '<think> I need</think><search> France',
    PROMPT + '<think> I need</think><search> France capital</search>'
             '<context>Title: France capital\nThe capital of France is Paris.</context><think>',
    PROMPT + '<think> I know</think><answer>',
    'Question: What is the capital of France?\nAnswer:',
]


def random_policy(seed=0, dim=64, scale=0.5):
    rng = np.random.default_rng(seed)
    return ToyPolicy(VOCAB, rng.normal(scale=scale, size=(dim, len(VOCAB))), feature_dim=dim)


def fake_response(payload, status_code=200):
    response = mock.Mock(spec=requests.Response)
    response.status_code = status_code
    response.ok = status_code < 400
    response.json.return_value = payload
    response.text = json.dumps(payload)
    return response


class ScriptedPolicyTests(SimpleTestCase):

    def test_echo(self):
        policy = ScriptedPolicy(['<think>a</think><answer>b</answer>'])
        reply = generate(policy, GenerationRequest(PROMPT))
        self.assertEqual(reply.text, '<think>a</think><answer>b</answer>')
        self.assertIsNone(reply.logprobs)

    def test_turns_follow_observations(self):
        policy = ScriptedPolicy(['<think>a</think><search>q</search>', '<think>b</think><answer>c</answer>'])
        first = policy.generate(GenerationRequest(PROMPT))
        second = policy.generate(GenerationRequest(
            PROMPT + first.text + '<context>x</context>'))
        self.assertEqual(second.text, '<think>b</think><answer>c</answer>')

    def test_last_emission_repeats(self):
        policy = ScriptedPolicy(['<think>a</think><search>q</search>'])
        prompt = PROMPT + '<context>x</context>' * 5
        self.assertEqual(policy.generate(GenerationRequest(prompt)).text,
                         '<think>a</think><search>q</search>')

    def test_stop_and_token_budget(self):
        policy = ScriptedPolicy(['<think>a</think><search>q</search><answer>x</answer>'])
        self.assertEqual(policy.generate(GenerationRequest(PROMPT)).text,
                         '<think>a</think><search>q</search>')
        self.assertEqual(policy.generate(GenerationRequest(PROMPT, max_tokens=2)).text, '<think>a')

    def test_question_keyed_script(self):
        policy = ScriptedPolicy({
            'default': ['<think>?</think><answer>no idea</answer>'],
            'questions': {'What is the capital of France?': ['<think>k</think><answer>Paris</answer>']},
        })
        self.assertEqual(policy.generate(GenerationRequest(PROMPT)).text,
                         '<think>k</think><answer>Paris</answer>')
        other = PROMPT.replace('France', 'Peru')
        self.assertEqual(policy.generate(GenerationRequest(other)).text,
                         '<think>?</think><answer>no idea</answer>')

    def test_observation_text_never_moves_the_question(self):
        policy = ScriptedPolicy({
            'default': ['<think>?</think><answer>WRONG</answer>'],
            'questions': {'What is the capital of France?': [
                '<think>a</think><search>q</search>', '<think>k</think><answer>Paris</answer>']},
        })
        prompt = (PROMPT + '<think>a</think><search>q</search>'
                  '<context>Question: who knows?\nnobody</context>')
        reply = policy.generate(GenerationRequest(prompt, transcript_start=len(PROMPT)))
        self.assertEqual(reply.text, '<think>k</think><answer>Paris</answer>')

    def test_transcript_start_within_prompt(self):
        with self.assertRaises(ValueError):
            GenerationRequest(PROMPT, transcript_start=len(PROMPT) + 1)

    def test_from_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            text_path = Path(tmp) / 'script.txt'
            text_path.write_text('<think>a</think><search>q</search>\n<think>b</think><answer>c</answer>\n')
            self.assertEqual(len(ScriptedPolicy.from_file(text_path).default), 2)
            json_path = Path(tmp) / 'script.json'
            json_path.write_text(json.dumps({'questions': {'Q?': ['x']}}))
            self.assertEqual(ScriptedPolicy.from_file(json_path).by_question, {'Q?': ('x',)})

    def test_empty_script(self):
        with self.assertRaises(ValueError):
            ScriptedPolicy([])

    def test_satisfies_handle(self):
        self.assertIsInstance(ScriptedPolicy(['x']), PolicyHandle)


class FeatureStateTests(SimpleTestCase):

    def test_question_key_ignores_phrasing(self):
        self.assertEqual(question_key('What is the capital of Veltor?'),
                         question_key('Name the capital of Veltor.'))

    def test_state_tracks_slots(self):
        state = parse_state(STATES[3])
        self.assertEqual(state.slot, 'think')
        self.assertEqual(state.n_search, 1)
        self.assertEqual(state.obs_tail, 'Paris')
        self.assertEqual(state.think_key, 'need')
        self.assertEqual(state.key, 'France capital')

    def test_probe_state(self):
        state = parse_state(STATES[5])
        self.assertEqual((state.slot, state.pos), ('probe', 0))

    def test_incremental_matches_full_parse(self):
        text = STATES[3] + ' I found</think><answer> Paris</answer>'
        head, tail = text[:len(PROMPT)], text[len(PROMPT):]
        state = parse_state(head)
        for token in tokenize(tail):
            state.push(token)
        self.assertEqual(state, parse_state(text))

    def test_question_marker_in_an_observation_is_opaque(self):
        transcript = ('<think> I need</think><search> France capital</search>'
                      '<context>Question: who knows?\nThe capital of France is Paris.</context><think>')
        state = parse_state(PROMPT)
        for token in tokenize(transcript):
            state.push(token)
        self.assertEqual(parse_state(PROMPT + transcript, len(PROMPT)), state)
        self.assertEqual(state.question, 'What is the capital of France?')
        self.assertEqual(state.n_search, 1)

    def test_observation_tail_reads_first_block(self):
        self.assertEqual(observation_tail('Title: A\nThe x of A is B.\n\nTitle: C\nD is E.'), 'B')
        self.assertEqual(observation_tail(''), '')


class ToyPolicyTests(SimpleTestCase):

    def test_generation_state_matches_training_rows(self):
        policy = random_policy(seed=6)
        transcript = ('<think> I need</think><search> France capital</search>'
                      '<context>Question: who knows?\nThe capital of France is Paris.</context>')
        reply = policy.generate(GenerationRequest(PROMPT + transcript, max_tokens=6, seed=2,
                                                  transcript_start=len(PROMPT)))
        prefix = tokenize(transcript)
        tokens = prefix + list(reply.tokens)
        rows = policy.rows(PROMPT, tokens, range(len(prefix), len(tokens)))
        expected = [float(policy.log_probs(row)[policy.token_id(token)])
                    for row, token in zip(rows, reply.tokens)]
        np.testing.assert_allclose(reply.logprobs, expected, rtol=0, atol=1e-12)

    def test_uniform_parameters(self):
        policy = ToyPolicy(VOCAB, feature_dim=64)
        for state in STATES:
            for token in VOCAB:
                logp, _ = policy.logprob_and_grad(state, token)
                self.assertAlmostEqual(logp, -math.log(len(VOCAB)), places=12)

    def test_distribution_normalised(self):
        policy = random_policy(scale=3.0)
        for state in STATES:
            total = sum(math.exp(policy.logprob_and_grad(state, token)[0]) for token in VOCAB)
            self.assertAlmostEqual(total, 1.0, delta=1e-9)

    def test_gradient_matches_finite_differences(self):
        policy = random_policy(seed=1)
        rng = np.random.default_rng(2)
        step = 1e-5
        for state in STATES:
            token = VOCAB[int(rng.integers(len(VOCAB)))]
            _, grad = policy.logprob_and_grad(state, token)
            active = np.flatnonzero(grad)
            coords = np.concatenate([active[:10], rng.integers(0, grad.size, size=5)])
            for coord in coords:
                theta = policy.theta.ravel().copy()
                theta[coord] += step
                up = policy.with_theta(theta.reshape(policy.theta.shape)).logprob_and_grad(state, token)[0]
                theta[coord] -= 2 * step
                down = policy.with_theta(theta.reshape(policy.theta.shape)).logprob_and_grad(state, token)[0]
                numeric = (up - down) / (2 * step)
                self.assertLessEqual(abs(numeric - grad[coord]), 1e-6 * max(1.0, abs(grad[coord])))

    def test_unknown_token(self):
        with self.assertRaises(UnknownToken):
            random_policy().logprob_and_grad(PROMPT, ' Berlin')

    def test_greedy_is_deterministic(self):
        policy = random_policy(scale=2.0)
        req = GenerationRequest(PROMPT, temperature=0.0, max_tokens=12)
        first = policy.generate(req)
        for _ in range(100):
            self.assertEqual(policy.generate(req), first)

    def test_greedy_tie_takes_lowest_index(self):
        reply = ToyPolicy(VOCAB, feature_dim=16).generate(
            GenerationRequest(PROMPT, temperature=0.0, max_tokens=1))
        self.assertEqual(reply.token_ids, (0,))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_seeded_sampling_repeats(self, seed):
        policy = random_policy(scale=1.0)
        req = GenerationRequest(PROMPT, temperature=1.0, max_tokens=10, seed=seed)
        self.assertEqual(policy.generate(req), policy.generate(req))

    def test_response_contract(self):
        policy = random_policy(scale=1.0)
        reply = policy.generate(GenerationRequest(PROMPT, max_tokens=30, seed=3))
        self.assertEqual(''.join(reply.tokens), reply.text)
        self.assertEqual(len(reply.logprobs), len(reply.token_ids))
        self.assertTrue(all(lp <= 0.0 for lp in reply.logprobs))
        stopped = any(reply.text.endswith(stop) for stop in ('</search>', '</answer>'))
        self.assertTrue(stopped or len(reply.tokens) == 30)
        self.assertFalse(any(stop in reply.text[:-1] for stop in ('</search>', '</answer>')))

    def test_logprobs_match_gradient_api(self):
        policy = random_policy(scale=1.0)
        reply = policy.generate(GenerationRequest(PROMPT, max_tokens=6, seed=4))
        prefix = PROMPT
        for token, logp in zip(reply.tokens, reply.logprobs):
            self.assertAlmostEqual(policy.logprob_and_grad(prefix, token)[0], logp, places=12)
            prefix += token

    def test_parameters_are_read_only(self):
        policy = random_policy()
        with self.assertRaises(ValueError):
            policy.theta[0, 0] = 1.0

    def test_feature_dim_power_of_two(self):
        with self.assertRaises(ValueError):
            ToyPolicy(VOCAB, feature_dim=100)

    def test_save_and_load(self):
        policy = random_policy(scale=1.0).with_knowledge(random_policy(seed=9).theta)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'policy.npz'
            policy.save(path)
            loaded = load_policy(f'toy:{path}')
        np.testing.assert_array_equal(loaded.theta, policy.theta)
        np.testing.assert_array_equal(loaded.knowledge, policy.knowledge)
        self.assertEqual(loaded.vocab, policy.vocab)
        req = GenerationRequest(PROMPT, max_tokens=8, seed=5)
        self.assertEqual(loaded.generate(req), policy.generate(req))


class SeedingTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.world, cls.tasks, docs = generate_world(3, 5, 0.5)
        cls.index = index_corpus(docs)
        cls.policy = seed_toy_policy(cls.world, cls.tasks, cls.index,
                                     SeedingConfig(feature_dim=1024, epochs=150))

    def probe(self, task):
        reply = self.policy.generate(GenerationRequest(
            probe_prompt(task.question), stop_sequences=('\n',), max_tokens=4, temperature=0.0))
        return reply.text.strip()

    def test_vocabulary_covers_values(self):
        for task in self.tasks:
            self.assertIn(f' {task.golds[0]}', self.policy.vocab)

    def test_internal_facts_are_recalled(self):
        easy = [task for task in self.tasks if task.label == Label.EASY]
        hard = [task for task in self.tasks if task.label == Label.HARD]
        easy_hits = sum(self.probe(task) == task.golds[0] for task in easy)
        hard_hits = sum(self.probe(task) == task.golds[0] for task in hard)
        self.assertGreaterEqual(easy_hits, 0.9 * len(easy))
        self.assertLessEqual(hard_hits, 0.2 * len(hard))

    def test_knowledge_is_frozen_copy(self):
        np.testing.assert_array_equal(self.policy.knowledge, self.policy.theta)
        self.assertIn(self.policy.confidence(self.tasks[0].question), ('hi', 'mid', 'lo'))


class DemonstrationTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.world, cls.tasks, docs = generate_world(3, 6, 0.5, external_coverage=0.0)
        cls.index = index_corpus(docs)
        cls.easy = next(task for task in cls.tasks if task.label == Label.EASY)
        cls.hard = next(task for task in cls.tasks if task.label == Label.HARD)

    def demos_for(self, task, **kwargs):
        demos = demonstrations(self.world, [task], self.index, SeedingConfig(**kwargs))
        return [demo for demo in demos if demo.prompt == agent_prompt(task.question)]

    def test_missed_lookup_shows_only_the_search(self):
        (demo,) = self.demos_for(self.hard)
        entity, attribute = self.hard.facts[0]
        self.assertEqual(demo.pieces, ((f'{SEARCH_THINK}<search> {entity} {attribute}</search>', 1.0),))

    def test_guess_leaves_the_value_unlearned(self):
        demos = self.demos_for(self.hard, guess_demo_weight=0.2)
        (guess,) = [demo for demo in demos if demo.pieces[0][0].startswith(KNOW_THINK)]
        self.assertEqual(guess.pieces, (
            (f'{KNOW_THINK}<answer>', 0.2),
            (f' {self.hard.golds[0]}', 0.0),
            ('</answer>', 0.2),
        ))

    def test_no_guess_by_default(self):
        demos = self.demos_for(self.hard)
        self.assertFalse(any(KNOW_THINK in text for demo in demos for text, _ in demo.pieces))

    def test_slipped_answers_drop_the_tag(self):
        demos = self.demos_for(self.easy, answer_slip=0.25)
        found = [demo for demo in demos if any(text == FOUND_THINK for text, _ in demo.pieces)]
        (slipped,) = found
        tokens, weights = slipped.tokens()
        self.assertNotIn('<answer>', tokens)
        self.assertEqual(slipped.pieces[-1][0], f' {self.easy.golds[0]}</answer>')
        # learned tokens of the slip carry answer_slip / (1 - answer_slip) of the clean turn
        self.assertAlmostEqual(max(weights), 1 / 3)
        self.assertTrue(all(weight == 0.0 for weight in weights[:-2]))

    def test_config_bounds(self):
        with self.assertRaises(ValueError):
            SeedingConfig(answer_slip=1.0)
        with self.assertRaises(ValueError):
            SeedingConfig(guess_demo_weight=-0.1)


class SlippedSeedingTests(SimpleTestCase):
    """
    A policy seeded with guesses and slipped answers, read off its
    distributions at the two branch points.
    """

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.world, cls.tasks, docs = generate_world(3, 5, 0.5)
        cls.index = index_corpus(docs)
        cls.policy = seed_toy_policy(cls.world, cls.tasks, cls.index, SeedingConfig(
            feature_dim=1024, epochs=150, guess_demo_weight=0.15, answer_slip=0.5))

    def prob(self, text, token):
        logp = self.policy.log_probs(self.policy.row(parse_state(text)))
        return math.exp(logp[self.policy.token_id(token)])

    def test_answer_tag_at_the_slip_rate(self):
        for task in self.tasks[:4]:
            entity, attribute = task.facts[0]
            result = retrieve(self.index, fact_query(entity, attribute), 3)
            text = (agent_prompt(task.question)
                    + f'{SEARCH_THINK}<search> {entity} {attribute}</search>'
                    + format_observation(result, self.index, 1200) + FOUND_THINK)
            self.assertGreater(self.prob(text, '<answer>'), 0.3)
            self.assertLess(self.prob(text, '<answer>'), 0.7)

    def test_search_split_ignores_the_boundary(self):
        def need(label):
            chosen = [task for task in self.tasks if task.label == label]
            return sum(self.prob(agent_prompt(t.question) + '<think> I', ' need') for t in chosen) / len(chosen)
        self.assertAlmostEqual(need(Label.EASY), need(Label.HARD), delta=0.15)


class RemotePolicyTests(SimpleTestCase):

    def setUp(self):
        self.policy = RemotePolicy('http://inference.local:8000', timeout=0.5, retries=2)
        self.req = GenerationRequest(PROMPT, max_tokens=8, temperature=0.0, seed=1)

    def test_loopback(self):
        payload = {'text': '<think>a</think><answer>b</answer>',
                   'tokens': ['<think>', 'a', '</think>', '<answer>', 'b', '</answer>'],
                   'logprobs': [-0.1] * 6}
        with mock.patch.object(requests.Session, 'post', return_value=fake_response(payload)) as post:
            reply = self.policy.generate(self.req)
        self.assertEqual(reply.text, payload['text'])
        self.assertEqual(len(reply.logprobs), 6)
        args, kwargs = post.call_args
        self.assertEqual(args[0], 'http://inference.local:8000/generate')
        self.assertEqual(kwargs['json']['stop'], ['</search>', '</answer>'])
        self.assertEqual(kwargs['timeout'], 0.5)

    def test_remote_generate_function(self):
        payload = {'text': 'x', 'tokens': ['x'], 'logprobs': [-0.5]}
        with mock.patch.object(requests.Session, 'post', return_value=fake_response(payload)) as post:
            reply = remote_generate('http://inference.local:8000/generate', self.req, retries=0)
        self.assertEqual(reply.text, 'x')
        self.assertEqual(post.call_args[0][0], 'http://inference.local:8000/generate')

    def test_null_logprobs(self):
        payload = {'text': 'x', 'tokens': ['x'], 'logprobs': None}
        with mock.patch.object(requests.Session, 'post', return_value=fake_response(payload)):
            self.assertIsNone(self.policy.generate(self.req).logprobs)

    def test_missing_text(self):
        with mock.patch.object(requests.Session, 'post',
                               return_value=fake_response({'tokens': [], 'logprobs': None})):
            with self.assertRaises(ContractViolation) as ctx:
                self.policy.generate(self.req)
        self.assertIn('text', ctx.exception.errors)

    def test_logprob_length_mismatch(self):
        payload = {'text': 'ab', 'tokens': ['a', 'b'], 'logprobs': [-1.0]}
        with mock.patch.object(requests.Session, 'post', return_value=fake_response(payload)):
            with self.assertRaises(ContractViolation):
                self.policy.generate(self.req)

    def test_timeout_retries_then_gives_up(self):
        with mock.patch.object(requests.Session, 'post', side_effect=requests.Timeout('slow')) as post:
            with self.assertRaises(RemoteUnavailable) as ctx:
                self.policy.generate(self.req)
        self.assertEqual(post.call_count, 3)
        self.assertEqual(ctx.exception.attempts, 3)

    def test_recovers_after_one_timeout(self):
        payload = {'text': 'x', 'tokens': ['x'], 'logprobs': None}
        with mock.patch.object(requests.Session, 'post',
                               side_effect=[requests.ConnectionError('down'), fake_response(payload)]):
            self.assertEqual(self.policy.generate(self.req).text, 'x')

    def test_http_error(self):
        with mock.patch.object(requests.Session, 'post',
                               return_value=fake_response({'detail': 'boom'}, status_code=500)):
            with self.assertRaises(RemoteHTTPError) as ctx:
                self.policy.generate(self.req)
        self.assertEqual(ctx.exception.status_code, 500)


class LoaderTests(SimpleTestCase):

    def test_parse_selection(self):
        self.assertEqual(parse_selection('remote:http://h:1'), ('remote', 'http://h:1'))
        with self.assertRaises(ValueError):
            parse_selection('oracle:x')
        with self.assertRaises(ValueError):
            load_policy('toy:')


class GenerateViewTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        path = Path(self.tmp.name) / 'serve.txt'
        path.write_text('<think>a</think><answer>b</answer>\n')
        self.selection = f'scripted:{path}'
        self.client = APIClient()
        self.body = {'prompt': PROMPT, 'stop': ['</answer>'], 'max_tokens': 16,
                     'temperature': 0.0, 'seed': 0}

    def test_generate(self):
        with override_settings(SERVE_POLICY=self.selection):
            response = self.client.post('/generate', self.body, format='json')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json(), {
            'text': '<think>a</think><answer>b</answer>',
            'tokens': ['<think>', 'a', '</think>', '<answer>', 'b', '</answer>'],
            'logprobs': None,
        })

    def test_bad_request(self):
        with override_settings(SERVE_POLICY=self.selection):
            response = self.client.post('/generate', {'prompt': PROMPT}, format='json')
        self.assertEqual(response.status_code, 400)
        self.assertIn('max_tokens', response.json())

    def test_nothing_served(self):
        with override_settings(SERVE_POLICY=''):
            response = self.client.post('/generate', self.body, format='json')
        self.assertEqual(response.status_code, 503)

    def test_remote_client_against_view(self):
        client = self.client

        def route(url, json=None, timeout=None):
            reply = client.post('/generate', json, format='json')
            return fake_response(reply.json(), reply.status_code)

        with override_settings(SERVE_POLICY=self.selection), \
                mock.patch.object(requests.Session, 'post', side_effect=route):
            reply = RemotePolicy('http://loopback').generate(
                GenerationRequest(PROMPT, stop_sequences=('</answer>',)))
        self.assertEqual(reply, GenerationResponse(
            text='<think>a</think><answer>b</answer>',
            tokens=('<think>', 'a', '</think>', '<answer>', 'b', '</answer>'),
            token_ids=reply.token_ids,
        ))
