import math
import os
import random
import tempfile
import unittest
from dataclasses import replace
from decimal import Decimal, getcontext
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, strategies as st

from dataset.balance import build_balanced, build_mixture
from dataset.domain import DatasetMix, Label, TaskInstance
from environment.domain import Document
from environment.index import index_corpus
from environment.world import generate_world
from policy.scripted import ScriptedPolicy
from policy.seeding import SeedingConfig, seed_toy_policy
from policy.toy import AGENT_TAGS, ToyPolicy
from reward.domain import RewardConfig, RewardVariant
from rollout.domain import RolloutConfig
from rollout.engine import run_group

from .batch import ImportedAdvantage, export_batch, inject_advantages, read_advantages
from .domain import KLReference, OptimConfig
from .exceptions import BatchMismatch, EmptyMask, GroupTooSmall, MissingLogprobs
from .objective import clipped_surrogate, group_advantages, kl_term
from .step import grpo_step, objective, prepare_batch
from .training import TrainConfig, collect_groups, score_group, train

SLOW = os.environ.get('KBH_SLOW_TESTS') == '1'

VOCAB = (*AGENT_TAGS, '\n', ' I', ' know', ' capital', ' France', ' Paris', ' Lyon')
ENV = index_corpus([
    Document('france-capital', 'France capital', 'The capital of France is Paris.'),
    Document('france-river', 'France river', 'The river of France is Seine.'),
])
TASKS = [
    TaskInstance('fr-0', 'What is the capital of France?', ('Paris',), Label.EASY),
    TaskInstance('fr-1', 'Name the capital of France.', ('Paris',), Label.HARD),
]
SMALL = RolloutConfig(max_turns=3, max_tokens=12, group_size=3)


def oracle_advantages(rewards):
    getcontext().prec = 60
    values = [Decimal(r) for r in rewards]
    mu = sum(values) / len(values)
    sigma = (sum((v - mu) ** 2 for v in values) / len(values)).sqrt()
    if sigma == 0:
        return [Decimal(0)] * len(values)
    return [(v - mu) / sigma for v in values]


def random_toy(seed, dim=64, scale=1.0):
    rng = np.random.default_rng(seed)
    return ToyPolicy(VOCAB, rng.normal(scale=scale, size=(dim, len(VOCAB))), feature_dim=dim)


def toy_groups(seed, policy=None, advantages_seed=None):
    """
    Scored groups rolled out by a random toy policy, optionally with
    random advantages in place of the computed ones.
    """
    policy = policy or random_toy(seed)
    groups = []
    for slot, task in enumerate(TASKS):
        group = score_group(run_group(policy, ENV, task, SMALL, seed * 100 + slot * 10),
                            RewardConfig())
        if advantages_seed is not None:
            rng = np.random.default_rng(advantages_seed + slot)
            group = group.with_statistics(0.0, 1.0, tuple(rng.normal(size=len(group.trajectories))))
        groups.append(group)
    return groups


class GroupAdvantagesTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(group_advantages([1, 1, 1, 1]), (1.0, 0.0, [0.0] * 4))
        self.assertEqual(group_advantages([0, 2]), (1.0, 1.0, [-1.0, 1.0]))
        _, _, advantages = group_advantages([1.6, 0.05, 0.0])
        for value, expected in zip(advantages, oracle_advantages([1.6, 0.05, 0.0])):
            self.assertLess(abs(Decimal(value) - expected), Decimal('1e-12'))

    def test_group_too_small(self):
        with self.assertRaises(GroupTooSmall):
            group_advantages([1.0])

    def test_equal_inexact_rewards(self):
        self.assertEqual(group_advantages([0.1, 0.1, 0.1])[2], [0.0, 0.0, 0.0])

    def test_random_groups(self):
        rng = random.Random(0)
        levels = [-1.0, 0.0, 0.05, 1.0, 1.2, 1.4, 1.6]
        for _ in range(1000):
            size = rng.randint(2, 16)
            if rng.random() < 0.5:
                rewards = [rng.choice(levels) for _ in range(size)]
            else:
                rewards = [rng.uniform(-1.0, 1.6) for _ in range(size)]
            mu, sigma, advantages = group_advantages(rewards)
            if sigma == 0:
                self.assertEqual(advantages, [0.0] * size)
                continue
            self.assertLess(abs(math.fsum(advantages) / size), 1e-9)
            spread = math.sqrt(math.fsum(a * a for a in advantages) / size)
            self.assertLess(abs(spread - 1.0), 1e-9)
            for value, expected in zip(advantages, oracle_advantages(rewards)):
                self.assertLess(abs(Decimal(value) - expected), Decimal('1e-12'))

    @given(st.lists(st.integers(-32, 32), min_size=2, max_size=16), st.integers(-16, 16))
    def test_shift_invariance(self, steps, shift):
        rewards = [s / 16 for s in steps]
        shifted = [r + shift / 8 for r in rewards]
        for a, b in zip(group_advantages(rewards)[2], group_advantages(shifted)[2]):
            self.assertAlmostEqual(a, b, delta=1e-9)


class ClippedSurrogateTests(SimpleTestCase):

    def test_ratio_one(self):
        self.assertEqual(clipped_surrogate([-1.0, -2.0], [-1.0, -2.0], [1, 1], 0.5, 0.2), -0.5)

    def test_zero_advantage(self):
        self.assertEqual(clipped_surrogate([-0.1, -3.0], [-2.0, -0.5], [1, 1], 0.0, 0.2), 0.0)

    def test_clip_binds(self):
        eps, advantage = 0.2, 0.7
        loss = clipped_surrogate([-1.0 + math.log(1 + 2 * eps)], [-1.0], [1], advantage, eps)
        self.assertAlmostEqual(loss, -(1 + eps) * advantage, places=12)

    def test_unbounded_clip_is_policy_gradient(self):
        self.assertEqual(clipped_surrogate([-0.3, -1.2], [-0.3, -1.2], [1, 1], 0.8, float('inf')), -0.8)

    def test_masked_tokens_ignored(self):
        base = clipped_surrogate([-1.0, -2.0, -0.5], [-1.1, -2.0, -0.4], [1, 0, 1], 1.3, 0.2)
        perturbed = clipped_surrogate([-1.0, 8.0, -0.5], [-1.1, -2.0, -0.4], [1, 0, 1], 1.3, 0.2)
        self.assertEqual(base, perturbed)

    def test_empty_mask(self):
        with self.assertRaises(EmptyMask):
            clipped_surrogate([-1.0], [-1.0], [0], 1.0, 0.2)


class KLTermTests(SimpleTestCase):

    def test_identity(self):
        self.assertEqual(kl_term([-1.0, -0.2], [-1.0, -0.2], [1, 1]), 0.0)

    def test_scalar(self):
        self.assertAlmostEqual(kl_term([math.log(2) - 1.0], [-1.0], [1]), 0.1931, delta=1e-4)

    @given(st.lists(st.tuples(st.floats(-20, 0), st.floats(-20, 0)), min_size=1, max_size=30))
    def test_non_negative(self, pairs):
        new, ref = zip(*pairs)
        self.assertGreaterEqual(kl_term(new, ref, [1] * len(pairs)), 0.0)

    def test_empty_mask(self):
        with self.assertRaises(EmptyMask):
            kl_term([-1.0], [-1.0], [0])


class MaskingInvarianceTests(SimpleTestCase):

    def test_observation_logprobs_never_matter(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            length = int(rng.integers(5, 41))
            mask = rng.integers(0, 2, size=length)
            mask[int(rng.integers(length))] = 1
            new = -rng.exponential(size=length)
            old = -rng.exponential(size=length)
            ref = -rng.exponential(size=length)
            advantage = float(rng.normal())
            perturbed = new.copy()
            hidden = mask == 0
            perturbed[hidden] += rng.normal(scale=50.0, size=int(hidden.sum()))
            self.assertEqual(clipped_surrogate(new, old, mask, advantage, 0.2),
                             clipped_surrogate(perturbed, old, mask, advantage, 0.2))
            self.assertEqual(kl_term(new, ref, mask), kl_term(perturbed, ref, mask))


class GrpoStepTests(SimpleTestCase):

    def test_gradient_matches_finite_differences(self):
        cfg = OptimConfig(clip_eps=0.2, kl_coeff=0.1, kl_reference=KLReference.INITIAL_POLICY)
        step = 1e-5
        for b in range(10):
            generator = random_toy(b)
            groups = toy_groups(b, policy=generator, advantages_seed=1000 + b)
            rng = np.random.default_rng(2000 + b)
            current = generator.with_theta(generator.theta + rng.normal(scale=0.3, size=generator.theta.shape))
            batch = prepare_batch(current, groups, reference=random_toy(500 + b))
            _, grad, _ = objective(current.theta, batch, cfg)
            flat_grad = grad.ravel()
            active = np.flatnonzero(flat_grad)
            coords = np.concatenate([rng.choice(active, size=min(10, len(active)), replace=False),
                                     rng.integers(0, flat_grad.size, size=20 - min(10, len(active)))])
            for coord in coords:
                theta = current.theta.ravel().copy()
                theta[coord] += step
                up = objective(theta.reshape(current.theta.shape), batch, cfg)[0]
                theta[coord] -= 2 * step
                down = objective(theta.reshape(current.theta.shape), batch, cfg)[0]
                numeric = (up - down) / (2 * step)
                self.assertLessEqual(abs(numeric - flat_grad[coord]),
                                     1e-4 * max(abs(flat_grad[coord]), 1e-6))

    def test_loss_is_mean_of_trajectory_objectives(self):
        cfg = OptimConfig(kl_coeff=0.3, kl_reference=KLReference.INITIAL_POLICY)
        generator = random_toy(7)
        groups = toy_groups(7, policy=generator, advantages_seed=70)
        current = generator.with_theta(generator.theta * 1.1)
        reference = random_toy(8)
        loss, _, _ = objective(current.theta, prepare_batch(current, groups, reference), cfg)
        expected = []
        for group in groups:
            for traj, advantage in zip(group.trajectories, group.advantages):
                rows = current.rows(traj.prompt, traj.tokens)
                ids = [current.token_index.get(token) for token in traj.tokens]
                new = [0.0 if i is None else float(current.log_probs(row)[i]) for row, i in zip(rows, ids)]
                ref = [0.0 if i is None else float(reference.log_probs(row)[i]) for row, i in zip(rows, ids)]
                expected.append(
                    clipped_surrogate(new, traj.old_logprobs, traj.loss_mask, advantage, cfg.clip_eps)
                    + cfg.kl_coeff * kl_term(new, ref, traj.loss_mask))
        self.assertAlmostEqual(loss, float(np.mean(expected)), places=12)

    def test_no_signal_no_update(self):
        policy = random_toy(1)
        groups = [g.with_statistics(g.mu_r, 0.0, (0.0,) * len(g.trajectories))
                  for g in toy_groups(1, policy=policy)]
        updated, metrics = grpo_step(policy, groups, OptimConfig(kl_coeff=0.0))
        self.assertTrue(np.array_equal(updated.theta, policy.theta))
        self.assertEqual(metrics['kl'], 0.0)

    def test_duplicate_groups_average(self):
        policy = random_toy(2)
        groups = toy_groups(2, policy=policy, advantages_seed=20)
        once, _ = grpo_step(policy, groups, OptimConfig())
        twice, _ = grpo_step(policy, groups + groups, OptimConfig())
        self.assertTrue(np.allclose(once.theta, twice.theta, rtol=0.0, atol=1e-12))

    def test_metrics(self):
        policy = random_toy(3)
        groups = toy_groups(3, policy=policy)
        _, metrics = grpo_step(policy, groups, OptimConfig())
        trajectories = [t for g in groups for t in g.trajectories]
        self.assertEqual(set(metrics), {'loss', 'kl', 'mean_reward', 'mean_rt', 'mean_response_length'})
        self.assertAlmostEqual(metrics['mean_reward'], np.mean([t.reward.total for t in trajectories]))
        self.assertAlmostEqual(metrics['kl'], 0.0, places=12)

    def test_missing_logprobs(self):
        script = ScriptedPolicy(['<think>x</think><answer>Paris</answer>'])
        group = score_group(run_group(script, ENV, TASKS[0], SMALL, 0), RewardConfig())
        with self.assertRaises(MissingLogprobs):
            grpo_step(random_toy(0), [group], OptimConfig())

    def test_initial_reference_required(self):
        policy = random_toy(4)
        with self.assertRaises(ValueError):
            grpo_step(policy, toy_groups(4, policy=policy),
                      OptimConfig(kl_reference=KLReference.INITIAL_POLICY))

    def test_unscored_group(self):
        policy = random_toy(5)
        with self.assertRaises(ValueError):
            grpo_step(policy, [run_group(policy, ENV, TASKS[0], SMALL, 0)], OptimConfig())


def imports(groups, advantages=None):
    return {
        (g.group_id, t.trajectory_id): ImportedAdvantage(a if advantages is None else advantages, t.tokens)
        for g in groups for t, a in zip(g.trajectories, g.advantages)
    }


class BatchTests(SimpleTestCase):

    def test_export_and_import(self):
        groups = toy_groups(6)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'batch.jsonl'
            self.assertEqual(export_batch(path, groups), sum(len(g.trajectories) for g in groups))
            advantages = read_advantages(path)
        self.assertEqual(advantages, imports(groups))
        flipped = {key: replace(value, advantage=-value.advantage) for key, value in advantages.items()}
        injected = inject_advantages(groups, flipped)
        self.assertEqual(injected[0].advantages, tuple(-a for a in groups[0].advantages))
        self.assertEqual(injected[0].mu_r, groups[0].mu_r)

    def test_partial_cover_rejected(self):
        groups = toy_groups(6)
        first = groups[0]
        partial = {(first.group_id, first.trajectories[0].trajectory_id):
                   ImportedAdvantage(1.0, first.trajectories[0].tokens)}
        with self.assertRaises(BatchMismatch):
            inject_advantages(groups, partial, partial=True)
        self.assertEqual(inject_advantages(groups[1:], partial, partial=True), groups[1:])

    def test_other_policy_with_the_same_ids_rejected(self):
        exported = toy_groups(6)
        rolled = toy_groups(6, policy=random_toy(7))
        self.assertEqual([g.group_id for g in exported], [g.group_id for g in rolled])
        self.assertEqual([t.trajectory_id for g in exported for t in g.trajectories],
                         [t.trajectory_id for g in rolled for t in g.trajectories])
        with self.assertRaises(BatchMismatch):
            inject_advantages(rolled, imports(exported), partial=True)


def seeded_world(n_entities=4, feature_dim=256, epochs=20, seed=0, coverage=1.0, **seeding):
    world, tasks, docs = generate_world(seed, n_entities, 0.5, external_coverage=coverage)
    index = index_corpus(docs)
    policy = seed_toy_policy(world, tasks, index,
                             SeedingConfig(feature_dim=feature_dim, epochs=epochs, **seeding))
    return world, tasks, index, policy


class TrainTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.world, cls.tasks, cls.index, cls.policy = seeded_world()

    def config(self, steps):
        return TrainConfig(
            rollout=RolloutConfig(max_turns=3, max_tokens=24, group_size=2),
            optim=OptimConfig(steps=steps, batch_tasks=2),
            seed=11,
        )

    def test_zero_steps(self):
        policy, log = train(self.policy, self.index, self.tasks, self.config(0))
        self.assertEqual(log, [])
        self.assertIs(policy, self.policy)

    def test_same_seed_same_log(self):
        with tempfile.TemporaryDirectory() as tmp:
            first, second = Path(tmp) / 'a.jsonl', Path(tmp) / 'b.jsonl'
            _, log = train(self.policy, self.index, self.tasks, self.config(3), log_path=first)
            train(self.policy, self.index, self.tasks, self.config(3), log_path=second)
            self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertEqual([record['step'] for record in log], [0, 1, 2])
        self.assertTrue({'step', 'reward', 'rt', 'resp_len', 'kl', 'easy_rt', 'hard_rt'} <= set(log[0]))

    def test_imported_advantages_used(self):
        cfg = self.config(1)
        groups = collect_groups(self.policy, self.index, self.tasks, cfg, 0, np.random.default_rng(cfg.seed))
        zeros = imports(groups, 0.0)
        cfg = replace(cfg, optim=replace(cfg.optim, kl_coeff=0.0))
        policy, _ = train(self.policy, self.index, self.tasks, cfg, advantages=zeros)
        self.assertTrue(np.array_equal(policy.theta, self.policy.theta))

    def test_import_matching_nothing_is_rejected(self):
        other = replace(self.config(1), seed=12)
        groups = collect_groups(self.policy, self.index, self.tasks, other, 0, np.random.default_rng(other.seed))
        with self.assertRaises(BatchMismatch):
            train(self.policy, self.index, self.tasks, self.config(1), advantages=imports(groups))

    def test_unused_imported_groups_are_reported(self):
        cfg = self.config(1)
        groups = collect_groups(self.policy, self.index, self.tasks, cfg, 0, np.random.default_rng(cfg.seed))
        advantages = imports(groups)
        advantages[('ghost@0', 'ghost/0')] = ImportedAdvantage(1.0, ('<think>',))
        with self.assertLogs('grpo.training', level='WARNING') as logs:
            train(self.policy, self.index, self.tasks, cfg, advantages=advantages)
        self.assertIn('ghost@0', logs.output[0])


def final_average(log, key, window=20):
    values = [record[key] for record in log[-window:] if record[key] is not None]
    return sum(values) / len(values)


def first_average(log, key, window=20):
    values = [record[key] for record in log[:window] if record[key] is not None]
    return sum(values) / len(values)


@unittest.skipUnless(SLOW, 'set KBH_SLOW_TESTS=1 to run end-to-end training')
class DirectionalTrainingTests(SimpleTestCase):
    """
    Reward and dataset ablations on the synthetic world.

    The corpus documents a tenth of the facts outside the internal subset,
    so most searches on hard tasks come back empty-handed. Seeding gives
    every task the same search-or-answer split and drops the answer tag
    from half of the answer turns: RL has to find both the boundary and
    the format.
    """

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        world, tasks, index, policy = seeded_world(
            n_entities=60, feature_dim=4096, epochs=40, seed=3, coverage=0.1,
            guess_demo_weight=0.15, answer_slip=0.5)
        cls.index, cls.policy = index, policy
        easy = [t for t in tasks if t.label == Label.EASY]
        hard = [t for t in tasks if t.label == Label.HARD]
        cls.easy, cls.hard = easy, hard
        cls.balanced = build_balanced(easy, hard, 100, seed=3)
        cls.runs = {}

    @classmethod
    def train_run(cls, variant=RewardVariant.FULL, dataset=None, key=None):
        key = key or variant
        if key not in cls.runs:
            cfg = TrainConfig(
                rollout=RolloutConfig(max_turns=4, max_tokens=24, group_size=8),
                reward=RewardConfig(variant=variant),
                optim=OptimConfig(steps=200, batch_tasks=4, learning_rate=0.5),
                seed=3,
            )
            cls.runs[key] = train(cls.policy, cls.index, dataset or cls.balanced, cfg)[1]
        return cls.runs[key]

    def test_reward_grows(self):
        log = self.train_run()
        self.assertGreaterEqual(final_average(log, 'reward'), 1.5 * first_average(log, 'reward'))

    def test_searches_only_beyond_the_boundary(self):
        log = self.train_run()
        self.assertLessEqual(final_average(log, 'easy_search_rate'), 0.3)
        self.assertGreaterEqual(final_average(log, 'hard_search_rate'), 0.7)

    def test_without_boundary_reward_easy_tasks_keep_searching(self):
        log = self.train_run(RewardVariant.NO_KB)
        self.assertGreaterEqual(final_average(log, 'easy_search_rate'), 0.8)

    def test_without_failed_search_reward(self):
        full = self.train_run()
        ablated = self.train_run(RewardVariant.NO_KB_MINUS)
        self.assertLessEqual(final_average(ablated, 'hard_search_rate'), 0.4)
        self.assertLess(final_average(ablated, 'hard_accuracy'), final_average(full, 'hard_accuracy'))

    def test_difficulty_mix_orders_search_counts(self):
        size = min(len(self.easy), len(self.hard), 200) // 2 * 2
        mixes = {
            mix: build_mixture(self.easy, self.hard, mix, size, seed=3)
            for mix in (DatasetMix.EASY, DatasetMix.HARD, DatasetMix.BALANCED)
        }
        rt = {mix: final_average(self.train_run(dataset=tasks, key=f'mix-{mix}'), 'rt')
              for mix, tasks in mixes.items()}
        self.assertLess(rt[DatasetMix.EASY], rt[DatasetMix.BALANCED])
        self.assertLess(rt[DatasetMix.BALANCED], rt[DatasetMix.HARD])
