from django.core.management.base import CommandError

from dataset.balance import build_mixture, split_by_label
from dataset.domain import DatasetMix
from environment.index import index_corpus
from environment.world import generate_world, world_documents
from grpo.batch import read_advantages
from grpo.training import train
from policy.domain import PolicyKind
from policy.loader import parse_selection
from policy.seeding import seed_toy_policy
from policy.toy import ToyPolicy

from ...base import HarnessCommand, read_world


class Command(HarnessCommand):
    help = 'Seed a toy policy on a synthetic world and train it with GRPO.'

    def world(self, cfg):
        if cfg.world:
            world, tasks = read_world(cfg.world)
            return world, tasks, world_documents(world)
        return generate_world(cfg.seed, cfg.n_entities, cfg.internal_fraction,
                              two_hop_fraction=cfg.two_hop_fraction,
                              external_coverage=cfg.external_coverage)

    def dataset(self, cfg, tasks):
        if cfg.dataset:
            return self.tasks(cfg, 'dataset')
        easy, hard = split_by_label(tasks)
        size = 2 * cfg.n_per_class if cfg.mix == DatasetMix.BALANCED else cfg.n_per_class
        return build_mixture(easy, hard, cfg.mix, size, cfg.seed)

    def run(self, cfg):
        kind, target = parse_selection(cfg.policy)
        if kind != PolicyKind.TOY:
            raise CommandError('--policy: train-toy trains toy policies only')
        world, tasks, docs = self.world(cfg)
        env = index_corpus(docs)
        policy = ToyPolicy.load(target) if target else seed_toy_policy(world, tasks, env, cfg.seeding())
        advantages = read_advantages(cfg.batch) if cfg.batch else None
        log_path = cfg.path('out', 'train.jsonl')
        policy, log = train(policy, env, self.dataset(cfg, tasks), cfg.train(),
                            log_path=log_path, advantages=advantages)
        policy.save(log_path.with_name('policy.npz'))
        if log:
            self.stdout.write(f"final reward={log[-1]['reward']} rt={log[-1]['rt']}")
        self.done(f'training log written to {log_path}')
