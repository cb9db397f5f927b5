from dataset.serializers import TaskInstanceSerializer
from environment.serializers import DocumentSerializer
from environment.world import generate_world
from kb_harness.utils import dump_records

from ...base import HarnessCommand, write_world


class Command(HarnessCommand):
    help = 'Generate a synthetic fact world with its tasks and corpus.'

    def run(self, cfg):
        world, tasks, docs = generate_world(
            cfg.seed, cfg.n_entities, cfg.internal_fraction, two_hop_fraction=cfg.two_hop_fraction,
            external_coverage=cfg.external_coverage)
        write_world(cfg.path('world', 'world.json'), world, tasks)
        dump_records(cfg.path('tasks', 'tasks.jsonl'), tasks, TaskInstanceSerializer)
        dump_records(cfg.path('corpus', 'corpus.jsonl'), docs, DocumentSerializer)
        self.done(f'world written: facts={len(world.facts)} tasks={len(tasks)} docs={len(docs)}')
