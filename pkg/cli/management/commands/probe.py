from dataset.domain import Label
from dataset.probing import label_tasks, probe_dataset, read_probe_cache, synthetic_exemplars, write_probe_cache
from dataset.serializers import TaskInstanceSerializer
from kb_harness.utils import dump_records

from ...base import HarnessCommand, read_world


class Command(HarnessCommand):
    help = ('Probe each task from internal knowledge and label it easy or hard. '
            'Without a policy source the probe cache is relabeled instead.')

    def run(self, cfg):
        tasks = self.tasks(cfg)
        cache = cfg.path('probe_cache', 'probe.jsonl')
        if cfg.policy.partition(':')[2]:
            exemplars = synthetic_exemplars(read_world(cfg.world)[0]) if cfg.world else None
            probes = probe_dataset(self.policy(cfg), tasks, cfg.probe(exemplars), cfg.seed,
                                   workers=cfg.workers)
            write_probe_cache(cache, probes)
        else:
            probes = read_probe_cache(cache)
        labeled = label_tasks(tasks, probes)
        out = cfg.path('out', 'labeled.jsonl')
        dump_records(out, labeled, TaskInstanceSerializer)
        easy = sum(1 for task in labeled if task.label == Label.EASY)
        self.stdout.write(f'tasks={len(labeled)} easy={easy} hard={len(labeled) - easy}')
        self.done(f'labeled tasks written to {out}')
