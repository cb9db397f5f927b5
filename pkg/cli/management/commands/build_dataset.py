from dataset.balance import build_mixture, split_by_label
from dataset.domain import DatasetMix
from dataset.serializers import TaskInstanceSerializer
from kb_harness.utils import dump_records

from ...base import HarnessCommand


class Command(HarnessCommand):
    help = 'Sample a training set from labeled tasks.'

    def run(self, cfg):
        easy, hard = split_by_label(self.tasks(cfg))
        size = 2 * cfg.n_per_class if cfg.mix == DatasetMix.BALANCED else cfg.n_per_class
        dataset = build_mixture(easy, hard, cfg.mix, size, cfg.seed)
        out = cfg.path('dataset', 'dataset.jsonl')
        dump_records(out, dataset, TaskInstanceSerializer)
        self.done(f'dataset written to {out}: tasks={len(dataset)} mix={cfg.mix}')
