import numpy as np

from environment.index import index_corpus
from grpo.batch import export_batch
from grpo.training import collect_groups

from ...base import HarnessCommand


class Command(HarnessCommand):
    help = 'Roll out and score one training batch and export it for an external trainer.'

    def run(self, cfg):
        train_cfg = cfg.train()
        dataset = self.tasks(cfg, 'dataset') if cfg.dataset else self.tasks(cfg)
        groups = collect_groups(self.policy(cfg), index_corpus(self.documents(cfg)), dataset,
                                train_cfg, step=0, rng=np.random.default_rng(cfg.seed))
        out = cfg.path('batch', 'batch.jsonl')
        count = export_batch(out, groups)
        self.done(f'batch written to {out}: groups={len(groups)} trajectories={count}')
