from environment.index import index_corpus
from grpo.training import score_group
from kb_harness.utils import dump_records
from rollout.engine import derive_seed, run_group
from rollout.serializers import GroupManifestSerializer, TrajectorySerializer

from ...base import HarnessCommand


class Command(HarnessCommand):
    help = 'Roll out one scored group per task and log the trajectories.'

    def run(self, cfg):
        policy = self.policy(cfg)
        env = index_corpus(self.documents(cfg))
        rollout_cfg, reward_cfg = cfg.rollout(), cfg.reward()
        groups = [
            score_group(run_group(policy, env, task, rollout_cfg, derive_seed(cfg.seed, slot),
                                  workers=cfg.workers, template_path=cfg.prompt_path), reward_cfg)
            for slot, task in enumerate(self.tasks(cfg))
        ]
        out = cfg.path('out', 'trajectories.jsonl')
        trajectories = [traj for group in groups for traj in group.trajectories]
        dump_records(out, trajectories, TrajectorySerializer)
        dump_records(out.with_name('groups.jsonl'), groups, GroupManifestSerializer)
        self.done(f'trajectories written to {out}: groups={len(groups)} trajectories={len(trajectories)}')
