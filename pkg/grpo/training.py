"""
The training loop: snapshot, collect, score, standardize, update.
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from dataset.domain import Label, TaskInstance
from environment.index import CorpusIndex
from kb_harness.utils import dumps_line
from policy.domain import PolicyHandle
from policy.toy import ToyPolicy
from reward.domain import RewardConfig
from reward.scoring import total_reward
from rollout.domain import GroupBatch, RolloutConfig
from rollout.engine import derive_seed, run_group

from .batch import AdvantageKey, ImportedAdvantage, imported_group_ids, inject_advantages
from .domain import OptimConfig
from .exceptions import BatchMismatch
from .objective import group_advantages
from .step import grpo_step

logger = logging.getLogger(__name__)

LOG_EVERY = 10


@dataclass(frozen=True)
class TrainConfig:
    rollout: RolloutConfig = RolloutConfig()
    reward: RewardConfig = RewardConfig()
    optim: OptimConfig = OptimConfig()
    seed: int = 0
    workers: int = 1
    template_path: Optional[str] = None


def score_group(group: GroupBatch, cfg: RewardConfig) -> GroupBatch:
    trajectories = tuple(traj.with_reward(total_reward(traj, traj.task.golds, cfg))
                         for traj in group.trajectories)
    mu, sigma, advantages = group_advantages([traj.reward.total for traj in trajectories])
    return replace(group, trajectories=trajectories).with_statistics(mu, sigma, advantages)


def collect_groups(policy: PolicyHandle, env: CorpusIndex, dataset: Sequence[TaskInstance],
                   cfg: TrainConfig, step: int, rng: np.random.Generator) -> list[GroupBatch]:
    """
    Roll out and score one group per sampled task. The task draw comes
    from ``rng``; rollout seeds depend only on (seed, step, slot).
    """
    size = min(cfg.optim.batch_tasks, len(dataset))
    picks = rng.choice(len(dataset), size=size, replace=False)
    groups = []
    for slot, pick in enumerate(picks):
        task = dataset[int(pick)]
        group = run_group(policy, env, task, cfg.rollout, derive_seed(cfg.seed, step, slot),
                          workers=cfg.workers, template_path=cfg.template_path)
        groups.append(score_group(group, cfg.reward))
    return groups


def _mean(values) -> Optional[float]:
    values = list(values)
    return round(float(np.mean(values)), 6) if values else None


def step_record(step: int, groups: Sequence[GroupBatch], metrics: dict) -> dict:
    trajectories = [traj for group in groups for traj in group.trajectories]

    def by_label(label):
        return [traj for traj in trajectories if traj.task.label == label]

    return {
        'step': step,
        'reward': _mean(traj.reward.total for traj in trajectories),
        'rt': _mean(traj.retrieval_count for traj in trajectories),
        'resp_len': _mean(traj.response_length for traj in trajectories),
        'kl': round(metrics['kl'], 8),
        'loss': round(metrics['loss'], 8),
        'accuracy': _mean(traj.reward.r_ans or 0 for traj in trajectories),
        'easy_rt': _mean(traj.retrieval_count for traj in by_label(Label.EASY)),
        'hard_rt': _mean(traj.retrieval_count for traj in by_label(Label.HARD)),
        'easy_search_rate': _mean(traj.retrieval_count > 0 for traj in by_label(Label.EASY)),
        'hard_search_rate': _mean(traj.retrieval_count > 0 for traj in by_label(Label.HARD)),
        'easy_accuracy': _mean(traj.reward.r_ans or 0 for traj in by_label(Label.EASY)),
        'hard_accuracy': _mean(traj.reward.r_ans or 0 for traj in by_label(Label.HARD)),
    }


def train(policy: ToyPolicy, env: CorpusIndex, dataset: Sequence[TaskInstance], cfg: TrainConfig,
          *, log_path: Optional[str | Path] = None,
          advantages: Optional[Mapping[AdvantageKey, ImportedAdvantage]] = None) -> tuple[ToyPolicy, list[dict]]:
    """
    ``optim.steps`` GRPO iterations. Each iteration rolls out with a frozen
    snapshot of the current policy, which is also the old policy of the
    clipped ratio. ``advantages`` keyed by (group_id, trajectory_id)
    replace the computed ones for every group they fully cover; imported
    groups that never come up are reported, and an import that matches
    nothing at all raises BatchMismatch.
    """
    if not dataset:
        raise ValueError('dataset is empty')
    reference = policy.snapshot()
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []
    imported = imported_group_ids(advantages) if advantages else set()
    matched: set[str] = set()
    handle = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        handle = Path(log_path).open('w', encoding='utf-8', newline='\n')
    try:
        for step in range(cfg.optim.steps):
            old = policy.snapshot()
            groups = collect_groups(old, env, dataset, cfg, step, rng)
            if advantages:
                groups = inject_advantages(groups, advantages, partial=True)
                matched.update(imported.intersection(group.group_id for group in groups))
            policy, metrics = grpo_step(policy, groups, cfg.optim, reference)
            record = step_record(step, groups, metrics)
            log.append(record)
            if handle is not None:
                handle.write(dumps_line(record))
                handle.flush()
            if step % LOG_EVERY == 0 or step == cfg.optim.steps - 1:
                logger.info('train step=%d reward=%s rt=%s easy_rt=%s hard_rt=%s kl=%s',
                            step, record['reward'], record['rt'], record['easy_rt'],
                            record['hard_rt'], record['kl'])
    finally:
        if handle is not None:
            handle.close()
    if imported and cfg.optim.steps:
        unmatched = sorted(imported - matched)
        if not matched:
            raise BatchMismatch(unmatched[0], 'no imported group matched a collected group')
        if unmatched:
            logger.warning('imported advantages unused groups=%d first=%s', len(unmatched), unmatched[0])
    return policy, log
