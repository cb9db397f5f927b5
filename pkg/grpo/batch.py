"""
Batch export for external trainers and advantage import.

An imported advantage only attaches to the trajectory it was computed
for: the group and trajectory ids must match and so must the tokens.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from kb_harness.utils import load_records, write_jsonl
from rollout.domain import GroupBatch

from .exceptions import BatchMismatch
from .serializers import BatchRecordSerializer

logger = logging.getLogger(__name__)

AdvantageKey = tuple[str, str]


@dataclass(frozen=True)
class ImportedAdvantage:
    advantage: float
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'tokens', tuple(self.tokens))


def export_batch(path: str | Path, groups: Sequence[GroupBatch]) -> int:
    records = (
        BatchRecordSerializer((group, traj, advantage)).data
        for group in groups
        for traj, advantage in zip(group.trajectories, group.advantages)
    )
    count = write_jsonl(path, records)
    logger.info('batch exported path=%s groups=%d trajectories=%d', path, len(groups), count)
    return count


def read_advantages(path: str | Path) -> dict[AdvantageKey, ImportedAdvantage]:
    return {
        (record['group_id'], record['trajectory_id']): ImportedAdvantage(record['advantage'], record['tokens'])
        for record in load_records(path, BatchRecordSerializer)
    }


def imported_group_ids(advantages: Mapping[AdvantageKey, ImportedAdvantage]) -> set[str]:
    return {group_id for group_id, _ in advantages}


def inject_advantages(groups: Sequence[GroupBatch], advantages: Mapping[AdvantageKey, ImportedAdvantage],
                      *, partial: bool = False) -> list[GroupBatch]:
    """
    Replace each group's advantages with the imported ones. A group the
    import does not mention is kept as is when ``partial``; a group it
    covers only in part, or with other tokens, is always an error.
    """
    out = []
    for group in groups:
        keys = [(group.group_id, traj.trajectory_id) for traj in group.trajectories]
        found = [key in advantages for key in keys]
        if not any(found) and partial:
            out.append(group)
            continue
        if not all(found):
            missing = [key[1] for key, hit in zip(keys, found) if not hit]
            raise BatchMismatch(group.group_id, f'no advantage for {missing}')
        for key, traj in zip(keys, group.trajectories):
            if advantages[key].tokens != traj.tokens:
                raise BatchMismatch(group.group_id,
                                    f'trajectory {traj.trajectory_id!r} was exported with other tokens')
        out.append(group.with_statistics(group.mu_r, group.sigma_r,
                                         tuple(advantages[key].advantage for key in keys)))
    return out
