from dataclasses import dataclass, field, replace
from typing import Optional

from dataset.domain import TaskInstance
from protocol.domain import ParsedTrajectory
from reward.domain import RewardBreakdown


@dataclass(frozen=True)
class RolloutConfig:
    max_turns: int = 6
    max_retrievals: int = 4
    rt_max: int = 3
    k_docs: int = 3
    max_obs_chars: int = 1200
    group_size: int = 16
    max_tokens: int = 64
    temperature: float = 1.0

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValueError('max_turns must be at least 1')
        if self.max_retrievals < 0:
            raise ValueError('max_retrievals must be non-negative')
        if self.rt_max < 1:
            raise ValueError('rt_max must be at least 1')
        if self.k_docs < 1:
            raise ValueError('k_docs must be at least 1')
        if self.group_size < 2:
            raise ValueError('group_size must be at least 2')

    def with_temperature(self, temperature: float) -> 'RolloutConfig':
        return replace(self, temperature=temperature)


@dataclass(frozen=True)
class Trajectory:
    """
    Token-level record of one rollout.

    ``tokens`` exclude the prompt. ``old_logprobs`` hold the generating
    policy's log-probabilities on agent tokens and 0.0 on observation
    tokens; they are None when the policy does not report them.
    """
    task: TaskInstance
    prompt: str
    parsed: ParsedTrajectory
    tokens: tuple[str, ...]
    loss_mask: tuple[int, ...]
    retrieval_count: int
    max_turns: int
    max_retrievals: int
    old_logprobs: Optional[tuple[float, ...]] = None
    reward: Optional[RewardBreakdown] = None
    seed: int = 0
    trajectory_id: str = ''

    def __post_init__(self):
        if len(self.loss_mask) != len(self.tokens):
            raise ValueError('loss_mask and tokens differ in length')
        if self.old_logprobs is not None and len(self.old_logprobs) != len(self.tokens):
            raise ValueError('old_logprobs and tokens differ in length')
        if self.retrieval_count > self.max_retrievals:
            raise ValueError('retrieval_count exceeds max_retrievals')

    @property
    def response_length(self) -> int:
        return sum(self.loss_mask)

    @property
    def text(self) -> str:
        return self.parsed.text()

    def with_reward(self, reward: RewardBreakdown) -> 'Trajectory':
        return replace(self, reward=reward)


@dataclass(frozen=True)
class GroupBatch:
    """
    G rollouts of one task. Group statistics stay at their defaults until
    the trajectories are scored.
    """
    task: TaskInstance
    group_id: str
    seed: int
    trajectories: tuple[Trajectory, ...]
    mu_r: float = 0.0
    sigma_r: float = 0.0
    advantages: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.advantages and len(self.advantages) != len(self.trajectories):
            raise ValueError('one advantage per trajectory is required')

    @property
    def rewards(self) -> list[float]:
        missing = [t.trajectory_id for t in self.trajectories if t.reward is None]
        if missing:
            raise ValueError(f'unscored trajectories: {missing}')
        return [t.reward.total for t in self.trajectories]

    def with_statistics(self, mu_r: float, sigma_r: float,
                        advantages: tuple[float, ...]) -> 'GroupBatch':
        return replace(self, mu_r=mu_r, sigma_r=sigma_r, advantages=tuple(advantages))
