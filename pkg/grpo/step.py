"""
One optimizer update of the toy policy on scored groups.

The loss is the mean over trajectories of the masked clipped surrogate
plus ``kl_coeff`` times the masked k3 estimate. Its gradient is assembled
in closed form: every action token contributes ``c_t * ∇ log π(a_t|s_t)``
with ``∇ log π = φ(s_t) ⊗ (onehot(a_t) - π(·|s_t))``.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from policy.toy import ToyPolicy, batch_log_probs, scatter_gradient, stack_rows
from rollout.domain import GroupBatch

from .domain import KLReference, OptimConfig
from .exceptions import EmptyMask, MissingLogprobs
from .objective import k3

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreparedBatch:
    """
    Action tokens of every trajectory, flattened.

    ``weights`` are ``1 / (action tokens of the trajectory × trajectories)``
    so a weighted sum is the mean of per-trajectory masked means.
    """
    idx: np.ndarray
    vals: np.ndarray
    targets: np.ndarray
    old_lp: np.ndarray
    ref_lp: Optional[np.ndarray]
    advantages: np.ndarray
    weights: np.ndarray
    n_trajectories: int


def prepare_batch(policy: ToyPolicy, groups: Sequence[GroupBatch],
                  reference: Optional[ToyPolicy] = None) -> PreparedBatch:
    selected = []
    for group in groups:
        if len(group.advantages) != len(group.trajectories):
            raise ValueError(f'group {group.group_id} has not been scored')
        for traj, advantage in zip(group.trajectories, group.advantages):
            if traj.old_logprobs is None:
                raise MissingLogprobs(traj.trajectory_id)
            wanted = [i for i, bit in enumerate(traj.loss_mask) if bit]
            if not wanted:
                raise EmptyMask()
            selected.append((traj, advantage, wanted))
    if not selected:
        raise ValueError('no trajectories to train on')

    rows, targets, old_lp, advantages, weights = [], [], [], [], []
    for traj, advantage, wanted in selected:
        rows.extend(policy.rows(traj.prompt, traj.tokens, wanted))
        targets.extend(policy.token_id(traj.tokens[i]) for i in wanted)
        old_lp.extend(traj.old_logprobs[i] for i in wanted)
        advantages.extend([advantage] * len(wanted))
        weights.extend([1.0 / (len(wanted) * len(selected))] * len(wanted))

    idx, vals = stack_rows(rows)
    targets = np.asarray(targets, dtype=np.int64)
    ref_lp = None
    if reference is not None:
        ref_lp = batch_log_probs(reference.theta, idx, vals)[np.arange(len(targets)), targets]
    return PreparedBatch(
        idx=idx,
        vals=vals,
        targets=targets,
        old_lp=np.asarray(old_lp, dtype=np.float64),
        ref_lp=ref_lp,
        advantages=np.asarray(advantages, dtype=np.float64),
        weights=np.asarray(weights, dtype=np.float64),
        n_trajectories=len(selected),
    )


def objective(theta: np.ndarray, batch: PreparedBatch,
              cfg: OptimConfig) -> tuple[float, np.ndarray, float]:
    """
    Loss, its gradient with respect to ``theta`` and the KL estimate.
    """
    logp = batch_log_probs(theta, batch.idx, batch.vals)
    positions = np.arange(len(batch.targets))
    new_lp = logp[positions, batch.targets]
    ref_lp = batch.old_lp if batch.ref_lp is None else batch.ref_lp

    ratio = np.exp(new_lp - batch.old_lp)
    unclipped = ratio * batch.advantages
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * batch.advantages
    kl = k3(new_lp, ref_lp)
    loss = float(np.sum(batch.weights * (kl * cfg.kl_coeff - np.minimum(unclipped, clipped))))

    # d loss / d new_lp; the clipped branch is constant in theta
    d_new = np.where(unclipped <= clipped, -unclipped, 0.0)
    d_new = batch.weights * (d_new + cfg.kl_coeff * -np.expm1(ref_lp - new_lp))
    coeff = -np.exp(logp) * d_new[:, None]
    coeff[positions, batch.targets] += d_new
    grad = scatter_gradient(theta.shape, batch.idx, batch.vals, coeff)
    return loss, grad, float(np.sum(batch.weights * kl))


def grpo_step(policy: ToyPolicy, groups: Sequence[GroupBatch], cfg: OptimConfig,
              reference: Optional[ToyPolicy] = None) -> tuple[ToyPolicy, dict]:
    """
    Gradient descent on the loss, ``inner_epochs`` times over the same
    groups. ``reference`` is required when the KL reference is the
    initial policy; otherwise the old log-probabilities serve as reference.
    """
    if cfg.kl_reference == KLReference.INITIAL_POLICY:
        if reference is None:
            raise ValueError('the initial-policy KL reference needs a reference policy')
    else:
        reference = None
    batch = prepare_batch(policy, groups, reference)

    theta = policy.theta.copy()
    first = None
    for _epoch in range(cfg.inner_epochs):
        loss, grad, kl = objective(theta, batch, cfg)
        if first is None:
            first = (loss, kl)
        theta -= cfg.learning_rate * grad

    trajectories = [traj for group in groups for traj in group.trajectories]
    rewards = [traj.reward.total for traj in trajectories if traj.reward is not None]
    metrics = {
        'loss': first[0],
        'kl': first[1],
        'mean_reward': float(np.mean(rewards)) if rewards else 0.0,
        'mean_rt': float(np.mean([traj.retrieval_count for traj in trajectories])),
        'mean_response_length': float(np.mean([traj.response_length for traj in trajectories])),
    }
    logger.debug('grpo step trajectories=%d tokens=%d loss=%.5f kl=%.6f',
                 batch.n_trajectories, len(batch.targets), metrics['loss'], metrics['kl'])
    return policy.with_theta(theta), metrics
