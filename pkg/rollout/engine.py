"""
The agent-environment loop.

Each turn the policy continues the prompt plus the transcript so far and
stops after ``</search>`` or ``</answer>``. A search is answered with a
``<context>`` observation; an answer, a malformed turn or the turn cap
ends the rollout.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from environment.index import NO_RESULTS, SEARCH_LIMIT, CorpusIndex, observation_body, retrieve
from policy.domain import GenerationRequest, GenerationResponse, PolicyHandle, generate
from protocol.domain import SegmentKind, Terminal
from protocol.exceptions import MalformedError
from protocol.parser import STOP_SEQUENCES, TranscriptBuilder, compute_loss_mask, cut_at_stop, parse_action
from protocol.tokenizer import tokenize

from .domain import GroupBatch, RolloutConfig, Trajectory
from .prompts import agent_prompt

logger = logging.getLogger(__name__)


def derive_seed(*entropy: int) -> int:
    """
    A 32-bit seed mixed from non-negative integers.
    """
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _turn_tokens(response: GenerationResponse, text: str) -> tuple[list[str], Optional[tuple[float, ...]]]:
    """
    The policy's own tokens when they spell the kept text, else a local
    tokenization without log-probabilities.
    """
    if response.tokens and ''.join(response.tokens) == text:
        return list(response.tokens), response.logprobs
    return tokenize(text), None


def _observe(env: CorpusIndex, query: str, retrievals: int, cfg: RolloutConfig) -> tuple[str, int]:
    if not query.strip():
        return NO_RESULTS, 0
    if retrievals >= cfg.max_retrievals:
        return SEARCH_LIMIT, 0
    result = retrieve(env, query.strip(), cfg.k_docs)
    return observation_body(result, env, cfg.max_obs_chars), 1


def run_rollout(policy: PolicyHandle, env: CorpusIndex, task, cfg: RolloutConfig, seed: int,
                *, template_path: Optional[str] = None) -> Trajectory:
    prompt = agent_prompt(task.question, cfg.max_retrievals, template_path)
    builder = TranscriptBuilder()
    logprobs: Optional[list[float]] = []
    transcript = ''
    retrievals = 0
    terminal = Terminal.TRUNCATED

    for turn in range(cfg.max_turns):
        response = generate(policy, GenerationRequest(
            prompt=prompt + transcript,
            stop_sequences=STOP_SEQUENCES,
            max_tokens=cfg.max_tokens,
            temperature=cfg.temperature,
            seed=derive_seed(seed, turn),
            transcript_start=len(prompt),
        ))
        text = cut_at_stop(response.text)
        tokens, turn_logprobs = _turn_tokens(response, text)
        if logprobs is not None and turn_logprobs is not None:
            logprobs.extend(turn_logprobs)
        else:
            logprobs = None
        transcript += text

        try:
            segments = parse_action(text)
        except MalformedError as exc:
            builder.add_residue(text, tokens, exc.reason.value)
            terminal = Terminal.MALFORMED
            break
        builder.add_agent_turn(segments, tokens)
        action = segments[-1]
        if action.kind == SegmentKind.ANSWER:
            terminal = Terminal.ANSWERED
            break

        body, retrieved = _observe(env, action.body, retrievals, cfg)
        retrievals += retrieved
        observation = f'<context>{body}</context>'
        observation_tokens = tokenize(observation)
        builder.add_context(body, observation_tokens)
        if logprobs is not None:
            logprobs.extend([0.0] * len(observation_tokens))
        transcript += observation

    parsed = builder.build(terminal)
    logger.debug('rollout done task=%s seed=%d terminal=%s rt=%d tokens=%d',
                 task.task_id, seed, terminal.value, retrievals, parsed.n_tokens)
    return Trajectory(
        task=task,
        prompt=prompt,
        parsed=parsed,
        tokens=tuple(builder.tokens),
        loss_mask=tuple(compute_loss_mask(parsed)),
        retrieval_count=retrievals,
        max_turns=cfg.max_turns,
        max_retrievals=cfg.max_retrievals,
        old_logprobs=None if logprobs is None else tuple(logprobs),
        seed=seed,
        trajectory_id=f'{task.task_id}/{seed}',
    )


def run_group(policy: PolicyHandle, env: CorpusIndex, task, cfg: RolloutConfig, seed: int,
              *, workers: int = 1, template_path: Optional[str] = None,
              group_id: Optional[str] = None) -> GroupBatch:
    """
    ``group_size`` rollouts of one task with seeds ``seed, seed + 1, …``.

    Every rollout depends only on its own seed, so running them on a
    thread pool gives the same group as running them in order.
    """
    seeds = [seed + i for i in range(cfg.group_size)]

    def one(rollout_seed: int) -> Trajectory:
        return run_rollout(policy, env, task, cfg, rollout_seed, template_path=template_path)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            trajectories = list(pool.map(one, seeds))
    else:
        trajectories = [one(s) for s in seeds]
    return GroupBatch(
        task=task,
        group_id=group_id or f'{task.task_id}@{seed}',
        seed=seed,
        trajectories=tuple(trajectories),
    )


def count_valid_retrievals(traj: Trajectory) -> int:
    """
    Searches with a non-empty query that were answered by an observation,
    capped at the environment's retrieval limit.
    """
    searches = 0
    previous = None
    for segment in traj.parsed.segments:
        if (segment.kind == SegmentKind.CONTEXT and previous is not None
                and previous.kind == SegmentKind.SEARCH and previous.body.strip()):
            searches += 1
        previous = segment
    return min(searches, traj.max_retrievals)
