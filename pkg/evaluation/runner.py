"""
Evaluation runs: one greedy rollout per task, aggregated into EM and RT
per (source, label) subset.
"""
import logging
import math
import zlib
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Optional, Sequence

from dataset.domain import Label, TaskInstance
from dataset.probing import PROBE_STOP, extract_probe_answer, probe_prompt
from environment.index import CorpusIndex, observation_body, retrieve
from kb_harness.utils import dump_records
from policy.domain import GenerationRequest, PolicyHandle, generate
from reward.domain import RewardConfig
from reward.metrics import exact_match
from reward.scoring import total_reward
from rollout.domain import RolloutConfig
from rollout.engine import derive_seed, run_rollout

from .domain import EvalMode, EvalRecord, EvalReport, SubsetStats
from .serializers import EvalRecordSerializer

logger = logging.getLogger(__name__)

GREEDY = 0.0


def task_seed(seed: int, task: TaskInstance) -> int:
    return derive_seed(seed, zlib.crc32(task.task_id.encode('utf-8')))


def _record(task: TaskInstance, mode: EvalMode, answer: str, rt: int, text: str) -> EvalRecord:
    em = exact_match(answer, task.golds) if answer else 0
    return EvalRecord(task.task_id, task.source, task.label.value, mode, answer, em, rt, text)


def _answer_once(policy: PolicyHandle, prompt: str, cfg: RolloutConfig, seed: int) -> str:
    response = generate(policy, GenerationRequest(
        prompt=prompt, stop_sequences=PROBE_STOP, max_tokens=cfg.max_tokens,
        temperature=cfg.temperature, seed=seed))
    return response.text


def evaluate_task(policy: PolicyHandle, env: CorpusIndex, task: TaskInstance, cfg: RolloutConfig,
                  seed: int, *, mode: EvalMode = EvalMode.AGENT, exemplars: Sequence[str] = (),
                  template_path: Optional[str] = None) -> EvalRecord:
    """
    Rollouts sample at ``cfg.temperature``; evaluate() passes a greedy config.
    """
    if mode == EvalMode.AGENT:
        traj = run_rollout(policy, env, task, cfg, seed, template_path=template_path)
        breakdown = total_reward(traj, task.golds, RewardConfig(rt_max=cfg.rt_max))
        answer = (traj.parsed.answer_text or '').strip()
        return EvalRecord(task.task_id, task.source, task.label.value, mode, answer,
                          breakdown.r_ans or 0, traj.retrieval_count, traj.text)
    if mode == EvalMode.DIRECT:
        text = _answer_once(policy, probe_prompt(task.question, exemplars), cfg, seed)
        return _record(task, mode, extract_probe_answer(text), 0, text)
    body = observation_body(retrieve(env, task.question, cfg.k_docs), env, cfg.max_obs_chars)
    prompt = f'{body}\n\n{probe_prompt(task.question, exemplars)}'
    text = _answer_once(policy, prompt, cfg, seed)
    return _record(task, mode, extract_probe_answer(text), 1, text)


def aggregate(records: Iterable[EvalRecord], mode: EvalMode = EvalMode.AGENT) -> EvalReport:
    grouped: dict[tuple[str, str], list[EvalRecord]] = defaultdict(list)
    for record in records:
        grouped[(record.source, record.label)].append(record)
    if not grouped:
        raise ValueError('nothing to aggregate')
    per_subset = {
        key: SubsetStats(
            em_mean=math.fsum(r.em for r in rows) / len(rows),
            rt_mean=math.fsum(r.rt for r in rows) / len(rows),
            n=len(rows),
        )
        for key, rows in grouped.items()
    }
    overall = SubsetStats(
        em_mean=math.fsum(s.em_mean for s in per_subset.values()) / len(per_subset),
        rt_mean=math.fsum(s.rt_mean for s in per_subset.values()) / len(per_subset),
        n=sum(s.n for s in per_subset.values()),
    )
    return EvalReport(per_subset, overall, mode)


def evaluate(policy: PolicyHandle, env: CorpusIndex, tasks: Sequence[TaskInstance], cfg: RolloutConfig,
             seed: int, *, mode: EvalMode = EvalMode.AGENT, exemplars: Sequence[str] = (),
             workers: int = 1, template_path: Optional[str] = None,
             log_path: Optional[str | Path] = None, temperature: float = GREEDY) -> EvalReport:
    """
    Evaluate every task once, greedily unless a temperature is given.
    Per-task seeds come from the task id, so results do not depend on task
    order or worker count.
    """
    mode = EvalMode(mode)
    cfg = cfg.with_temperature(temperature)
    unlabeled = [task.task_id for task in tasks if task.label == Label.UNLABELED]
    if unlabeled:
        raise ValueError(f'tasks must be labeled before evaluation: {unlabeled[:5]}')

    def one(task: TaskInstance) -> EvalRecord:
        return evaluate_task(policy, env, task, cfg, task_seed(seed, task), mode=mode,
                             exemplars=exemplars, template_path=template_path)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, tasks))
    else:
        records = [one(task) for task in tasks]
    if log_path is not None:
        dump_records(log_path, records, EvalRecordSerializer)
    report = aggregate(records, mode)
    logger.info('evaluation done mode=%s tasks=%d em=%.4f rt=%.4f',
                mode.value, len(records), report.overall.em_mean, report.overall.rt_mean)
    return report
