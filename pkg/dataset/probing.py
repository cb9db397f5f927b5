"""
Knowledge-boundary probing.

Each question is answered N times from the policy's own knowledge, with a
few-shot prompt and no retrieval. A question is easy if any of the
samples is correct.
"""
import logging
import re
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from django.conf import settings

from environment.domain import SyntheticWorld
from kb_harness.utils import dump_records, load_records
from policy.domain import GenerationRequest, PolicyHandle, generate
from reward.metrics import exact_match
from rollout.engine import derive_seed

from .domain import Label, TaskInstance
from .serializers import ProbeRecordSerializer

logger = logging.getLogger(__name__)

PROBE_STOP = ('\n',)
ANSWER_IS = re.compile(r'answer is\s*:?\s*(.+?)\s*\.?\s*$', re.IGNORECASE)

ProbeSamples = list[tuple[str, int]]


@dataclass(frozen=True)
class ProbeConfig:
    n_samples: int = 5
    exemplars: tuple[str, ...] = field(default=())
    temperature: float = 1.0
    max_tokens: int = 32

    def __post_init__(self):
        object.__setattr__(self, 'exemplars', tuple(self.exemplars))
        if self.n_samples < 1:
            raise ValueError('n_samples must be at least 1')
        if self.temperature < 0:
            raise ValueError('temperature must be non-negative')


def load_exemplars(path: Optional[str | Path] = None) -> tuple[str, ...]:
    """
    Exemplars are separated by blank lines.
    """
    text = Path(path or settings.PROBE_EXEMPLARS_PATH).read_text(encoding='utf-8')
    return tuple(block.strip() for block in re.split(r'\n\s*\n', text) if block.strip())


def synthetic_exemplars(world: SyntheticWorld, count: int = 3) -> tuple[str, ...]:
    exemplars = []
    for entity, attribute in sorted(world.internal_subset)[:count]:
        value = world.facts[(entity, attribute)]
        exemplars.append(
            f'Question: What is the {attribute} of {entity}?\n'
            f'Answer: The {attribute} of {entity} is {value}. So the answer is {value}.')
    return tuple(exemplars)


def probe_prompt(question: str, exemplars: Sequence[str]) -> str:
    shots = ''.join(f'{exemplar}\n\n' for exemplar in exemplars)
    return f'{shots}Question: {question}\nAnswer:'


def extract_probe_answer(text: str) -> str:
    """
    The last non-empty line, reduced to what follows "answer is" when the
    line has that form. Empty when nothing usable was generated.
    """
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        return ''
    found = ANSWER_IS.search(lines[-1])
    return found.group(1).strip() if found else lines[-1]


def probe_question(policy: PolicyHandle, task: TaskInstance, cfg: ProbeConfig,
                   seed: int) -> ProbeSamples:
    prompt = probe_prompt(task.question, cfg.exemplars)
    key = zlib.crc32(task.task_id.encode('utf-8'))
    samples = []
    for n in range(cfg.n_samples):
        response = generate(policy, GenerationRequest(
            prompt=prompt,
            stop_sequences=PROBE_STOP,
            max_tokens=cfg.max_tokens,
            temperature=cfg.temperature,
            seed=derive_seed(seed, key, n),
        ))
        answer = extract_probe_answer(response.text)
        samples.append((answer, exact_match(answer, task.golds) if answer else 0))
    return samples


def label_question(probe: Sequence[tuple[str, int]]) -> Label:
    if not probe:
        raise ValueError('cannot label an empty probe')
    return Label.EASY if any(em for _answer, em in probe) else Label.HARD


def probe_dataset(policy: PolicyHandle, tasks: Sequence[TaskInstance], cfg: ProbeConfig,
                  seed: int, *, workers: int = 1) -> dict[str, ProbeSamples]:
    """
    Probe every task. Seeds are derived from the task id, so the result
    does not depend on task order or on the number of workers.
    """
    def one(task: TaskInstance) -> ProbeSamples:
        return probe_question(policy, task, cfg, seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(task) for task in tasks]
    probes = {task.task_id: samples for task, samples in zip(tasks, results)}
    easy = sum(1 for samples in probes.values() if label_question(samples) == Label.EASY)
    logger.info('probed tasks=%d samples=%d easy=%d', len(tasks), cfg.n_samples, easy)
    return probes


def label_tasks(tasks: Iterable[TaskInstance], probes: Mapping[str, ProbeSamples]) -> list[TaskInstance]:
    labeled = []
    for task in tasks:
        if task.task_id not in probes:
            raise KeyError(f'no probe for task {task.task_id!r}')
        labeled.append(task.with_label(label_question(probes[task.task_id])))
    return labeled


def write_probe_cache(path: str | Path, probes: Mapping[str, ProbeSamples]) -> int:
    return dump_records(path, probes.items(), ProbeRecordSerializer)


def read_probe_cache(path: str | Path) -> dict[str, ProbeSamples]:
    return dict(load_records(path, ProbeRecordSerializer))
