"""
Knowledge seeding of the toy policy.

The policy is fitted by weighted maximum likelihood on these demonstrations
before reinforcement learning starts:

* search demonstrations for every task (look the fact up, copy the value);
  when the corpus misses the fact only the search turn is shown;
* direct-answer demonstrations for tasks whose facts are internal;
* probe demonstrations (``Question: …\\nAnswer: value``) for the same tasks;
* optionally, guess demonstrations for the other tasks, which show the
  direct-answer path but leave the value unlearned;
* optionally, slipped answers that drop the ``<answer>`` tag, so the
  seeded policy breaks the format at a set rate.

Only internal facts have their values taught without retrieval, which puts
the internal subset inside the policy's knowledge boundary.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from dataset.domain import TaskInstance
from environment.domain import SyntheticWorld
from environment.index import CorpusIndex, format_observation, retrieve
from environment.world import fact_doc_id, fact_query
from protocol.tokenizer import tokenize

from .toy import AGENT_TAGS, PROBE_CUE, ToyPolicy, batch_log_probs, scatter_gradient, stack_rows

logger = logging.getLogger(__name__)

SEARCH_THINK = '<think> I need to search</think>'
FOUND_THINK = '<think> I found it</think>'
KNOW_THINK = '<think> I know it</think>'

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class SeedingConfig:
    feature_dim: int = 256
    epochs: int = 200
    learning_rate: float = 0.1
    direct_demo_weight: float = 0.15
    guess_demo_weight: float = 0.0
    answer_slip: float = 0.0
    k_docs: int = 3
    max_obs_chars: int = 1200

    def __post_init__(self):
        if self.direct_demo_weight < 0 or self.guess_demo_weight < 0:
            raise ValueError('demonstration weights must be non-negative')
        if not 0.0 <= self.answer_slip < 1.0:
            raise ValueError('answer_slip must lie in [0, 1)')


@dataclass(frozen=True)
class Demonstration:
    """
    A prompt followed by pieces of text; a piece with weight 0 is an
    observation and is only read, never learned.
    """
    prompt: str
    pieces: tuple[tuple[str, float], ...]

    def tokens(self) -> tuple[list[str], list[float]]:
        tokens, weights = [], []
        for text, weight in self.pieces:
            piece = tokenize(text)
            tokens.extend(piece)
            weights.extend([weight] * len(piece))
        return tokens, weights


def agent_prompt(question: str) -> str:
    # the toy policy only reads the text after the last ``Question:``
    return f'Question: {question}\n'


def probe_prompt(question: str) -> str:
    return f'Question: {question}\n{PROBE_CUE}'


def _search_turn(entity: str, attribute: str) -> str:
    return f'{SEARCH_THINK}<search> {entity} {attribute}</search>'


def _lookup(key: tuple[str, str], index: Optional[CorpusIndex], world: SyntheticWorld,
            cfg: SeedingConfig) -> tuple[str, bool]:
    """
    The observation a search for ``key`` returns, and whether its first
    hit is the fact's own document.
    """
    entity, attribute = key
    if index is None:
        return (f'<context>Title: {entity} {attribute}\n'
                f'The {attribute} of {entity} is {world.facts[key]}.</context>'), True
    result = retrieve(index, fact_query(entity, attribute), cfg.k_docs)
    hit = bool(result.hits) and result.hits[0][0] == fact_doc_id(entity, attribute)
    return format_observation(result, index, cfg.max_obs_chars), hit


def _answering(prompt: str, lead: Sequence[tuple[str, float]], think: str, value: str,
               weight: float, cfg: SeedingConfig, learn_value: bool = True) -> list[Demonstration]:
    """
    An answer turn after ``lead``, plus its slipped twin when
    ``cfg.answer_slip`` is set.
    """
    demos = [Demonstration(prompt, (
        *lead,
        (f'{think}<answer>', weight),
        (f' {value}', weight if learn_value else 0.0),
        ('</answer>', weight),
    ))]
    if cfg.answer_slip > 0:
        read = tuple((text, 0.0) for text, _ in lead)
        slip = weight * cfg.answer_slip / (1.0 - cfg.answer_slip)
        demos.append(Demonstration(prompt, (*read, (think, 0.0), (f' {value}</answer>', slip))))
    return demos


def demonstrations(world: SyntheticWorld, tasks: Sequence[TaskInstance],
                   index: Optional[CorpusIndex], cfg: SeedingConfig) -> list[Demonstration]:
    demos = []
    for task in tasks:
        if not task.facts:
            continue
        value = task.golds[0]
        prompt = agent_prompt(task.question)
        lead, found = [], True
        for key in task.facts:
            lead.append((_search_turn(*key), 1.0))
            observation, found = _lookup(key, index, world, cfg)
            if not found:
                break
            lead.append((observation, 0.0))
        if found:
            demos.extend(_answering(prompt, lead, FOUND_THINK, value, 1.0, cfg))
        else:
            demos.append(Demonstration(prompt, tuple(lead)))

        if world.is_internal(task.facts):
            demos.extend(_answering(prompt, (), KNOW_THINK, value, cfg.direct_demo_weight, cfg))
            demos.append(Demonstration(probe_prompt(task.question), ((f' {value}\n', 1.0),)))
        elif cfg.guess_demo_weight > 0:
            demos.extend(_answering(prompt, (), KNOW_THINK, value, cfg.guess_demo_weight, cfg,
                                    learn_value=False))
    return demos


def build_vocabulary(demos: Sequence[Demonstration]) -> tuple[str, ...]:
    vocab = set(AGENT_TAGS) | {'\n'}
    for demo in demos:
        tokens, weights = demo.tokens()
        vocab.update(token for token, weight in zip(tokens, weights) if weight > 0)
    return tuple(sorted(vocab))


def fit(policy: ToyPolicy, demos: Sequence[Demonstration], epochs: int,
        learning_rate: float) -> ToyPolicy:
    """
    Full-batch Adam on the weighted negative log-likelihood of the demos.
    """
    rows, targets, weights = [], [], []
    for demo in demos:
        tokens, token_weights = demo.tokens()
        wanted = [i for i, weight in enumerate(token_weights) if weight > 0]
        rows.extend(policy.rows(demo.prompt, tokens, wanted))
        targets.extend(policy.token_id(tokens[i]) for i in wanted)
        weights.extend(token_weights[i] for i in wanted)
    if not rows or epochs <= 0:
        return policy

    idx, vals = stack_rows(rows)
    targets = np.asarray(targets)
    weights = np.asarray(weights) / np.sum(weights)
    theta = policy.theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2 = ADAM_BETAS
    for epoch in range(1, epochs + 1):
        logp = batch_log_probs(theta, idx, vals)
        loss = -float(np.sum(weights * logp[np.arange(len(targets)), targets]))
        coeff = np.exp(logp)
        coeff[np.arange(len(targets)), targets] -= 1.0
        coeff *= weights[:, None]
        grad = scatter_gradient(theta.shape, idx, vals, coeff)
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad ** 2
        m_hat = m / (1 - beta1 ** epoch)
        v_hat = v / (1 - beta2 ** epoch)
        theta -= learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if epoch == 1 or epoch % 50 == 0 or epoch == epochs:
            logger.info('seeding epoch=%d loss=%.4f', epoch, loss)
    return policy.with_theta(theta)


def seed_toy_policy(world: SyntheticWorld, tasks: Sequence[TaskInstance],
                    index: Optional[CorpusIndex] = None,
                    cfg: SeedingConfig = SeedingConfig()) -> ToyPolicy:
    """
    Fit a fresh toy policy on the world's demonstrations and freeze the
    result as its knowledge.
    """
    demos = demonstrations(world, tasks, index, cfg)
    policy = ToyPolicy(build_vocabulary(demos), feature_dim=cfg.feature_dim)
    logger.info('seeding toy policy demos=%d vocab=%d dim=%d',
                len(demos), policy.vocab_size, policy.feature_dim)
    fitted = fit(policy, demos, cfg.epochs, cfg.learning_rate)
    return fitted.with_knowledge(fitted.theta)
