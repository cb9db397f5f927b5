"""
Linear-softmax policy over hashed state features.

``logits = φ(state) @ θ`` with θ of shape (feature_dim, vocab_size), so
the log-probability gradient is available in closed form. The state is
the text after the question line of the prompt: φ hashes a handful of string
features describing where generation stands (open tag, position inside
it, previous token, observations seen) plus features keyed on the
question and on the last observation.

A policy never changes after construction; training produces new
instances through ``with_theta``.
"""
import logging
import re
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from protocol.tokenizer import tokenize

from .domain import QUESTION_MARKER, GenerationRequest, GenerationResponse, question_anchor
from .exceptions import UnknownToken

logger = logging.getLogger(__name__)

AGENT_TAGS = ('<think>', '</think>', '<search>', '</search>', '<answer>', '</answer>')
OPEN_TAGS = {'<think>': 'think', '<search>': 'search', '<answer>': 'answer', '<context>': 'context'}
CLOSE_TAGS = {'think': '</think>', 'search': '</search>', 'answer': '</answer>',
              'context': '</context>'}
PROBE_CUE = 'Answer:'
STOPWORDS = frozenset({'what', 'is', 'the', 'of', 'name', 'a', 'an', 'who', 'which'})
WORD_RE = re.compile(r'\w+')

POS_CAP = 8
SEARCH_CAP = 3
HASH_MULTIPLIER = 2654435761
HASH_OFFSET = 0x9E3779B9
BUCKETS_PER_FEATURE = 2
CONFIDENCE_BUCKETS = ((0.5, 'hi'), (0.2, 'mid'))
CHUNK = 512

Row = tuple[np.ndarray, np.ndarray]


def question_key(question: str) -> str:
    """
    Sorted content words, so paraphrases of one fact share a key.
    """
    words = [w for w in WORD_RE.findall(question) if w.lower() not in STOPWORDS]
    return ' '.join(sorted(words))


def observation_tail(body: str) -> str:
    """
    Last word of the first block of an observation.
    """
    words = WORD_RE.findall(body.split('\n\n', 1)[0])
    return words[-1] if words else ''


@lru_cache(maxsize=1 << 18)
def hash_feature(feature: str, dim: int) -> tuple[tuple[int, float], ...]:
    """
    Signed multiplicative hashing into ``BUCKETS_PER_FEATURE`` columns.
    """
    shift = 32 - (dim.bit_length() - 1)
    base = zlib.crc32(feature.encode('utf-8'))
    columns = []
    for bucket in range(BUCKETS_PER_FEATURE):
        mixed = ((base + bucket * HASH_OFFSET) * HASH_MULTIPLIER) & 0xFFFFFFFF
        index = mixed >> shift if shift < 32 else 0
        sign = 1.0 if (mixed >> 15) & 1 else -1.0
        columns.append((index, sign))
    return tuple(columns)


@dataclass
class GenerationState:
    """
    Incremental summary of a prompt, advanced one token at a time.
    """
    question: str = ''
    key: str = ''
    slot: str = 'out'
    pos: int = 0
    prev: str = ''
    n_search: int = 0
    think_key: str = ''
    obs_tail: str = ''
    think_words: list[str] = field(default_factory=list)
    context: list[str] = field(default_factory=list)

    def push(self, token: str) -> None:
        if self.slot == 'out' and token in OPEN_TAGS:
            self.slot = OPEN_TAGS[token]
            self.pos = 0
            if self.slot == 'think':
                self.think_words = []
            elif self.slot == 'context':
                self.context = []
        elif self.slot in CLOSE_TAGS and token == CLOSE_TAGS[self.slot]:
            if self.slot == 'think':
                words = self.think_words
                self.think_key = (words[1] if len(words) > 1 else ''.join(words[:1])).strip()
            elif self.slot == 'context':
                self.n_search += 1
                self.obs_tail = observation_tail(''.join(self.context))
            self.slot = 'out'
            self.pos = 0
        else:
            if self.slot == 'think' and token.strip():
                self.think_words.append(token)
            elif self.slot == 'context':
                self.context.append(token)
            self.pos += 1
        self.prev = token


def parse_state(text: str, transcript_start: Optional[int] = None) -> GenerationState:
    """
    State after reading ``text``. The question is taken from the prompt
    ahead of ``transcript_start``; everything after it is pushed token by
    token, observations included.
    """
    start = question_anchor(text, transcript_start)
    if start < 0:
        state, rest = GenerationState(), text
    else:
        line, newline, rest = text[start + len(QUESTION_MARKER):].partition('\n')
        question = line.strip()
        state = GenerationState(question=question, key=question_key(question))
        if not newline:
            rest = ''
    if rest.startswith(PROBE_CUE):
        state.slot = 'probe'
        rest = rest[len(PROBE_CUE):]
    for token in tokenize(rest):
        state.push(token)
    return state


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def stack_rows(rows: Sequence[Row]) -> tuple[np.ndarray, np.ndarray]:
    """
    Pad sparse rows to a common width; padding columns carry value 0.
    """
    width = max((len(idx) for idx, _ in rows), default=0)
    idx = np.zeros((len(rows), width), dtype=np.int64)
    vals = np.zeros((len(rows), width), dtype=np.float64)
    for n, (row_idx, row_vals) in enumerate(rows):
        idx[n, :len(row_idx)] = row_idx
        vals[n, :len(row_vals)] = row_vals
    return idx, vals


def batch_log_probs(theta: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """
    Log-probabilities of every row, shape (N, V).
    """
    out = np.empty((idx.shape[0], theta.shape[1]))
    for lo in range(0, idx.shape[0], CHUNK):
        hi = lo + CHUNK
        logits = np.einsum('nf,nfv->nv', vals[lo:hi], theta[idx[lo:hi]])
        out[lo:hi] = log_softmax(logits)
    return out


def scatter_gradient(shape: tuple[int, int], idx: np.ndarray, vals: np.ndarray,
                     coeff: np.ndarray) -> np.ndarray:
    """
    Σ_n φ_n ⊗ coeff_n as a dense (feature_dim, vocab_size) array.

    Rows are summed in a fixed order so repeated runs agree bit for bit.
    """
    grad = np.zeros(shape)
    for lo in range(0, idx.shape[0], CHUNK):
        hi = lo + CHUNK
        flat_idx = idx[lo:hi].ravel()
        rows = (vals[lo:hi, :, None] * coeff[lo:hi, None, :]).reshape(-1, shape[1])
        order = np.argsort(flat_idx, kind='stable')
        sorted_idx = flat_idx[order]
        starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
        grad[sorted_idx[starts]] += np.add.reduceat(rows[order], starts, axis=0)
    return grad


class ToyPolicy:

    def __init__(self, vocab: Iterable[str], theta: Optional[np.ndarray] = None,
                 feature_dim: int = 256, knowledge: Optional[np.ndarray] = None,
                 _confidence: Optional[dict] = None):
        if feature_dim < 1 or feature_dim & (feature_dim - 1):
            raise ValueError('feature_dim must be a power of two')
        self.vocab = tuple(vocab)
        self.token_index = {token: i for i, token in enumerate(self.vocab)}
        if len(self.token_index) != len(self.vocab):
            raise ValueError('vocabulary has duplicate tokens')
        self.feature_dim = feature_dim
        shape = (feature_dim, len(self.vocab))
        self.theta = np.zeros(shape) if theta is None else np.array(theta, dtype=np.float64)
        if self.theta.shape != shape:
            raise ValueError(f'theta has shape {self.theta.shape}, expected {shape}')
        self.theta.flags.writeable = False
        self.knowledge = None
        if knowledge is not None:
            self.knowledge = np.array(knowledge, dtype=np.float64)
            if self.knowledge.shape != shape:
                raise ValueError('knowledge must have the shape of theta')
            self.knowledge.flags.writeable = False
        self._confidence = {} if _confidence is None else _confidence

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def with_theta(self, theta: np.ndarray) -> 'ToyPolicy':
        return ToyPolicy(self.vocab, theta, self.feature_dim, self.knowledge, self._confidence)

    def with_knowledge(self, knowledge: np.ndarray) -> 'ToyPolicy':
        return ToyPolicy(self.vocab, self.theta, self.feature_dim, knowledge)

    def snapshot(self) -> 'ToyPolicy':
        return self.with_theta(self.theta.copy())

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text)

    def token_id(self, token: str) -> int:
        try:
            return self.token_index[token]
        except KeyError:
            raise UnknownToken(token) from None

    # features

    def confidence(self, question: str) -> str:
        """
        How sure the seeded knowledge is about a question, bucketed.

        Read from the frozen ``knowledge`` weights, never from θ, so it is
        a fixed input as far as gradients go.
        """
        if self.knowledge is None:
            return 'na'
        bucket = self._confidence.get(question)
        if bucket is None:
            idx, vals = self.row(parse_state(f'Question: {question}\n{PROBE_CUE}'))
            top = float(np.exp(log_softmax(vals @ self.knowledge[idx])).max())
            bucket = next((name for floor, name in CONFIDENCE_BUCKETS if top >= floor), 'lo')
            self._confidence[question] = bucket
        return bucket

    def state_features(self, state: GenerationState) -> list[str]:
        slot = state.slot
        p = min(state.pos, POS_CAP)
        n = min(state.n_search, SEARCH_CAP)
        features = ['bias', f'sp|{slot}|{p}', f'sv|{slot}|{state.prev}', f'spn|{slot}|{p}|{n}']
        if slot == 'out':
            features.append(f'ot|{state.prev}|{state.think_key}')
        elif slot == 'think' and state.pos == 1:
            features.append(f'dq|{n}|{state.key}')
            features.append(f'dc|{n}|{self.confidence(state.question)}')
        elif slot == 'search':
            features.append(f'sq|{p}|{n}|{state.key}')
            if n:
                features.append(f'so|{p}|{n}|{state.obs_tail}')
        elif slot == 'answer' and state.pos == 0:
            features.append(f'rq|{state.key}' if n == 0 else f'ao|{state.obs_tail}')
        elif slot == 'probe' and state.pos == 0:
            features.append(f'rq|{state.key}')
        return features

    def row(self, state: GenerationState) -> Row:
        columns = [column for feature in self.state_features(state)
                   for column in hash_feature(feature, self.feature_dim)]
        idx = np.fromiter((i for i, _ in columns), dtype=np.int64, count=len(columns))
        vals = np.fromiter((s for _, s in columns), dtype=np.float64, count=len(columns))
        return idx, vals

    def rows(self, prompt: str, tokens: Sequence[str],
             wanted: Optional[Sequence[int]] = None) -> list[Row]:
        """
        Feature rows of the states preceding each token (or each wanted
        position) when ``tokens`` follow ``prompt``.
        """
        wanted_set = None if wanted is None else set(wanted)
        state = parse_state(prompt)
        out = []
        for position, token in enumerate(tokens):
            if wanted_set is None or position in wanted_set:
                out.append(self.row(state))
            state.push(token)
        return out

    # distributions

    def log_probs(self, row: Row) -> np.ndarray:
        idx, vals = row
        return log_softmax(vals @ self.theta[idx])

    def logprob_and_grad(self, state: str, token: str) -> tuple[float, np.ndarray]:
        """
        log π(token | state) and its exact gradient w.r.t. ``theta.ravel()``.
        """
        choice = self.token_id(token)
        idx, vals = self.row(parse_state(state))
        logp = log_softmax(vals @ self.theta[idx])
        phi = np.zeros(self.feature_dim)
        np.add.at(phi, idx, vals)
        error = -np.exp(logp)
        error[choice] += 1.0
        return float(logp[choice]), np.outer(phi, error).ravel()

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        state = parse_state(req.prompt, req.transcript_start)
        rng = np.random.default_rng(req.seed)
        stops = [stop for stop in req.stop_sequences if stop]
        tokens, ids, logprobs = [], [], []
        text = ''
        for _ in range(req.max_tokens):
            idx, vals = self.row(state)
            logits = vals @ self.theta[idx]
            logp = log_softmax(logits)
            if req.temperature == 0:
                choice = int(np.argmax(logits))
            else:
                cumulative = np.cumsum(np.exp(log_softmax(logits / req.temperature)))
                draw = rng.random() * cumulative[-1]
                choice = min(int(np.searchsorted(cumulative, draw, side='right')), self.vocab_size - 1)
            token = self.vocab[choice]
            tokens.append(token)
            ids.append(choice)
            logprobs.append(float(logp[choice]))
            state.push(token)
            text += token
            if any(text.endswith(stop) for stop in stops):
                break
        return GenerationResponse(text=text, tokens=tokens, token_ids=ids, logprobs=logprobs)

    # persistence

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        knowledge = self.knowledge if self.knowledge is not None else np.zeros((0,))
        with path.open('wb') as handle:
            np.savez(handle, theta=self.theta, vocab=np.array(self.vocab, dtype=np.str_),
                     feature_dim=np.int64(self.feature_dim), knowledge=knowledge)
        logger.info('toy policy saved path=%s vocab=%d dim=%d', path, self.vocab_size, self.feature_dim)

    @classmethod
    def load(cls, path: str | Path) -> 'ToyPolicy':
        with np.load(Path(path)) as data:
            knowledge = data['knowledge']
            return cls(
                vocab=[str(token) for token in data['vocab']],
                theta=data['theta'],
                feature_dim=int(data['feature_dim']),
                knowledge=knowledge if knowledge.size else None,
            )
