"""
Lexical retrieval over a document corpus.

Okapi BM25 with k1=1.2, b=0.75 and a natural-log IDF floored at 0. Hits
are ordered by score, ties broken by ascending doc_id; zero scores are
never returned.
"""
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping

from .domain import Document, RetrievalResult
from .exceptions import DuplicateIdError

logger = logging.getLogger(__name__)

K1 = 1.2
B = 0.75
NO_RESULTS = 'No results found.'
SEARCH_LIMIT = 'Search limit reached.'

ANALYZER = re.compile(r'[^\W_]+')


@dataclass(frozen=True)
class CorpusIndex:
    """
    Inverted index; read-only once built.
    """
    documents: tuple[Document, ...]
    by_id: Mapping[str, Document]
    postings: Mapping[str, tuple[tuple[int, int], ...]]
    doc_lengths: tuple[int, ...]
    avgdl: float

    @property
    def n_docs(self) -> int:
        return len(self.documents)

    def document_frequency(self, term: str) -> int:
        return len(self.postings.get(term, ()))


def analyze(text: str) -> list[str]:
    """
    Lowercase and split on non-alphanumerics; no stemming.
    """
    return ANALYZER.findall(text.lower())


def index_corpus(docs: Iterable[Document]) -> CorpusIndex:
    documents = tuple(docs)
    by_id: dict[str, Document] = {}
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths = []
    for position, doc in enumerate(documents):
        if doc.doc_id in by_id:
            raise DuplicateIdError(doc.doc_id)
        by_id[doc.doc_id] = doc
        terms = analyze(doc.indexed_text)
        lengths.append(len(terms))
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((position, tf))

    avgdl = sum(lengths) / len(lengths) if lengths else 0.0
    logger.info('corpus indexed docs=%d terms=%d avgdl=%.3f',
                len(documents), len(postings), avgdl)
    return CorpusIndex(
        documents=documents,
        by_id=MappingProxyType(by_id),
        postings=MappingProxyType({term: tuple(p) for term, p in postings.items()}),
        doc_lengths=tuple(lengths),
        avgdl=avgdl,
    )


def idf(n_docs: int, df: int) -> float:
    return max(0.0, math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5)))


def term_score(tf: int, df: int, doc_length: int, avgdl: float, n_docs: int) -> float:
    norm = tf + K1 * (1.0 - B + B * doc_length / avgdl)
    return idf(n_docs, df) * tf * (K1 + 1.0) / norm


def retrieve(index: CorpusIndex, query: str, k: int) -> RetrievalResult:
    if k < 1:
        raise ValueError('k must be at least 1')
    scores: dict[int, float] = {}
    for term in analyze(query):
        posting = index.postings.get(term)
        if not posting:
            continue
        df = len(posting)
        for position, tf in posting:
            contribution = term_score(tf, df, index.doc_lengths[position],
                                      index.avgdl, index.n_docs)
            scores[position] = scores.get(position, 0.0) + contribution

    ranked = sorted(
        ((index.documents[position].doc_id, score)
         for position, score in scores.items() if score > 0.0),
        key=lambda hit: (-hit[1], hit[0]),
    )
    return RetrievalResult(query=query, hits=tuple(ranked[:k]), k=k)


def observation_body(result: RetrievalResult, index: CorpusIndex, max_chars: int) -> str:
    """
    Titled blocks of the hits, cut at a block boundary so the body fits in
    ``max_chars``. A first block longer than the budget is cut mid-block.
    """
    if not result.hits:
        return NO_RESULTS
    body = ''
    for doc_id, _score in result.hits:
        doc = index.by_id[doc_id]
        block = f'Title: {doc.title}\n{doc.body}'
        candidate = f'{body}\n\n{block}' if body else block
        if len(candidate) > max_chars:
            if not body:
                body = block[:max_chars]
            break
        body = candidate
    return body


def format_observation(result: RetrievalResult, index: CorpusIndex, max_chars: int) -> str:
    return f'<context>{observation_body(result, index, max_chars)}</context>'
