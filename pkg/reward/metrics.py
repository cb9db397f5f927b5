import re
import string
from typing import Sequence

ARTICLES = re.compile(r'\b(a|an|the)\b')
PUNCTUATION = set(string.punctuation)


def normalize_answer(text: str) -> str:
    """
    Lowercase, drop punctuation and articles, collapse whitespace.
    """
    def remove_articles(value):
        return ARTICLES.sub(' ', value)

    def white_space_fix(value):
        return ' '.join(value.split())

    def remove_punc(value):
        return ''.join(ch for ch in value if ch not in PUNCTUATION)

    return white_space_fix(remove_articles(remove_punc(text.lower())))


def exact_match(pred: str, golds: Sequence[str]) -> int:
    if not golds:
        raise ValueError('golds must not be empty')
    normalized = normalize_answer(pred)
    return int(any(normalized == normalize_answer(gold) for gold in golds))
