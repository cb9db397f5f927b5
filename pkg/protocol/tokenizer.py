"""
Lexical tokenizer shared by the protocol, the scripted policy and the toy
policy.

Tags are single tokens, words carry at most one leading space, and every
other character is its own token, so ``''.join(tokenize(text)) == text``
for every input.
"""
import re
from bisect import bisect_left, bisect_right
from itertools import accumulate

TOKEN_PATTERN = re.compile(
    r'</?(?:think|search|answer|context)>'
    r'| ?\w+'
    r'| ?[^\w\s<]'
    r'|<'
    r'|\s'
)


def tokenize(text: str) -> list[str]:
    return TOKEN_PATTERN.findall(text)


def token_starts(tokens: list[str]) -> list[int]:
    """
    Character offset at which each token starts.
    """
    return [0, *accumulate(len(token) for token in tokens)][:-1] if tokens else []


def char_span_to_token_span(starts: list[int], total_chars: int,
                            lo: int, hi: int) -> tuple[int, int]:
    """
    Smallest half-open token range covering the characters ``[lo, hi)``.
    """
    if not starts:
        return (0, 0)
    first = max(bisect_right(starts, lo) - 1, 0)
    last = bisect_left(starts, hi) if hi < total_chars else len(starts)
    return (first, max(last, first))
