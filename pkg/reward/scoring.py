"""
Knowledge-boundary aware reward.

A trajectory that breaks the format earns -1. Otherwise the reward is the
exact-match score plus a boundary term that pays for correct answers
reached with few searches and pays a little for searching when the answer
is wrong.
"""
import logging
from fractions import Fraction
from typing import Protocol, Sequence

from protocol.domain import ParsedTrajectory
from protocol.parser import extract_answer, validate_format

from .domain import RewardBreakdown, RewardConfig, RewardVariant
from .metrics import exact_match

logger = logging.getLogger(__name__)

FORMAT_PENALTY = -1.0


class Scorable(Protocol):
    parsed: ParsedTrajectory
    retrieval_count: int
    max_turns: int


def rational(value: float) -> Fraction:
    """
    The decimal a float was written as, so 0.6 is 3/5.
    """
    return Fraction(repr(value))


def boundary_term(r_ans: int, rt: int, cfg: RewardConfig) -> Fraction:
    if rt < 0:
        raise ValueError('rt must be non-negative')
    if cfg.variant == RewardVariant.NO_KB:
        return Fraction(0)
    if r_ans == 1:
        # over-cap searches are clamped so the term never goes negative
        return rational(cfg.r_kb_plus) * (1 - Fraction(min(rt, cfg.rt_max), cfg.rt_max))
    if rt == 0 or cfg.variant == RewardVariant.NO_KB_MINUS:
        return Fraction(0)
    return rational(cfg.r_kb_minus)


def knowledge_boundary_reward(r_ans: int, rt: int, cfg: RewardConfig) -> float:
    return float(boundary_term(r_ans, rt, cfg))


def total_reward(traj: Scorable, golds: Sequence[str], cfg: RewardConfig) -> RewardBreakdown:
    """
    Sums are taken in exact rationals and rounded once.
    """
    rt = traj.retrieval_count
    if not validate_format(traj.parsed, traj):
        return RewardBreakdown(format_valid=False, r_ans=None, r_kb=None,
                               total=FORMAT_PENALTY, rt=rt)
    r_ans = exact_match(extract_answer(traj.parsed), golds)
    r_kb = boundary_term(r_ans, rt, cfg)
    return RewardBreakdown(format_valid=True, r_ans=r_ans, r_kb=float(r_kb),
                           total=float(r_ans + r_kb), rt=rt)
