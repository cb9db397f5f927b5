import logging
from functools import lru_cache

from .domain import PolicyHandle, PolicyKind
from .remote import RemotePolicy
from .scripted import ScriptedPolicy
from .toy import ToyPolicy

logger = logging.getLogger(__name__)


def parse_selection(selection: str) -> tuple[PolicyKind, str]:
    """
    Split ``scripted:<file>``, ``toy:<params.npz>`` or ``remote:<url>``.
    """
    kind, _, target = selection.partition(':')
    try:
        return PolicyKind(kind), target
    except ValueError:
        raise ValueError(f'unknown policy kind {kind!r} in {selection!r}') from None


def load_policy(selection: str, *, timeout: float = 30.0, retries: int = 2) -> PolicyHandle:
    kind, target = parse_selection(selection)
    if not target:
        raise ValueError(f'policy {selection!r} names no {kind.label.lower()} source')
    logger.info('loading policy kind=%s target=%s', kind.value, target)
    if kind == PolicyKind.SCRIPTED:
        return ScriptedPolicy.from_file(target)
    if kind == PolicyKind.TOY:
        return ToyPolicy.load(target)
    return RemotePolicy(target, timeout=timeout, retries=retries)


@lru_cache(maxsize=4)
def serving_policy(selection: str) -> PolicyHandle:
    return load_policy(selection)
