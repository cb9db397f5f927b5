"""
Prompt templates read from the editable text assets.
"""
from functools import lru_cache
from pathlib import Path

from django.conf import settings


@lru_cache(maxsize=8)
def read_template(path: str) -> str:
    return Path(path).read_text(encoding='utf-8')


def render_prompt(template: str, question: str, max_searches: int) -> str:
    """
    Fill ``{max_searches}`` and ``{question}``; the prompt always ends in a
    newline so the first agent token starts a fresh line.
    """
    prompt = template.replace('{max_searches}', str(max_searches)).replace('{question}', question)
    return prompt if prompt.endswith('\n') else prompt + '\n'


def agent_prompt(question: str, max_searches: int, template_path: str | None = None) -> str:
    template = read_template(str(template_path or settings.SYSTEM_PROMPT_PATH))
    return render_prompt(template, question, max_searches)
