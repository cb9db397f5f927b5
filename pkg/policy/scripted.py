"""
Replays fixed emissions, one per agent turn.

A script is either a list of emissions shared by every question or a
mapping ``{"default": [...], "questions": {question: [...]}}``. The turn
number is read off the prompt (observations seen since the question, or
since ``transcript_start`` when the request carries one),
and the last emission repeats once the script runs out.
"""
import json
import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from protocol.parser import cut_at_stop
from protocol.tokenizer import tokenize

from .domain import GenerationRequest, GenerationResponse, hashed_token_ids, question_anchor, question_of

logger = logging.getLogger(__name__)

Script = Union[Sequence[str], Mapping[str, object]]


class ScriptedPolicy:

    def __init__(self, script: Script):
        if isinstance(script, Mapping):
            self.default = tuple(script.get('default', ()))
            self.by_question = {q: tuple(lines) for q, lines in script.get('questions', {}).items()}
        else:
            self.default = tuple(script)
            self.by_question = {}
        if not self.default and not self.by_question:
            raise ValueError('script is empty')

    @classmethod
    def from_file(cls, path: str | Path) -> 'ScriptedPolicy':
        """
        ``.json`` files hold a list or a question-keyed mapping; any other
        file holds one emission per line.
        """
        path = Path(path)
        text = path.read_text(encoding='utf-8')
        if path.suffix == '.json':
            return cls(json.loads(text))
        return cls([line for line in text.split('\n') if line])

    def emissions_for(self, prompt: str, transcript_start: Optional[int] = None) -> tuple[str, ...]:
        question = question_of(prompt, transcript_start)
        lines = self.by_question.get(question, self.default)
        if not lines:
            raise ValueError(f'no script for question {question!r}')
        return lines

    @staticmethod
    def turn_of(prompt: str, transcript_start: Optional[int] = None) -> int:
        start = transcript_start
        if start is None:
            start = max(question_anchor(prompt), 0)
        return prompt.count('</context>', start)

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        lines = self.emissions_for(req.prompt, req.transcript_start)
        emission = lines[min(self.turn_of(req.prompt, req.transcript_start), len(lines) - 1)]
        text = cut_at_stop(emission, req.stop_sequences)
        tokens = tokenize(text)[:req.max_tokens]
        text = ''.join(tokens)
        return GenerationResponse(text=text, tokens=tokens, token_ids=hashed_token_ids(tokens))

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text)
