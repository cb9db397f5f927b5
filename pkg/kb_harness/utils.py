import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from .exceptions import RecordError


def dumps_line(record: dict[str, Any]) -> str:
    """
    Serialize one record as a JSONL line (UTF-8 text, LF-terminated).
    """
    return json.dumps(record, ensure_ascii=False, separators=(', ', ': ')) + '\n'


def write_jsonl(path: str | Path, records: Iterable[dict[str, Any]]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open('w', encoding='utf-8', newline='\n') as handle:
        for record in records:
            handle.write(dumps_line(record))
            count += 1
    return count


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with Path(path).open('r', encoding='utf-8') as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_json(path: str | Path, payload: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + '\n',
        encoding='utf-8')


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding='utf-8'))


def load_records(path: str | Path, serializer_class) -> list:
    """
    Read a JSONL file through a DRF serializer, one instance per line.
    """
    instances = []
    for line, record in enumerate(read_jsonl(path), start=1):
        serializer = serializer_class(data=record)
        if not serializer.is_valid():
            raise RecordError(path, line, dict(serializer.errors))
        instances.append(serializer.save())
    return instances


def dump_records(path: str | Path, instances: Iterable, serializer_class) -> int:
    return write_jsonl(path, (serializer_class(instance).data for instance in instances))
