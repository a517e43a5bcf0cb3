"""JSON processing utilities."""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Tuple, Union

from ..constants import ERR_INVALID_JSON
from ..exceptions import PoseParseError


class JSONProcessor:
    """JSON Lines reading and deterministic JSON writing."""

    @staticmethod
    def parse_line(line: str, line_number: int) -> Dict[str, Any]:
        """Parse one JSONL record; errors carry the line number."""
        try:
            parsed = json.loads(line)
        except json.JSONDecodeError as e:
            raise PoseParseError(ERR_INVALID_JSON.format(e.msg), line_number) from e
        if not isinstance(parsed, dict):
            raise PoseParseError(ERR_INVALID_JSON.format("record is not an object"), line_number)
        return parsed

    @classmethod
    def iter_jsonl(cls, path: Union[str, Path]) -> Iterator[Tuple[int, Dict[str, Any]]]:
        """Yield (1-based line number, record) for every non-blank line."""
        with open(path, "r", encoding="utf-8") as handle:
            for line_number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                yield line_number, cls.parse_line(line, line_number)

    @staticmethod
    def dumps(obj: Any) -> str:
        """Stable single-line encoding (sorted keys, no whitespace padding)."""
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def write_jsonl(cls, records: Iterable[Dict[str, Any]], path: Union[str, Path]) -> int:
        count = 0
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(cls.dumps(record) + "\n")
                count += 1
        return count

    @staticmethod
    def write_json(obj: Any, path: Union[str, Path]) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return target

    @staticmethod
    def read_json(path: Union[str, Path]) -> Any:
        return json.loads(Path(path).read_text(encoding="utf-8"))
