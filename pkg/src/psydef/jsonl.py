"""Tiny JSON-lines helpers shared by the pipeline and the CLI."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")


def write_jsonl(path: str | Path, records: Iterable) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            doc = r.to_dict() if hasattr(r, "to_dict") else r
            fh.write(json.dumps(doc, ensure_ascii=False, sort_keys=True) + "\n")
    return path


def read_jsonl(path: str | Path, decode: Callable[[dict], T] = lambda d: d) -> list[T]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(decode(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record: {exc}") from None
    return out
