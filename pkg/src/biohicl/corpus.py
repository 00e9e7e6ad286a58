"""Corpus JSONL records: ``{"id": str, "text": str, "mesh": [descriptor ui, ...]}``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    mesh: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "text": self.text, "mesh": list(self.mesh)}, sort_keys=True)


def read_corpus(path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs.append(Document(str(obj["id"]), str(obj["text"]), tuple(obj.get("mesh", ()))))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad corpus record ({exc})") from None
    return docs


def write_corpus(path, docs: Sequence[Document]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(d.to_json() + "\n")
