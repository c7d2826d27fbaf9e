"""Reader for the engine's ingested documents file.

The exporter talks to the classification engine only through file formats;
this parses the `documents.json` the engine's ingest command produces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

DOCUMENTS_FORMAT = "discerner-documents"


@dataclass
class CorpusDocument:
    doc_id: str
    sentences: list[list[str]]


def load_ingested_corpus(path: str | Path) -> list[CorpusDocument]:
    """Accepts the documents file itself or the directory containing it."""
    p = Path(path)
    if p.is_dir():
        p = p / "documents.json"
    payload = json.loads(p.read_text(encoding="utf-8"))
    if payload.get("format") != DOCUMENTS_FORMAT:
        raise ValueError(f"{p} is not an ingested documents file")
    documents = []
    for entry in payload["documents"]:
        sentences = [list(s) for s in entry["sentences"]]
        if not sentences or any(not s for s in sentences):
            raise ValueError(f"document {entry['id']} has empty sentences")
        documents.append(CorpusDocument(doc_id=entry["id"], sentences=sentences))
    if not documents:
        raise ValueError(f"{p} contains no documents")
    return documents
