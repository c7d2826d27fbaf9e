"""Writer for the engine's token-vector archive format.

Per-document payload `<doc_id>.emb`: magic "ADEM", version u32 LE = 1,
dim u32 LE, sentence_count u32 LE, then per sentence a token_count u32 LE
followed by token_count * dim IEEE-754 binary32 LE values, row-major.
`manifest.json` carries provider, dim, hex CRC32 of the payload bytes
concatenated in id-sorted order, and per-document token counts.

Implemented here independently of the engine so the two sides of the file
format stay decoupled; the engine's loader is the round-trip check.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"ADEM"
VERSION = 1


def document_payload(sentences: Sequence[np.ndarray], dim: int) -> bytes:
    parts = [MAGIC, struct.pack("<III", VERSION, dim, len(sentences))]
    for matrix in sentences:
        if matrix.ndim != 2 or matrix.shape[1] != dim or matrix.shape[0] < 1:
            raise ValueError(f"sentence matrix shape {matrix.shape}, want (>=1, {dim})")
        parts.append(struct.pack("<I", matrix.shape[0]))
        parts.append(np.ascontiguousarray(matrix, dtype="<f4").tobytes(order="C"))
    return b"".join(parts)


def write_archive(
    out_dir: str | Path,
    provider: str,
    dim: int,
    matrices: Mapping[str, Sequence[np.ndarray]],
    extra_manifest: Mapping | None = None,
) -> str:
    """Write payloads plus manifest; returns the hex checksum."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    crc = 0
    docs: dict[str, list[int]] = {}
    for doc_id in sorted(matrices):
        payload = document_payload(matrices[doc_id], dim)
        (root / f"{doc_id}.emb").write_bytes(payload)
        crc = zlib.crc32(payload, crc)
        docs[doc_id] = [m.shape[0] for m in matrices[doc_id]]
    manifest = {
        "provider": provider,
        "dim": dim,
        "checksum": f"{crc:08x}",
        "docs": docs,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")), encoding="utf-8"
    )
    return manifest["checksum"]
