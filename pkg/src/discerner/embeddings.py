"""Token-vector sources for the encoders.

Two providers: precomputed archives written by an offline exporter, and a
deterministic hash embedder so the whole engine can run and be tested with
no pretrained model anywhere near it.

Archive layout (one directory):
  <doc_id>.emb   magic "ADEM", version u32 LE, dim u32 LE, sentence_count
                 u32 LE; then per sentence a token_count u32 LE followed by
                 token_count*dim IEEE-754 binary32 LE values, row-major.
  manifest.json  {"provider", "dim", "checksum", "docs": {id: [counts]}}
                 where checksum is the hex CRC32 of the payload files'
                 bytes concatenated in id-sorted order.

Values are stored as 32-bit floats and promoted to float64 on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document
from .errors import (
    BadMagic,
    ChecksumMismatch,
    DiscernError,
    MissingDocument,
    ShapeMismatch,
    VersionUnsupported,
)

MAGIC = b"ADEM"
VERSION = 1


@dataclass
class EmbeddingMeta:
    """Manifest: which documents the archive covers and how it is shaped."""

    provider: str
    dim: int
    checksum: str
    docs: dict[str, list[int]]


@dataclass
class EmbeddingArchive:
    """Per-document, per-sentence token-vector matrices plus their manifest."""

    meta: EmbeddingMeta
    matrices: dict[str, list[np.ndarray]]

    @property
    def dim(self) -> int:
        return self.meta.dim

    @property
    def provider_id(self) -> str:
        return self.meta.provider


def _doc_payload(sentences: Sequence[np.ndarray], dim: int) -> bytes:
    parts = [MAGIC, struct.pack("<III", VERSION, dim, len(sentences))]
    for matrix in sentences:
        if matrix.ndim != 2 or matrix.shape[1] != dim:
            raise ShapeMismatch(f"sentence matrix shape {matrix.shape}, want (*, {dim})")
        if matrix.shape[0] < 1:
            raise ShapeMismatch("empty sentence matrix")
        parts.append(struct.pack("<I", matrix.shape[0]))
        parts.append(matrix.astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def write_archive(archive: EmbeddingArchive, path: str | Path) -> None:
    """Write payload files and manifest; bytes are deterministic per input."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    crc = 0
    docs: dict[str, list[int]] = {}
    for doc_id in sorted(archive.matrices):
        sentences = archive.matrices[doc_id]
        payload = _doc_payload(sentences, archive.meta.dim)
        (root / f"{doc_id}.emb").write_bytes(payload)
        crc = zlib.crc32(payload, crc)
        docs[doc_id] = [m.shape[0] for m in sentences]
    manifest = {
        "provider": archive.meta.provider,
        "dim": archive.meta.dim,
        "checksum": f"{crc:08x}",
        "docs": docs,
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")), encoding="utf-8"
    )


def load_archive(path: str | Path) -> EmbeddingArchive:
    """Load and fully validate an archive directory.

    A mismatch is always an error, never a silent truncation: magic and
    version are checked per file, then the global checksum, then every
    shape against the manifest.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DiscernError(f"missing manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    for key in ("provider", "dim", "checksum", "docs"):
        if key not in manifest:
            raise DiscernError(f"manifest.json missing key {key!r}")
    dim = int(manifest["dim"])
    if dim < 1:
        raise ShapeMismatch(f"manifest dim must be positive, got {dim}")

    payloads: dict[str, bytes] = {}
    crc = 0
    for doc_id in sorted(manifest["docs"]):
        file_path = root / f"{doc_id}.emb"
        if not file_path.exists():
            raise MissingDocument(f"archive payload missing for {doc_id}")
        payload = file_path.read_bytes()
        if payload[:4] != MAGIC:
            raise BadMagic(f"{file_path.name}: bad magic {payload[:4]!r}")
        if len(payload) < 16:
            raise ChecksumMismatch(f"{file_path.name}: truncated header")
        version = struct.unpack_from("<I", payload, 4)[0]
        if version != VERSION:
            raise VersionUnsupported(f"{file_path.name}: version {version}")
        payloads[doc_id] = payload
        crc = zlib.crc32(payload, crc)
    if f"{crc:08x}" != manifest["checksum"]:
        raise ChecksumMismatch(
            f"archive checksum {crc:08x} != manifest {manifest['checksum']}"
        )

    matrices: dict[str, list[np.ndarray]] = {}
    for doc_id, payload in payloads.items():
        expected_counts = [int(c) for c in manifest["docs"][doc_id]]
        if any(c < 1 for c in expected_counts):
            raise ShapeMismatch(f"{doc_id}: manifest token counts must be positive")
        file_dim, sentence_count = struct.unpack_from("<II", payload, 8)
        if file_dim != dim:
            raise ShapeMismatch(f"{doc_id}: payload dim {file_dim} != manifest {dim}")
        if sentence_count != len(expected_counts):
            raise ShapeMismatch(
                f"{doc_id}: payload has {sentence_count} sentences, "
                f"manifest says {len(expected_counts)}"
            )
        offset = 16
        sentences = []
        for s_idx, expected in enumerate(expected_counts):
            if offset + 4 > len(payload):
                raise ShapeMismatch(f"{doc_id}: payload ends inside sentence {s_idx}")
            (token_count,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            if token_count != expected:
                raise ShapeMismatch(
                    f"{doc_id} sentence {s_idx}: {token_count} tokens, "
                    f"manifest says {expected}"
                )
            nbytes = token_count * dim * 4
            if offset + nbytes > len(payload):
                raise ShapeMismatch(f"{doc_id}: payload ends inside sentence {s_idx}")
            block = np.frombuffer(payload, dtype="<f4", count=token_count * dim, offset=offset)
            sentences.append(block.reshape(token_count, dim).astype(np.float64))
            offset += nbytes
        if offset != len(payload):
            raise ShapeMismatch(f"{doc_id}: {len(payload) - offset} trailing bytes")
        matrices[doc_id] = sentences

    meta = EmbeddingMeta(
        provider=str(manifest["provider"]),
        dim=dim,
        checksum=str(manifest["checksum"]),
        docs={k: [int(c) for c in v] for k, v in manifest["docs"].items()},
    )
    return EmbeddingArchive(meta=meta, matrices=matrices)


# ---------------------------------------------------------------------------
# hash embedder


def hash_embed(token: str, dim: int, seed: int) -> np.ndarray:
    """Unit-norm vector drawn from a PRNG seeded by a keyed token digest.

    Purely a function of (token, dim, seed); stable across platforms and
    sessions because it never touches Python's randomized str hash.
    """
    if dim < 1:
        raise ShapeMismatch(f"embedding dim must be >= 1, got {dim}")
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=16, key=str(seed).encode("ascii")
    ).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    vec = rng.standard_normal(dim)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # vanishingly unlikely; keep the unit-norm contract anyway
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


class HashEmbedder:
    """Caching wrapper around hash_embed with a fixed (dim, seed)."""

    def __init__(self, dim: int, seed: int = 0):
        if dim < 1:
            raise ShapeMismatch(f"embedding dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self.provider_id = f"hash:dim={dim}:seed={seed}"
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, token: str) -> np.ndarray:
        cached = self._cache.get(token)
        if cached is None:
            cached = hash_embed(token, self.dim, self.seed)
            self._cache[token] = cached
        return cached


def embed_document(
    doc: Document, source: EmbeddingArchive | HashEmbedder
) -> list[np.ndarray]:
    """Matrices of token vectors for one document, one per sentence.

    Row counts always mirror the document's token counts; an archive that
    disagrees raises instead of truncating.
    """
    if isinstance(source, HashEmbedder):
        return [
            np.stack([source.vector(tok) for tok in sentence])
            for sentence in doc.sentences
        ]
    if doc.id not in source.matrices:
        raise MissingDocument(f"document {doc.id} not in archive")
    sentences = source.matrices[doc.id]
    if len(sentences) != len(doc.sentences):
        raise ShapeMismatch(
            f"{doc.id}: archive has {len(sentences)} sentences, "
            f"document has {len(doc.sentences)}"
        )
    for i, (matrix, tokens) in enumerate(zip(sentences, doc.sentences)):
        if matrix.shape[0] != len(tokens):
            raise ShapeMismatch(
                f"{doc.id} sentence {i}: archive has {matrix.shape[0]} tokens, "
                f"document has {len(tokens)}"
            )
    return sentences


def embed_corpus(
    documents: Sequence[Document], source: EmbeddingArchive | HashEmbedder
) -> dict[str, list[np.ndarray]]:
    return {doc.id: embed_document(doc, source) for doc in documents}
