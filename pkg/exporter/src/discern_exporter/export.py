"""Run a pretrained encoder over a corpus and archive final-layer token
vectors, one merged vector per corpus token."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from .archive_writer import write_archive
from .corpus_io import CorpusDocument, load_ingested_corpus

logger = logging.getLogger(__name__)

ALIGNMENTS = ("mean_subwords", "first_subword")


@dataclass
class ExportJob:
    corpus_path: str
    model_id: str
    out_path: str
    alignment: str = "mean_subwords"
    max_tokens: int = 512
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.alignment not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}")
        if self.max_tokens < 2 or self.batch_size < 1:
            raise ValueError("max_tokens must be >= 2 and batch_size >= 1")


@dataclass
class ExportStats:
    documents: int = 0
    sentences: int = 0
    truncated_sentences: int = 0
    zeroed_tokens: int = 0
    failed_sentences: dict[str, list[int]] = field(default_factory=dict)
    checksum: str = ""
    dim: int = 0


def _merge_subwords(
    hidden: torch.Tensor, word_ids: list[int | None], n_tokens: int, alignment: str
) -> tuple[np.ndarray, int]:
    """One vector per corpus token; tokens with no surviving subwords
    (truncated past the length cap) become zero vectors."""
    dim = hidden.shape[-1]
    out = np.zeros((n_tokens, dim), dtype=np.float32)
    positions: dict[int, list[int]] = {}
    for idx, word in enumerate(word_ids):
        if word is not None:
            positions.setdefault(word, []).append(idx)
    zeroed = 0
    for token_index in range(n_tokens):
        subwords = positions.get(token_index)
        if not subwords:
            zeroed += 1
            continue
        if alignment == "first_subword":
            out[token_index] = hidden[subwords[0]].numpy()
        else:
            out[token_index] = hidden[subwords].mean(dim=0).numpy()
    return out, zeroed


def export(job: ExportJob) -> ExportStats:
    """Embed every sentence of the ingested corpus and write the archive.

    Sentences the tokenizer cannot align are embedded as zeros and flagged
    in the manifest; sentences longer than the length cap are truncated with
    the cut tokens zero-filled and counted.
    """
    documents = load_ingested_corpus(job.corpus_path)
    tokenizer = AutoTokenizer.from_pretrained(job.model_id)
    model = AutoModel.from_pretrained(job.model_id)
    model.eval()
    dim = int(model.config.hidden_size)
    revision = getattr(model.config, "_commit_hash", None) or "local"
    cap = min(
        job.max_tokens,
        int(getattr(model.config, "max_position_embeddings", job.max_tokens)),
    )

    stats = ExportStats(documents=len(documents), dim=dim)
    matrices: dict[str, list[np.ndarray]] = {}
    with torch.no_grad():
        for doc in documents:
            matrices[doc.doc_id] = _embed_document(
                doc, tokenizer, model, cap, job, stats
            )

    provider = f"{Path(job.model_id).name}:{job.alignment}"
    extra = {
        "revision": revision,
        "truncated_sentences": stats.truncated_sentences,
        "zeroed_tokens": stats.zeroed_tokens,
        "warnings": {k: v for k, v in sorted(stats.failed_sentences.items())},
    }
    stats.checksum = write_archive(job.out_path, provider, dim, matrices, extra)
    return stats


def _embed_document(
    doc: CorpusDocument,
    tokenizer,
    model,
    cap: int,
    job: ExportJob,
    stats: ExportStats,
) -> list[np.ndarray]:
    sentences: list[np.ndarray | None] = [None] * len(doc.sentences)
    dim = int(model.config.hidden_size)
    for start in range(0, len(doc.sentences), job.batch_size):
        batch = doc.sentences[start : start + job.batch_size]
        try:
            encoded = tokenizer(
                batch,
                is_split_into_words=True,
                padding=True,
                truncation=True,
                max_length=cap,
                return_tensors="pt",
            )
            hidden = model(**encoded).last_hidden_state
        except Exception:  # tokenizer/model rejected the batch: retry singly
            encoded = None
            hidden = None
        for offset, tokens in enumerate(batch):
            index = start + offset
            stats.sentences += 1
            try:
                if encoded is None:
                    single = tokenizer(
                        [tokens],
                        is_split_into_words=True,
                        truncation=True,
                        max_length=cap,
                        return_tensors="pt",
                    )
                    vectors = model(**single).last_hidden_state[0]
                    word_ids = single.word_ids(0)
                else:
                    vectors = hidden[offset]
                    word_ids = encoded.word_ids(offset)
                merged, zeroed = _merge_subwords(
                    vectors, word_ids, len(tokens), job.alignment
                )
                if zeroed:
                    stats.truncated_sentences += 1
                    stats.zeroed_tokens += zeroed
                sentences[index] = merged
            except Exception as exc:
                logger.warning(
                    "alignment failed for %s sentence %d: %s", doc.doc_id, index, exc
                )
                stats.failed_sentences.setdefault(doc.doc_id, []).append(index)
                sentences[index] = np.zeros((len(tokens), dim), dtype=np.float32)
    return sentences  # type: ignore[return-value]
