"""Shared fixtures: a tiny randomly initialized BERT-style model with a
handwritten WordPiece vocabulary, saved locally so no test touches the
network, plus a small ingested corpus file."""

import json

import pytest
import torch
from tokenizers import Tokenizer, normalizers, pre_tokenizers, processors
from tokenizers.models import WordPiece
from transformers import BertConfig, BertModel, PreTrainedTokenizerFast

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "treat", "##ment", "##s", "works", "well", "review",
    "date", "risk", "side", "effect", "doctor", "patient", ".", ":", "/",
    "11", "17", "2012",
]

SENTENCES = {
    "doc0": [
        ["the", "treatment", "works", "well", "."],
        ["review", "date", ":", "11", "/", "17", "/", "2012", "."],
    ],
    "doc1": [
        ["the", "doctor", "treats", "patients", "."],
        ["risk", "."],
        ["side", "effect", "of", "the", "treatment", "."],
    ],
}


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("tiny-bert")
    vocab_map = {t: i for i, t in enumerate(VOCAB)}
    tk = Tokenizer(WordPiece(vocab_map, unk_token="[UNK]"))
    tk.normalizer = normalizers.BertNormalizer(lowercase=True)
    tk.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    tk.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab_map["[CLS]"]), ("[SEP]", vocab_map["[SEP]"])],
    )
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=tk,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
    )
    tokenizer.save_pretrained(path)
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=16,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=24,
    )
    torch.manual_seed(7)
    BertModel(config).save_pretrained(path)
    return path


@pytest.fixture(scope="session")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "documents.json"
    payload = {
        "format": "discerner-documents",
        "version": 1,
        "documents": [
            {
                "id": doc_id,
                "topic": "other",
                "sentences": sentences,
                "labels": {c: 0 for c in ("q4", "q5", "q9", "q10", "q11")},
                "raw_scores": {},
                "html": "",
            }
            for doc_id, sentences in SENTENCES.items()
        ],
    }
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path
