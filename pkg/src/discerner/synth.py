"""Synthetic corpora with one planted evidence sentence per positive
document. Used by the self-test suite and handy for demos: the whole
pipeline (HTML ingestion, training, evidence extraction) runs on it without
any real data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CRITERIA, Document, RawArticle, build_document

_FILLER = (
    "the a this that patient doctor people care plan daily weekly often "
    "some most many helpful gentle common simple general regular certain "
    "options support advice visits routine balance rest sleep water food "
    "walking reading questions answers notes ideas goals habits choices"
).split()

_TOPIC_CYCLE = ("breast_cancer", "arthritis", "depression")

# Distinctive surface cue per criterion; none of its words appear in the
# filler vocabulary.
_SIGNAL_BUILDERS = {
    "q4": lambda rng: (
        f"Lancet {rng.integers(1990, 2020)}; "
        f"{rng.integers(100, 999)}({rng.integers(1, 99)}):{rng.integers(10, 99)}-{rng.integers(100, 999)}."
    ),
    "q5": lambda rng: (
        f"Review Date: {rng.integers(1, 13)}/{rng.integers(1, 29)}/{rng.integers(2005, 2020)}."
    ),
    "q9": lambda rng: "During this surgery the surgeon removes inflamed tissue.",
    "q10": lambda rng: "Cognitive behavioral therapy can reduce symptoms quickly.",
    "q11": lambda rng: "Side effects may include nausea and dizziness.",
}


@dataclass
class PlantedCorpus:
    """Articles plus, for each positive document, where the evidence sits."""

    articles: list[RawArticle]
    planted_index: dict[str, int | None]
    criterion: str

    def documents(self) -> list[Document]:
        return [build_document(a) for a in self.articles]


def _filler_sentence(rng: np.random.Generator, lengths: tuple[int, ...]) -> str:
    n_words = int(lengths[int(rng.integers(len(lengths)))])
    words = [_FILLER[int(rng.integers(len(_FILLER)))] for _ in range(n_words)]
    words[0] = words[0].capitalize()
    return " ".join(words) + "."


def planted_corpus(
    n_docs: int = 200,
    n_sentences: int = 20,
    criterion: str = "q5",
    seed: int = 0,
    filler_lengths: tuple[int, ...] = (4, 5, 6, 7),
) -> PlantedCorpus:
    """Balanced corpus where exactly the positive documents contain one
    signal sentence, at a random position."""
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    rng = np.random.default_rng(seed)
    positive = np.zeros(n_docs, dtype=bool)
    positive[: n_docs // 2] = True
    positive = positive[rng.permutation(n_docs)]
    articles = []
    planted: dict[str, int | None] = {}
    signal = _SIGNAL_BUILDERS[criterion]
    for i in range(n_docs):
        doc_id = f"doc{i:04d}"
        sentences = [_filler_sentence(rng, filler_lengths) for _ in range(n_sentences)]
        if positive[i]:
            slot = int(rng.integers(n_sentences))
            sentences[slot] = signal(rng)
            planted[doc_id] = slot
        else:
            planted[doc_id] = None
        body = "".join(f"<p>{s}</p>" for s in sentences)
        html = (
            f"<html><head><title>{doc_id}</title></head><body>{body}</body></html>"
        )
        scores: dict[str, list[int]] = {}
        for c in CRITERIA:
            if c == criterion:
                scores[c] = [4, 5] if positive[i] else [1, 2]
            else:
                scores[c] = [int(rng.integers(1, 6)), int(rng.integers(1, 6))]
        articles.append(
            RawArticle(
                id=doc_id,
                topic=_TOPIC_CYCLE[i % len(_TOPIC_CYCLE)],
                html=html,
                rater_scores=scores,
            )
        )
    return PlantedCorpus(articles=articles, planted_index=planted, criterion=criterion)
