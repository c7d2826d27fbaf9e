"""Corpus ingestion: HTML articles plus rater scores become tokenized,
labeled documents, stratified fold plans, and class weights.

All operations here are pure given their inputs and a seed.
"""

from __future__ import annotations

import csv
import html.parser
import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateLabels,
    DiscernError,
    EmptyDocument,
    InvalidScore,
    MissingDocument,
    StratificationInfeasible,
)

CRITERIA = ("q4", "q5", "q9", "q10", "q11")
TOPICS = ("breast_cancer", "arthritis", "depression", "other")

LABELS_HEADER = ("id", "topic", "rater", "q4", "q5", "q9", "q10", "q11")

# Sentence terminators before whitespace + uppercase split a sentence, unless
# the word they end is on the guard list.
DEFAULT_ABBREVIATIONS = frozenset(
    {"Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "e.g.", "i.e.", "vs.", "etc."}
)

_SENTENCE_END = frozenset(".!?")
_PUNCT = frozenset(string.punctuation)


@dataclass
class RawArticle:
    """One crawled article: HTML body plus per-criterion rater scores."""

    id: str
    topic: str
    html: str
    rater_scores: dict[str, list[int]]

    def validate(self) -> None:
        if not self.id:
            raise DiscernError("article id must be nonempty")
        if self.topic not in TOPICS:
            raise DiscernError(f"unknown topic {self.topic!r} for article {self.id}")
        for criterion in CRITERIA:
            scores = self.rater_scores.get(criterion)
            if not scores:
                raise DiscernError(f"article {self.id} missing scores for {criterion}")
            for s in scores:
                if not 1 <= s <= 5:
                    raise InvalidScore(f"score {s} for {self.id}/{criterion} outside 1..5")


@dataclass
class Document:
    """Tokenized article with binary labels for every criterion."""

    id: str
    topic: str
    sentences: list[list[str]]
    labels: dict[str, int]
    raw_scores: dict[str, list[int]] = field(default_factory=dict)

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    def sentence_text(self, i: int) -> str:
        return " ".join(self.sentences[i])


@dataclass
class FoldPlan:
    """K disjoint train/test splits of document ids, stratified per criterion."""

    criterion: str
    folds: list[tuple[list[str], list[str]]]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)


@dataclass
class ClassWeights:
    """Per-label loss weights, inversely proportional to class frequency."""

    criterion: str
    weight: dict[int, float]


# ---------------------------------------------------------------------------
# HTML text extraction

_SKIPPED_ELEMENTS = frozenset({"script", "style", "head"})

_BLOCK_ELEMENTS = frozenset(
    {
        "address", "article", "aside", "blockquote", "br", "caption", "dd",
        "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer",
        "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr", "li",
        "main", "nav", "ol", "p", "pre", "section", "table", "tbody", "td",
        "tfoot", "th", "thead", "tr", "ul",
    }
)


class _TextExtractor(html.parser.HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self._skip_depth = 0
        self._lines: list[str] = []
        self._current: list[str] = []

    def _break_line(self) -> None:
        if self._current:
            line = " ".join("".join(self._current).split())
            if line:
                self._lines.append(line)
            self._current = []

    def handle_starttag(self, tag, attrs):
        if tag in _SKIPPED_ELEMENTS:
            self._skip_depth += 1
        if tag in _BLOCK_ELEMENTS:
            self._break_line()

    def handle_endtag(self, tag):
        if tag in _SKIPPED_ELEMENTS and self._skip_depth > 0:
            self._skip_depth -= 1
        if tag in _BLOCK_ELEMENTS:
            self._break_line()

    def handle_startendtag(self, tag, attrs):
        if tag in _BLOCK_ELEMENTS:
            self._break_line()

    def handle_data(self, data):
        if self._skip_depth > 0:
            return
        # Newlines in character data are kept as line breaks; this makes the
        # extractor idempotent on its own plain-text output.
        parts = data.split("\n")
        for i, part in enumerate(parts):
            if i > 0:
                self._break_line()
            if part:
                self._current.append(part)

    def result(self) -> str:
        self._break_line()
        return "\n".join(self._lines)


def extract_text(html_source: str) -> str:
    """Strip markup, dropping script/style/head content and rendering
    block-level boundaries as newlines. Entity references are decoded and
    whitespace runs collapse to single spaces within a line."""
    parser = _TextExtractor()
    parser.feed(html_source)
    parser.close()
    text = parser.result()
    if not text:
        raise EmptyDocument("no text left after HTML extraction")
    return text


# ---------------------------------------------------------------------------
# sentence segmentation and tokenization


def _split_line_into_sentences(line: str, abbreviations: frozenset[str]) -> list[str]:
    sentences = []
    start = 0
    i = 0
    n = len(line)
    while i < n:
        ch = line[i]
        if ch in _SENTENCE_END:
            # look ahead: whitespace then an uppercase letter
            j = i + 1
            while j < n and line[j].isspace():
                j += 1
            if j > i + 1 and j < n and line[j].isupper():
                word_start = max(start, line.rfind(" ", start, i) + 1)
                word = line[word_start : i + 1]
                if word not in abbreviations:
                    sentences.append(line[start : i + 1])
                    start = j
                    i = j
                    continue
        i += 1
    if start < n:
        sentences.append(line[start:])
    return sentences


def _tokenize(sentence: str, abbreviations: frozenset[str]) -> list[str]:
    tokens: list[str] = []
    for word in sentence.split():
        if word in abbreviations:
            tokens.append(word)
            continue
        lead: list[str] = []
        trail: list[str] = []
        while word and word[0] in _PUNCT and word not in abbreviations:
            lead.append(word[0])
            word = word[1:]
        while word and word[-1] in _PUNCT and word not in abbreviations:
            trail.append(word[-1])
            word = word[:-1]
        tokens.extend(lead)
        if word:
            tokens.append(word)
        tokens.extend(reversed(trail))
    return tokens


def segment(
    text: str, abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS
) -> list[list[str]]:
    """Split plain text into sentences of tokens.

    Sentences break at newlines, or at . ! ? followed by whitespace and an
    uppercase letter (guarded by the abbreviation list). Tokens split on
    whitespace with leading/trailing punctuation detached, except for guarded
    abbreviations which stay intact.
    """
    guard = frozenset(abbreviations)
    out: list[list[str]] = []
    for line in text.split("\n"):
        for sentence in _split_line_into_sentences(line, guard):
            tokens = _tokenize(sentence, guard)
            if tokens:
                out.append(tokens)
    if not out:
        raise EmptyDocument("no tokens after segmentation")
    return out


# ---------------------------------------------------------------------------
# labels, folds, weights


def binarize_labels(rater_scores: Sequence[int]) -> int:
    """1 iff the mean rater score reaches 3 (the passing band is 3..5)."""
    if not rater_scores:
        raise InvalidScore("empty score list")
    for s in rater_scores:
        if not 1 <= s <= 5:
            raise InvalidScore(f"score {s} outside 1..5")
    return 1 if sum(rater_scores) / len(rater_scores) >= 3.0 else 0


def build_document(
    article: RawArticle, abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS
) -> Document:
    """Extract, segment, and binarize one article."""
    article.validate()
    sentences = segment(extract_text(article.html), abbreviations)
    labels = {c: binarize_labels(article.rater_scores[c]) for c in CRITERIA}
    return Document(
        id=article.id,
        topic=article.topic,
        sentences=sentences,
        labels=labels,
        raw_scores={c: list(article.rater_scores[c]) for c in CRITERIA},
    )


def stratified_folds(
    documents: Sequence[Document], criterion: str, k: int, seed: int
) -> FoldPlan:
    """Round-robin assignment per class after a seeded shuffle.

    The fold cursor carries over between classes, which keeps test-fold sizes
    within one article of each other while preserving per-class balance.
    """
    if k < 2:
        raise StratificationInfeasible(f"need k >= 2 folds, got {k}")
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for doc in documents:
        by_class[doc.labels[criterion]].append(doc.id)
    rng = np.random.default_rng(seed)
    test_sets: list[list[str]] = [[] for _ in range(k)]
    cursor = 0
    for label in (0, 1):
        ids = sorted(by_class[label])
        if len(ids) < k:
            raise StratificationInfeasible(
                f"class {label} for {criterion} has {len(ids)} documents, need >= {k}"
            )
        order = rng.permutation(len(ids))
        for j in order:
            test_sets[cursor % k].append(ids[j])
            cursor += 1
    all_ids = {doc.id for doc in documents}
    folds = []
    for test in test_sets:
        test_sorted = sorted(test)
        train_sorted = sorted(all_ids.difference(test))
        folds.append((train_sorted, test_sorted))
    return FoldPlan(criterion=criterion, folds=folds, seed=seed)


def class_weights(labels: Sequence[int], criterion: str = "") -> ClassWeights:
    """weight[c] = N / (2 * count[c]), so weighted class totals are equal."""
    counts = {0: 0, 1: 0}
    for y in labels:
        counts[y] += 1
    if counts[0] == 0 or counts[1] == 0:
        raise DegenerateLabels(f"both classes required, got counts {counts}")
    n = len(labels)
    return ClassWeights(
        criterion=criterion, weight={c: n / (2.0 * counts[c]) for c in (0, 1)}
    )


# ---------------------------------------------------------------------------
# corpus directory and documents file I/O


def load_corpus_dir(path: str | Path) -> list[RawArticle]:
    """Read `articles/<id>.html` plus `labels.csv` (one row per article x rater)."""
    root = Path(path)
    labels_path = root / "labels.csv"
    if not labels_path.exists():
        raise DiscernError(f"missing labels.csv under {root}")
    per_article: dict[str, dict[str, object]] = {}
    with open(labels_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LABELS_HEADER:
            raise DiscernError(
                f"labels.csv header must be {','.join(LABELS_HEADER)}"
            )
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(LABELS_HEADER):
                raise DiscernError(f"labels.csv line {row_num}: wrong column count")
            doc_id, topic, rater = row[0], row[1], row[2]
            entry = per_article.setdefault(
                doc_id, {"topic": topic, "raters": {}}
            )
            if entry["topic"] != topic:
                raise DiscernError(f"conflicting topic for article {doc_id}")
            raters: dict = entry["raters"]  # type: ignore[assignment]
            if rater in raters:
                raise DiscernError(f"duplicate rater {rater} for article {doc_id}")
            try:
                scores = [int(v) for v in row[3:]]
            except ValueError as exc:
                raise InvalidScore(f"labels.csv line {row_num}: {exc}") from exc
            raters[rater] = scores
    articles = []
    for doc_id in sorted(per_article):
        entry = per_article[doc_id]
        html_path = root / "articles" / f"{doc_id}.html"
        if not html_path.exists():
            raise MissingDocument(f"no HTML file for article {doc_id}")
        raters: dict = entry["raters"]  # type: ignore[assignment]
        rater_scores: dict[str, list[int]] = {c: [] for c in CRITERIA}
        for rater in sorted(raters):
            for c, score in zip(CRITERIA, raters[rater]):
                rater_scores[c].append(score)
        article = RawArticle(
            id=doc_id,
            topic=str(entry["topic"]),
            html=html_path.read_text(encoding="utf-8"),
            rater_scores=rater_scores,
        )
        article.validate()
        articles.append(article)
    if not articles:
        raise DiscernError(f"no articles found under {root}")
    return articles


DOCUMENTS_FORMAT = "discerner-documents"


def save_documents(
    path: str | Path, documents: Sequence[Document], html_by_id: Mapping[str, str]
) -> None:
    payload = {
        "format": DOCUMENTS_FORMAT,
        "version": 1,
        "documents": [
            {
                "id": d.id,
                "topic": d.topic,
                "sentences": d.sentences,
                "labels": d.labels,
                "raw_scores": d.raw_scores,
                "html": html_by_id.get(d.id, ""),
            }
            for d in documents
        ],
    }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")), encoding="utf-8"
    )


def load_documents(path: str | Path) -> tuple[list[Document], dict[str, str]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != DOCUMENTS_FORMAT:
        raise DiscernError(f"{path} is not a documents file")
    docs = []
    html_by_id = {}
    for entry in payload["documents"]:
        docs.append(
            Document(
                id=entry["id"],
                topic=entry["topic"],
                sentences=[list(s) for s in entry["sentences"]],
                labels={c: int(v) for c, v in entry["labels"].items()},
                raw_scores={c: list(v) for c, v in entry.get("raw_scores", {}).items()},
            )
        )
        html_by_id[entry["id"]] = entry.get("html", "")
    return docs, html_by_id
