"""Traditional pipeline: TF-IDF bag of words plus engineered surface
features, recursive feature elimination with cross-validation, and a
from-scratch random forest.

The forest uses class-weighted Gini impurity, sqrt(V) feature sampling per
split, and bootstrap resamples seeded per tree, so training is fully
deterministic given a seed. Checkpoints are plain JSON so a fitted forest
stays human-inspectable.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateLabels, EmptyVocabulary, ShapeMismatch


# ---------------------------------------------------------------------------
# TF-IDF


@dataclass
class Vocabulary:
    index: dict[str, int]
    df: dict[str, int]
    n_docs: int

    @property
    def size(self) -> int:
        return len(self.index)

    def idf(self, term: str) -> float:
        return math.log(self.n_docs / self.df[term])


def tfidf_fit(documents: Sequence[Sequence[str]]) -> Vocabulary:
    """Build the vocabulary and document frequencies from training docs only.

    Terms are case-folded. idf = ln(N/df) with no smoothing, so a term in
    every training document weighs exactly zero.
    """
    if not documents:
        raise EmptyVocabulary("no documents to fit")
    df: dict[str, int] = {}
    for tokens in documents:
        for term in set(t.lower() for t in tokens):
            df[term] = df.get(term, 0) + 1
    if not df:
        raise EmptyVocabulary("documents contain no tokens")
    index = {term: i for i, term in enumerate(sorted(df))}
    return Vocabulary(index=index, df=df, n_docs=len(documents))


def tfidf_transform(tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    """tf * idf with tf = raw count / token count; unseen terms are ignored."""
    out = np.zeros(vocab.size)
    if not tokens:
        return out
    counts: dict[str, int] = {}
    for t in tokens:
        term = t.lower()
        if term in vocab.index:
            counts[term] = counts.get(term, 0) + 1
    inv_len = 1.0 / len(tokens)
    for term, count in counts.items():
        out[vocab.index[term]] = (
            count * inv_len * math.log(vocab.n_docs / vocab.df[term])
        )
    return out


# ---------------------------------------------------------------------------
# engineered surface features

ENGINEERED_NAMES = (
    "link_count",
    "bibliography_keyword_count",
    "date_pattern_count",
    "medical_lexicon_count",
    "polarity",
)

_MONTHS = (
    "january|february|march|april|may|june|july|august|"
    "september|october|november|december"
)
_MONTH_ABBR = "jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec"


@dataclass(frozen=True)
class SurfaceLexicons:
    """Configurable term lists and regexes behind the engineered features.

    The medical list is a pluggable stand-in for an external concept tagger;
    swap in a richer lexicon without touching the feature interface.
    """

    bibliography_keywords: tuple[str, ...] = (
        "references",
        "bibliography",
        "et al",
        "doi",
        "pubmed",
        "citation",
    )
    bibliography_patterns: tuple[str, ...] = (
        # journal-style volume/issue/page, e.g. "2007; 369(9555):29-36"
        r"\b(?:19|20)\d{2}[^;\n]{0,16};\s*\d+\s*\(\d+\)\s*:\s*\d+",
    )
    date_patterns: tuple[str, ...] = (
        r"review date",
        r"last\s+(?:updated|revised|reviewed)",
        r"article updated",
        r"\b\d{1,2}/\d{1,2}/\d{2,4}\b",
        rf"\b\d{{1,2}}\s+(?:{_MONTHS})\s+\d{{4}}\b",
        rf"\b(?:{_MONTHS})\s+\d{{1,2}},?\s+\d{{4}}\b",
        rf"\b\d{{1,2}}-(?:{_MONTH_ABBR})[a-z]*-\d{{4}}\b",
    )
    medical_terms: tuple[str, ...] = (
        "treatment", "therapy", "diagnosis", "symptom", "symptoms", "dose",
        "medication", "drug", "drugs", "surgery", "chemotherapy", "radiation",
        "clinical", "chronic", "cancer", "arthritis", "depression", "tumor",
        "inflammation", "antidepressant", "remission", "prognosis", "biopsy",
        "side effect", "side effects",
    )
    positive_words: tuple[str, ...] = (
        "benefit", "benefits", "effective", "improve", "improves", "improved",
        "relief", "safe", "success", "successful", "helpful", "recovery",
        "better", "gentle", "useful",
    )
    negative_words: tuple[str, ...] = (
        "risk", "risks", "harm", "harmful", "pain", "painful", "severe",
        "worse", "danger", "dangerous", "adverse", "toxic", "complication",
        "complications", "death",
    )


DEFAULT_LEXICONS = SurfaceLexicons()

_HREF_RE = re.compile(r"<a\b[^>]*\bhref\s*=", re.IGNORECASE)


def _count_terms(text_lower: str, terms: Sequence[str]) -> int:
    total = 0
    for term in terms:
        total += len(re.findall(rf"\b{re.escape(term)}\b", text_lower))
    return total


def _count_patterns(text_lower: str, patterns: Sequence[str]) -> int:
    total = 0
    for pattern in patterns:
        total += len(re.findall(pattern, text_lower))
    return total


def engineered_features(
    html: str, text: str, lexicons: SurfaceLexicons = DEFAULT_LEXICONS
) -> np.ndarray:
    """Five surface cues: links, bibliography markers, date markers,
    medical-lexicon hits, and (pos - neg) / (pos + neg + 1) polarity."""
    lower = text.lower()
    link_count = len(_HREF_RE.findall(html))
    bib = _count_terms(lower, lexicons.bibliography_keywords) + _count_patterns(
        lower, lexicons.bibliography_patterns
    )
    dates = _count_patterns(lower, lexicons.date_patterns)
    medical = _count_terms(lower, lexicons.medical_terms)
    pos = _count_terms(lower, lexicons.positive_words)
    neg = _count_terms(lower, lexicons.negative_words)
    polarity = (pos - neg) / (pos + neg + 1)
    return np.array([link_count, bib, dates, medical, polarity], dtype=np.float64)


# ---------------------------------------------------------------------------
# random forest


@dataclass
class ForestConfig:
    n_trees: int = 200
    min_leaf: int = 2
    max_depth: int | None = None
    features_per_split: int | None = None  # default: round(sqrt(V))


@dataclass
class ForestModel:
    trees: list[dict]
    n_features: int
    config: ForestConfig
    seed: int
    importances: np.ndarray


def gini_impurity(weighted_counts: Sequence[float]) -> float:
    """1 - sum of squared weighted class shares."""
    total = float(sum(weighted_counts))
    if total <= 0:
        return 0.0
    return 1.0 - sum((c / total) ** 2 for c in weighted_counts)


def _best_split(x_col: np.ndarray, y: np.ndarray, w: np.ndarray, min_leaf: int):
    """Minimal weighted-Gini split of one column; None when nothing valid."""
    n = len(x_col)
    order = np.argsort(x_col, kind="stable")
    xs = x_col[order]
    ws = w[order]
    w1 = ws * y[order]
    cum_w = np.cumsum(ws)
    cum_w1 = np.cumsum(w1)
    total_w = cum_w[-1]
    total_w1 = cum_w1[-1]
    left_n = np.arange(1, n)
    valid = (xs[:-1] != xs[1:]) & (left_n >= min_leaf) & ((n - left_n) >= min_leaf)
    if not valid.any():
        return None
    w_left = cum_w[:-1]
    w1_left = cum_w1[:-1]
    w_right = total_w - w_left
    w1_right = total_w1 - w1_left
    with np.errstate(divide="ignore", invalid="ignore"):
        gini_left = 1.0 - ((w1_left / w_left) ** 2 + ((w_left - w1_left) / w_left) ** 2)
        gini_right = 1.0 - (
            (w1_right / w_right) ** 2 + ((w_right - w1_right) / w_right) ** 2
        )
    cost = (w_left * gini_left + w_right * gini_right) / total_w
    cost = np.where(valid, cost, np.inf)
    i = int(np.argmin(cost))
    node_gini = 1.0 - ((total_w1 / total_w) ** 2 + ((total_w - total_w1) / total_w) ** 2)
    decrease = total_w * node_gini - (
        w_left[i] * gini_left[i] + w_right[i] * gini_right[i]
    )
    return float(cost[i]), float((xs[i] + xs[i + 1]) / 2.0), float(decrease)


def _grow_tree(
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    idx: np.ndarray,
    config: ForestConfig,
    m_features: int,
    rng: np.random.Generator,
    importances: np.ndarray,
) -> dict:
    # explicit stack, left subtree first, so deep trees neither overflow the
    # interpreter nor change the rng consumption order
    root: dict = {}
    stack: list[tuple[dict, np.ndarray, int]] = [(root, idx, 0)]
    while stack:
        node, indices, depth = stack.pop()
        labels = y[indices]
        counts = [int(np.sum(labels == 0)), int(np.sum(labels == 1))]
        pure = counts[0] == 0 or counts[1] == 0
        depth_capped = config.max_depth is not None and depth >= config.max_depth
        best = None
        if not (pure or depth_capped or len(indices) < 2 * config.min_leaf):
            candidates = rng.choice(x.shape[1], size=m_features, replace=False)
            for feature in candidates:
                split = _best_split(x[indices, feature], labels, w[indices], config.min_leaf)
                if split is None:
                    continue
                cost, threshold, decrease = split
                if best is None or cost < best[0]:
                    best = (cost, int(feature), threshold, decrease)
        if best is None:
            node["counts"] = counts
            continue
        _, feature, threshold, decrease = best
        importances[feature] += decrease
        mask = x[indices, feature] <= threshold
        node["feature"] = feature
        node["threshold"] = threshold
        node["left"] = {}
        node["right"] = {}
        stack.append((node["right"], indices[~mask], depth + 1))
        stack.append((node["left"], indices[mask], depth + 1))
    return root


def rf_train(
    x: np.ndarray,
    y: np.ndarray,
    class_weight: Mapping[int, float],
    config: ForestConfig = ForestConfig(),
    seed: int = 0,
) -> ForestModel:
    """Bootstrap-aggregated CART trees; tree i draws from seed + i."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(y) != x.shape[0]:
        raise ShapeMismatch(f"features {x.shape} vs labels {y.shape}")
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("forest training needs both classes")
    n, v = x.shape
    w = np.array([class_weight[int(label)] for label in y])
    m_features = config.features_per_split or max(1, int(round(math.sqrt(v))))
    m_features = min(m_features, v)
    importances = np.zeros(v)
    trees = []
    for t in range(config.n_trees):
        rng = np.random.default_rng(seed + t)
        bootstrap = rng.integers(0, n, size=n)
        trees.append(_grow_tree(x, y, w, bootstrap, config, m_features, rng, importances))
    total = importances.sum()
    if total > 0:
        importances = importances / total
    return ForestModel(
        trees=trees, n_features=v, config=config, seed=seed, importances=importances
    )


def _leaf_for(tree: dict, x_row: np.ndarray) -> dict:
    node = tree
    while "feature" in node:
        node = node["left"] if x_row[node["feature"]] <= node["threshold"] else node["right"]
    return node


def rf_predict_proba(model: ForestModel, x_row: np.ndarray) -> np.ndarray:
    """Mean of per-tree leaf class frequencies."""
    x_row = np.asarray(x_row, dtype=np.float64)
    if x_row.shape != (model.n_features,):
        raise ShapeMismatch(f"feature vector {x_row.shape}, expected ({model.n_features},)")
    probs = np.zeros(2)
    for tree in model.trees:
        counts = _leaf_for(tree, x_row)["counts"]
        total = counts[0] + counts[1]
        probs += np.array(counts, dtype=np.float64) / total
    return probs / len(model.trees)


def rf_predict(model: ForestModel, x_row: np.ndarray) -> tuple[int, float]:
    """(label, confidence); argmax with ties going to class 0."""
    probs = rf_predict_proba(model, x_row)
    label = int(np.argmax(probs))
    return label, float(probs[label])


def forest_to_json(model: ForestModel) -> str:
    return json.dumps(
        {
            "n_features": model.n_features,
            "seed": model.seed,
            "config": {
                "n_trees": model.config.n_trees,
                "min_leaf": model.config.min_leaf,
                "max_depth": model.config.max_depth,
                "features_per_split": model.config.features_per_split,
            },
            "importances": [float(v) for v in model.importances],
            "trees": model.trees,
        },
        sort_keys=True,
        separators=(",", ":"),
    )


def forest_from_json(blob: str) -> ForestModel:
    d = json.loads(blob)
    return ForestModel(
        trees=d["trees"],
        n_features=int(d["n_features"]),
        config=ForestConfig(**d["config"]),
        seed=int(d["seed"]),
        importances=np.array(d["importances"], dtype=np.float64),
    )


def save_forest(model: ForestModel, path: str | Path) -> None:
    Path(path).write_text(forest_to_json(model), encoding="utf-8")


def load_forest(path: str | Path) -> ForestModel:
    return forest_from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# full pipeline: vocabulary + engineered block + selection + forest


def document_text(sentences: Sequence[Sequence[str]]) -> str:
    return "\n".join(" ".join(tokens) for tokens in sentences)


def document_tokens(sentences: Sequence[Sequence[str]]) -> list[str]:
    return [t for tokens in sentences for t in tokens]


def feature_vector(
    sentences: Sequence[Sequence[str]],
    html: str,
    vocab: Vocabulary,
    lexicons: SurfaceLexicons = DEFAULT_LEXICONS,
) -> np.ndarray:
    """TF-IDF block followed by the engineered block."""
    tfidf = tfidf_transform(document_tokens(sentences), vocab)
    engineered = engineered_features(html, document_text(sentences), lexicons)
    return np.concatenate([tfidf, engineered])


@dataclass
class BaselinePipeline:
    """Everything needed to score a new document with the forest."""

    criterion: str
    vocab: Vocabulary
    selected: tuple[int, ...]
    forest: ForestModel

    def predict(self, sentences: Sequence[Sequence[str]], html: str) -> tuple[int, float]:
        full = feature_vector(sentences, html, self.vocab)
        return rf_predict(self.forest, full[list(self.selected)])

    def predict_proba(self, sentences: Sequence[Sequence[str]], html: str) -> np.ndarray:
        full = feature_vector(sentences, html, self.vocab)
        return rf_predict_proba(self.forest, full[list(self.selected)])

    def save(self, path: str | Path) -> None:
        payload = {
            "criterion": self.criterion,
            "vocab": {
                "index": self.vocab.index,
                "df": self.vocab.df,
                "n_docs": self.vocab.n_docs,
            },
            "selected": list(self.selected),
            "forest": json.loads(forest_to_json(self.forest)),
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, separators=(",", ":")), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "BaselinePipeline":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        vocab = Vocabulary(
            index={k: int(v) for k, v in d["vocab"]["index"].items()},
            df={k: int(v) for k, v in d["vocab"]["df"].items()},
            n_docs=int(d["vocab"]["n_docs"]),
        )
        return cls(
            criterion=d["criterion"],
            vocab=vocab,
            selected=tuple(int(i) for i in d["selected"]),
            forest=forest_from_json(json.dumps(d["forest"])),
        )


def fit_baseline(
    sentences_by_doc: Sequence[Sequence[Sequence[str]]],
    htmls: Sequence[str],
    labels: Sequence[int],
    criterion: str,
    config: ForestConfig = ForestConfig(),
    seed: int = 0,
    use_rfe: bool = True,
    rfe_config: ForestConfig = ForestConfig(n_trees=25),
    rfe_folds: int = 3,
) -> BaselinePipeline:
    """Fit vocabulary, optionally select features by RFE-CV on internal
    folds of the training data, then train the forest on the selection."""
    y = np.asarray(labels, dtype=np.int64)
    counts = {0: int(np.sum(y == 0)), 1: int(np.sum(y == 1))}
    if counts[0] == 0 or counts[1] == 0:
        raise DegenerateLabels("baseline training needs both classes")
    vocab = tfidf_fit([document_tokens(s) for s in sentences_by_doc])
    x = np.stack(
        [
            feature_vector(s, h, vocab)
            for s, h in zip(sentences_by_doc, htmls)
        ]
    )
    if use_rfe and min(counts.values()) >= rfe_folds:
        folds = _round_robin_folds(y, rfe_folds, seed)
        selected = rfe_cv(x, y, folds, rfe_config, seed=seed)
    else:
        selected = tuple(range(x.shape[1]))
    weight = {c: len(y) / (2.0 * counts[c]) for c in (0, 1)}
    forest = rf_train(x[:, list(selected)], y, weight, config, seed=seed)
    return BaselinePipeline(
        criterion=criterion, vocab=vocab, selected=selected, forest=forest
    )


def _round_robin_folds(
    y: np.ndarray, k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified index folds for internal cross-validation."""
    rng = np.random.default_rng(seed)
    test_sets: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for label in (0, 1):
        idxs = np.flatnonzero(y == label)
        for j in rng.permutation(len(idxs)):
            test_sets[cursor % k].append(int(idxs[j]))
            cursor += 1
    folds = []
    everything = set(range(len(y)))
    for test in test_sets:
        train = sorted(everything.difference(test))
        folds.append((np.array(train, dtype=np.int64), np.array(sorted(test), dtype=np.int64)))
    return folds


# ---------------------------------------------------------------------------
# recursive feature elimination with cross-validation


def rfe_cv(
    features: np.ndarray,
    labels: np.ndarray,
    folds: Sequence[tuple[np.ndarray, np.ndarray]],
    config: ForestConfig = ForestConfig(n_trees=25),
    seed: int = 0,
) -> tuple[int, ...]:
    """Iteratively drop the lowest-importance decile until one feature is
    left; return the feature set with the best mean CV F1-macro (ties go to
    the smaller set)."""
    from .evaluation import metrics  # local import to avoid a cycle at import time

    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[1] < 2:
        raise ShapeMismatch("rfe_cv needs at least two features")
    current = list(range(features.shape[1]))
    history: list[tuple[tuple[int, ...], float]] = []
    round_index = 0
    while True:
        mean_importance = np.zeros(len(current))
        scores = []
        for fold_index, (train_idx, test_idx) in enumerate(folds):
            y_train = labels[train_idx]
            counts = {0: int(np.sum(y_train == 0)), 1: int(np.sum(y_train == 1))}
            if counts[0] == 0 or counts[1] == 0:
                raise DegenerateLabels(f"fold {fold_index} training split is single-class")
            weight = {c: len(y_train) / (2.0 * counts[c]) for c in (0, 1)}
            model = rf_train(
                features[np.ix_(train_idx, current)],
                y_train,
                weight,
                config,
                seed=seed + 31 * round_index + fold_index,
            )
            mean_importance += model.importances
            pairs = [
                (rf_predict(model, features[i, current])[0], int(labels[i]))
                for i in test_idx
            ]
            scores.append(metrics(pairs)["f1_macro"])
        mean_importance /= len(folds)
        history.append((tuple(sorted(current)), float(np.mean(scores))))
        if len(current) == 1:
            break
        n_drop = max(1, len(current) // 10)
        ranking = sorted(range(len(current)), key=lambda j: (mean_importance[j], current[j]))
        dropped = {current[j] for j in ranking[:n_drop]}
        current = [f for f in current if f not in dropped]
        round_index += 1
    best_set, best_score = history[0]
    for feature_set, score in history[1:]:
        if score > best_score or (score == best_score and len(feature_set) < len(best_set)):
            best_set, best_score = feature_set, score
    return best_set
