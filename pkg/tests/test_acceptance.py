"""Acceptance suite: each exit criterion at its stated tolerance.

Run `pytest tests/test_acceptance.py -s` to see one PASS/FAIL line per
criterion. Everything here runs on the hash embedder; no pretrained model
or external data is involved anywhere.
"""

import math
import time

import numpy as np
import pytest

from discerner import autodiff as ad
from discerner import model as hea
from discerner.autodiff import Tensor
from discerner.baseline import (
    ForestConfig,
    fit_baseline,
    gini_impurity,
    tfidf_fit,
    tfidf_transform,
)
from discerner.corpus import class_weights, stratified_folds
from discerner.embeddings import (
    EmbeddingArchive,
    EmbeddingMeta,
    HashEmbedder,
    embed_document,
    load_archive,
    write_archive,
)
from discerner.evaluation import (
    PredictionRecord,
    coverage_analysis,
    coverage_threshold,
    metrics,
)
from discerner.report import format_coverage_table, format_cv_table
from discerner.synth import planted_corpus
from discerner.training import (
    LabeledExample,
    TrainConfig,
    example_loss,
    objective,
    train_fold,
    validation_split,
)
from test_evaluation import brute_force_metrics


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _train_config(variant: str, seed: int, max_epochs: int, embed_dim: int = 32):
    return TrainConfig(
        model=hea.ModelConfig(
            variant=variant,
            d_h_sent=16,
            d_h_doc=16,
            join_sent="concat",
            join_doc="concat",
            attention="scaled_dot",
            dropout_p=0.1,
            criterion="q5",
            embed_dim=embed_dim,
        ),
        learning_rate=2e-3,
        l2=1e-5,
        max_epochs=max_epochs,
        batch_size=4,
        optimizer="adam",
        seed=seed,
    )


def test_gradient_fidelity():
    """Full model gradient vs central differences, all joins and attention
    modes, 3 sentences x 5 tokens, d_w=8, d_h=6, h=1e-5, within 30 s."""
    started = time.time()
    rng = np.random.default_rng(3)
    doc = [rng.standard_normal((5, 8)) for _ in range(3)]
    worst = 0.0
    for join in ("concat", "sum"):
        for attention in ("additive", "scaled_dot"):
            config = hea.ModelConfig(
                variant="hea", d_h_sent=6, d_h_doc=6, join_sent=join,
                join_doc=join, attention=attention, dropout_p=0.0,
                criterion="q5", embed_dim=8,
            )
            params = hea.init_params(config, np.random.default_rng(0))

            def f():
                result = hea.forward(config, params, doc)
                return example_loss(result.probs_node, 1, 0.05)

            worst = max(worst, ad.grad_check(f, params.trainable(), h=1e-5))
    elapsed = time.time() - started
    _verdict(
        "gradient fidelity",
        worst <= 1e-4 and elapsed < 30.0,
        f"max relative error {worst:.2e} (tol 1e-4), {elapsed:.1f}s (< 30s)",
    )


def test_planted_evidence_cross_validation():
    """200 docs x 20 sentences, hash dim 32, 5-fold CV: mean test F1-macro
    >= 0.95 within 30 epochs and top-1 attention on the planted sentence for
    >= 80% of positive test documents, under 10 minutes."""
    started = time.time()
    corpus = planted_corpus(n_docs=200, n_sentences=20, criterion="q5", seed=11)
    docs = corpus.documents()
    source = HashEmbedder(dim=32, seed=0)
    matrices = {d.id: embed_document(d, source) for d in docs}
    by_id = {d.id: d for d in docs}
    plan = stratified_folds(docs, "q5", 5, seed=11)

    fold_scores = []
    attention_hits = 0
    positives = 0
    for fold_index, (train_ids, test_ids) in enumerate(plan.folds):
        examples = [
            LabeledExample(i, matrices[i], by_id[i].labels["q5"]) for i in train_ids
        ]
        train, val = validation_split(examples, 0.1, seed=500 + fold_index)
        config = _train_config("hea", seed=1000 + fold_index, max_epochs=12)
        checkpoint, _ = train_fold(train, val, config)
        assert checkpoint.best_epoch <= 30
        params = hea.params_from_arrays(config.model, checkpoint.params)
        pairs = []
        for doc_id in test_ids:
            prediction = hea.forward(config.model, params, matrices[doc_id]).prediction
            pairs.append((prediction.label, by_id[doc_id].labels["q5"]))
            slot = corpus.planted_index[doc_id]
            if slot is not None:
                positives += 1
                attention_hits += int(np.argmax(prediction.attention) == slot)
        fold_scores.append(metrics(pairs)["f1_macro"])

    mean_f1 = float(np.mean(fold_scores))
    hit_rate = attention_hits / positives
    elapsed = time.time() - started
    _verdict(
        "planted-evidence task",
        mean_f1 >= 0.95 and hit_rate >= 0.80 and elapsed < 600.0,
        f"mean test F1-macro {mean_f1:.4f} (>= 0.95), top-1 attention on "
        f"planted sentence {attention_hits}/{positives} = {hit_rate:.0%} "
        f"(>= 80%), {elapsed:.0f}s (< 600s)",
    )


def test_attention_ablation_direction():
    """Across 5 seeds on the planted-evidence task, mean F1-macro of the
    attention model is at least that of the mean-pooled ablation."""
    corpus = planted_corpus(n_docs=120, n_sentences=16, criterion="q5", seed=21)
    docs = corpus.documents()
    source = HashEmbedder(dim=32, seed=0)
    matrices = {d.id: embed_document(d, source) for d in docs}
    labels = {d.id: d.labels["q5"] for d in docs}
    ids = sorted(labels)

    def split(seed):
        rng = np.random.default_rng(seed)
        pos = [i for i in ids if labels[i] == 1]
        neg = [i for i in ids if labels[i] == 0]
        rng.shuffle(pos)
        rng.shuffle(neg)
        return pos[12:] + neg[12:], pos[:12] + neg[:12]

    scores = {"hea": [], "he": []}
    for seed in range(5):
        train_ids, test_ids = split(1000 + seed)
        for variant in ("hea", "he"):
            examples = [LabeledExample(i, matrices[i], labels[i]) for i in train_ids]
            train, val = validation_split(examples, 0.1, seed=seed)
            config = _train_config(variant, seed=seed, max_epochs=8)
            checkpoint, _ = train_fold(train, val, config)
            params = hea.params_from_arrays(config.model, checkpoint.params)
            pairs = [
                (hea.forward(config.model, params, matrices[i]).prediction.label, labels[i])
                for i in test_ids
            ]
            scores[variant].append(metrics(pairs)["f1_macro"])
    mean_hea = float(np.mean(scores["hea"]))
    mean_he = float(np.mean(scores["he"]))
    _verdict(
        "attention ablation direction",
        mean_hea >= mean_he,
        f"mean F1-macro attention {mean_hea:.4f} >= mean-pooled {mean_he:.4f}",
    )


def test_oracle_equivalences():
    """Metrics match a brute-force confusion implementation exactly on 1000
    random label sets; coverage thresholds match a sort-based quantile
    oracle exactly; loss and objective match hand scalars to 1e-12."""
    rng = np.random.default_rng(0)
    metrics_exact = True
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        pairs = [(int(rng.integers(2)), int(rng.integers(2))) for _ in range(n)]
        if metrics(pairs) != brute_force_metrics(pairs):
            metrics_exact = False
            break

    thresholds_exact = True
    for _ in range(300):
        n = int(rng.integers(1, 60))
        confidences = rng.uniform(0.5, 1.0, n).tolist()
        coverage = float(rng.choice([0.3, 0.5, 0.8, 0.9, 1.0]))
        n_abstain = int(math.floor((1.0 - coverage) * n + 1e-9))
        expected = 0.5 if n_abstain <= 0 else sorted(confidences)[n_abstain]
        if coverage_threshold(confidences, coverage) != expected:
            thresholds_exact = False
            break

    loss = example_loss(Tensor([0.9, 0.1]), 1, 2.0).item()
    loss_ok = abs(loss - (-2.0 * math.log(0.1))) <= 1e-12
    params = [Tensor([1.0, 1.0, 1.0])]
    objective_value = objective([Tensor(np.float64(0.0))], params, 2.0).item()
    objective_ok = abs(objective_value - 3.0) <= 1e-12
    batch = [Tensor(np.float64(v)) for v in (0.25, 1.5, 0.125)]
    mixed = objective(batch, params, 0.5).item()
    mixed_ok = abs(mixed - ((0.25 + 1.5 + 0.125) / 3 + 0.25 * 3.0)) <= 1e-12

    _verdict(
        "oracle equivalences",
        metrics_exact and thresholds_exact and loss_ok and objective_ok and mixed_ok,
        f"metrics exact on 1000 sets: {metrics_exact}; thresholds exact on "
        f"300 draws: {thresholds_exact}; loss/objective within 1e-12: "
        f"{loss_ok and objective_ok and mixed_ok}",
    )


def test_invariant_suites(tmp_path):
    """Normalization, GRU boundedness, fold partitioning, byte-exact
    round-trips, and seed determinism, all in one sweep."""
    rng = np.random.default_rng(7)

    # softmax / attention normalization at +-1e-9
    norm_ok = True
    for _ in range(200):
        n = int(rng.integers(1, 10))
        query = Tensor(rng.standard_normal(4))
        attn = hea.AttentionParams(mode="scaled_dot", query=query)
        alpha = hea.attention_weights(attn, Tensor(rng.standard_normal((n, 4)) * 5)).data
        probs = ad.softmax(Tensor(rng.standard_normal(n) * 100)).data
        norm_ok &= bool(np.all(alpha > 0) and abs(alpha.sum() - 1.0) <= 1e-9)
        norm_ok &= bool(np.all(probs > 0) and abs(probs.sum() - 1.0) <= 1e-9)

    # GRU boundedness under tanh
    bounded_ok = True
    for trial in range(30):
        d = int(rng.integers(1, 5))
        cell_rng = np.random.default_rng(trial)
        cell = hea.GRUCellParams(
            *(Tensor(cell_rng.uniform(-2, 2, (d, d))) for _ in range(6)),
            *(Tensor(cell_rng.uniform(-2, 2, d)) for _ in range(3)),
        )
        h = Tensor(rng.uniform(-1, 1, d))
        for _ in range(8):
            h, _ = hea.gru_step(cell, Tensor(rng.standard_normal(d) * 2), h)
            bounded_ok &= bool(np.all(np.abs(h.data) <= 1.0))

    # fold partition and stratification within one article
    corpus = planted_corpus(n_docs=45, n_sentences=3, criterion="q4", seed=2)
    docs = corpus.documents()
    plan = stratified_folds(docs, "q4", 5, seed=3)
    all_ids = {d.id for d in docs}
    positives = {d.id for d in docs if d.labels["q4"] == 1}
    seen: list[str] = []
    folds_ok = True
    share = len(positives) / 5
    for train_ids, test_ids in plan.folds:
        folds_ok &= set(train_ids).isdisjoint(test_ids)
        folds_ok &= set(train_ids) | set(test_ids) == all_ids
        folds_ok &= abs(len(positives & set(test_ids)) - share) <= 1.0
        seen.extend(test_ids)
    folds_ok &= sorted(seen) == sorted(all_ids)

    # archive byte-exact round-trip
    matrices = {
        "a": [rng.standard_normal((3, 4)).astype(np.float32).astype(np.float64)],
        "b": [rng.standard_normal((2, 4)).astype(np.float32).astype(np.float64)] * 2,
    }
    archive = EmbeddingArchive(
        meta=EmbeddingMeta(provider="t", dim=4, checksum="", docs={}), matrices=matrices
    )
    first = tmp_path / "arch1"
    second = tmp_path / "arch2"
    write_archive(archive, first)
    write_archive(load_archive(first), second)
    archive_ok = all(
        (first / name).read_bytes() == (second / name).read_bytes()
        for name in ("a.emb", "b.emb", "manifest.json")
    )

    # checkpoint byte-exact round-trip and seed determinism
    corpus = planted_corpus(n_docs=24, n_sentences=4, criterion="q5", seed=5)
    docs = corpus.documents()
    source = HashEmbedder(dim=16, seed=0)
    examples = [
        LabeledExample(d.id, embed_document(d, source), d.labels["q5"]) for d in docs
    ]
    train, val = validation_split(examples, 0.2, seed=1)
    config = _train_config("hea", seed=9, max_epochs=2, embed_dim=16)
    ckpt_a, log_a = train_fold(train, val, config)
    ckpt_b, log_b = train_fold(train, val, config)
    seed_ok = log_a == log_b and all(
        np.array_equal(ckpt_a.params[k], ckpt_b.params[k]) for k in ckpt_a.params
    )
    path_a = tmp_path / "a.adck"
    path_b = tmp_path / "b.adck"
    ckpt_a.save(path_a)
    loaded = hea.load_checkpoint(path_a)
    hea.save_checkpoint(
        path_b, loaded.config, loaded.arrays, loaded.criterion,
        loaded.best_epoch, loaded.val_f1_macro, loaded.seed,
    )
    checkpoint_ok = path_a.read_bytes() == path_b.read_bytes()

    ok = norm_ok and bounded_ok and folds_ok and archive_ok and seed_ok and checkpoint_ok
    _verdict(
        "invariant suites",
        ok,
        f"normalization {norm_ok}, boundedness {bounded_ok}, folds {folds_ok}, "
        f"archive round-trip {archive_ok}, seed determinism {seed_ok}, "
        f"checkpoint round-trip {checkpoint_ok}",
    )


def test_structural_table_reproduction():
    """Cross-validation rows render as "mean (std)" and the coverage table
    reports threshold 0.50 at 100% coverage, on an arbitrary dump."""
    from discerner.evaluation import CVReport

    report = CVReport(
        criterion="q5",
        model_label="HEA hash",
        per_fold=[],
        mean={"f1_macro": 0.82, "accuracy": 0.83, "precision": 0.8, "recall": 0.8},
        std={"f1_macro": 0.06, "accuracy": 0.05, "precision": 0.04, "recall": 0.04},
    )
    table = format_cv_table([report])
    row_ok = "0.82 ( 6)" in table

    rng = np.random.default_rng(12)
    records = [
        PredictionRecord(f"d{i}", "q9", int(rng.integers(2)), int(rng.integers(2)),
                         float(rng.uniform(0.5, 1.0)))
        for i in range(37)
    ]
    coverage_report = coverage_analysis(records, [0.8, 1.0])
    full = next(r for r in coverage_report.rows if r.coverage == 1.0)
    coverage_table = format_coverage_table(coverage_report)
    coverage_ok = full.threshold == 0.5 and "100%" in coverage_table and "0.50" in coverage_table

    _verdict(
        "structural table reproduction",
        row_ok and coverage_ok,
        f"mean (std) row rendered: {row_ok}; coverage 100% threshold 0.50: {coverage_ok}",
    )


def test_baseline_sanity():
    """Forest on planted surface features reaches F1-macro >= 0.9; Gini and
    TF-IDF unit examples match their formula oracles to 1e-12."""
    corpus = planted_corpus(n_docs=100, n_sentences=10, criterion="q5", seed=31)
    docs = corpus.documents()
    html_by_id = {a.id: a.html for a in corpus.articles}
    rng = np.random.default_rng(0)
    order = rng.permutation(len(docs))
    split = int(0.8 * len(docs))
    train_docs = [docs[i] for i in order[:split]]
    test_docs = [docs[i] for i in order[split:]]
    pipeline = fit_baseline(
        [d.sentences for d in train_docs],
        [html_by_id[d.id] for d in train_docs],
        [d.labels["q5"] for d in train_docs],
        "q5",
        config=ForestConfig(n_trees=50),
        seed=0,
        rfe_config=ForestConfig(n_trees=10),
    )
    pairs = [
        (pipeline.predict(d.sentences, html_by_id[d.id])[0], d.labels["q5"])
        for d in test_docs
    ]
    f1 = metrics(pairs)["f1_macro"]

    gini_ok = (
        gini_impurity([10.0, 0.0]) == 0.0
        and abs(gini_impurity([0.5, 0.5]) - 0.5) <= 1e-12
    )
    vocab = tfidf_fit([["risk", "risk"], ["benefit", "care"]])
    weight = tfidf_transform(["risk", "care"], vocab)[vocab.index["risk"]]
    tfidf_ok = abs(weight - 0.5 * math.log(2.0)) <= 1e-12
    everywhere = tfidf_transform(["care"], tfidf_fit([["care"], ["care", "x"]]))
    tfidf_ok &= everywhere[0] == 0.0 or np.count_nonzero(everywhere) == 0

    # class weights close the loop: equal weighted mass on both classes
    weights = class_weights([d.labels["q5"] for d in train_docs])
    weights_ok = (
        abs(
            weights.weight[0] * sum(1 for d in train_docs if d.labels["q5"] == 0)
            - weights.weight[1] * sum(1 for d in train_docs if d.labels["q5"] == 1)
        )
        <= 1e-9 * len(train_docs)
    )

    _verdict(
        "baseline sanity",
        f1 >= 0.9 and gini_ok and tfidf_ok and weights_ok,
        f"surface-feature F1-macro {f1:.3f} (>= 0.9); gini oracle {gini_ok}; "
        f"tf-idf oracle {tfidf_ok}; balanced weighting {weights_ok}",
    )
