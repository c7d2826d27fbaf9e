"""Metrics against a brute-force confusion oracle, coverage analysis
against a sort-based quantile oracle, agreement, and CV aggregation."""

import numpy as np
import pytest

from discerner.corpus import CRITERIA, Document, stratified_folds
from discerner.errors import DiscernError, InvalidProbability, ShapeMismatch
from discerner.evaluation import (
    ConfusionCounts,
    PredictionRecord,
    confusion,
    coverage_analysis,
    coverage_threshold,
    cross_validate,
    metrics,
    percent_agreement,
    read_prediction_dump,
    write_prediction_dump,
)


def brute_force_metrics(pairs):
    """Independent oracle: count every cell of the confusion matrix directly
    and apply the textbook definitions with the 0/0 -> 0 convention."""
    tp = sum(1 for p, t in pairs if p == 1 and t == 1)
    fp = sum(1 for p, t in pairs if p == 1 and t == 0)
    tn = sum(1 for p, t in pairs if p == 0 and t == 0)
    fn = sum(1 for p, t in pairs if p == 0 and t == 1)

    def div(a, b):
        return a / b if b else 0.0

    f1s = []
    for tp_c, fp_c, fn_c in ((tn, fn, fp), (tp, fp, fn)):
        precision_c = div(tp_c, tp_c + fp_c)
        recall_c = div(tp_c, tp_c + fn_c)
        f1s.append(div(2 * precision_c * recall_c, precision_c + recall_c))
    return {
        "precision": div(tp, tp + fp),
        "recall": div(tp, tp + fn),
        "accuracy": (tp + tn) / len(pairs),
        "f1_macro": (f1s[0] + f1s[1]) / 2,
    }


class TestMetrics:
    def test_all_correct(self):
        got = metrics([(0, 0), (1, 1), (0, 0), (1, 1)])
        assert got == {"precision": 1.0, "recall": 1.0, "accuracy": 1.0, "f1_macro": 1.0}

    def test_constant_positive_on_balanced_data(self):
        pairs = [(1, 1)] * 5 + [(1, 0)] * 5
        got = metrics(pairs)
        assert got["accuracy"] == 0.5
        assert got["f1_macro"] == pytest.approx((2 / 3 + 0) / 2, abs=1e-12)

    def test_absent_class_convention(self):
        # no positives anywhere: class-1 F1 is 0 by the 0/0 -> 0 rule
        got = metrics([(0, 0), (0, 0)])
        assert got["accuracy"] == 1.0
        assert got["f1_macro"] == 0.5

    def test_confusion_counts(self):
        counts = confusion([(1, 1), (1, 0), (0, 0), (0, 1), (1, 1)])
        assert counts == ConfusionCounts(tp=2, fp=1, tn=1, fn=1)
        assert counts.total == 5

    def test_matches_brute_force_on_random_label_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            pairs = [(int(rng.integers(2)), int(rng.integers(2))) for _ in range(n)]
            assert metrics(pairs) == brute_force_metrics(pairs)

    def test_empty_rejected(self):
        with pytest.raises(DiscernError):
            metrics([])


class TestPercentAgreement:
    def test_identical(self):
        assert percent_agreement([1, 0, 1], [1, 0, 1]) == 1.0

    def test_one_in_ten(self):
        assert percent_agreement([1] * 10, [1] * 9 + [0]) == 0.9

    def test_rater_scale_example(self):
        # 47 of 50 matched positions sit at the agreement level trained
        # raters typically reach
        assert percent_agreement([1] * 47 + [0] * 3, [1] * 50) == pytest.approx(0.94)

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            percent_agreement([1, 0], [1])


def _records(confidences, correct, criterion="q5"):
    out = []
    for i, (c, ok) in enumerate(zip(confidences, correct)):
        true = i % 2
        pred = true if ok else 1 - true
        out.append(PredictionRecord(f"d{i}", criterion, true, pred, float(c)))
    return out


class TestCoverage:
    def test_full_coverage_threshold_is_half(self):
        records = _records([0.9, 0.8, 0.7, 0.6], [True, True, False, True])
        report = coverage_analysis(records, [1.0])
        row = report.rows[0]
        assert row.threshold == 0.5
        assert row.n_covered == 4 and row.n_abstained == 0

    def test_full_coverage_metrics_equal_plain_metrics(self):
        rng = np.random.default_rng(1)
        records = _records(rng.uniform(0.5, 1.0, 20), rng.random(20) > 0.3)
        report = coverage_analysis(records, [1.0])
        plain = metrics([(r.label_pred, r.label_true) for r in records])
        row = report.rows[0]
        assert (row.precision, row.recall, row.accuracy) == (
            plain["precision"], plain["recall"], plain["accuracy"],
        )

    def test_eighty_percent_of_ten_retains_eight(self):
        confidences = [0.51, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
        records = _records(confidences, [True] * 10)
        report = coverage_analysis(records, [0.8])
        assert report.rows[0].n_covered == 8
        assert report.rows[0].threshold == 0.6

    def test_threshold_matches_sort_based_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(1, 50))
            confidences = rng.uniform(0.5, 1.0, n).tolist()
            coverage = float(rng.choice([0.5, 0.7, 0.8, 0.9, 1.0]))
            got = coverage_threshold(confidences, coverage)
            # oracle: sort ascending, drop the floor((1-c)*n) least
            # confident, threshold at the next order statistic
            n_abstain = int(np.floor((1.0 - coverage) * n + 1e-9))
            expected = 0.5 if n_abstain <= 0 else sorted(confidences)[n_abstain]
            assert got == expected

    def test_equal_confidences_retain_everything(self):
        records = _records([0.7] * 8, [True] * 8)
        for coverage in (0.25, 0.5, 0.75, 1.0):
            report = coverage_analysis(records, [coverage])
            assert report.rows[0].n_covered == 8

    def test_thresholds_non_increasing_in_coverage(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            records = _records(rng.uniform(0.5, 1.0, n), rng.random(n) > 0.2)
            report = coverage_analysis(records, [0.2, 0.4, 0.6, 0.8, 1.0])
            thresholds = [r.threshold for r in report.rows]
            assert all(a >= b for a, b in zip(thresholds, thresholds[1:]))

    def test_zero_coverage_row_undefined_not_crash(self):
        records = _records([0.6, 0.7], [True, True])
        report = coverage_analysis(records, [0.0, 1.0])
        empty = report.rows[0]
        assert empty.n_covered == 0
        assert empty.accuracy is None

    def test_calibrated_confidence_improves_selective_accuracy(self):
        # confidences equal the correctness probability by construction, so
        # keeping the most confident 80% should typically beat full coverage
        rng = np.random.default_rng(4)
        wins = 0
        for _ in range(100):
            n = 400
            confidences = rng.uniform(0.5, 1.0, n)
            correct = rng.random(n) < confidences
            records = _records(confidences, correct)
            report = coverage_analysis(records, [0.8, 1.0])
            by_coverage = {row.coverage: row for row in report.rows}
            wins += int(by_coverage[0.8].accuracy >= by_coverage[1.0].accuracy)
        assert wins >= 95

    def test_confidence_range_enforced(self):
        bad = [PredictionRecord("d", "q5", 1, 1, 0.4)]
        with pytest.raises(InvalidProbability):
            coverage_analysis(bad, [1.0])


def _corpus(n=30, criterion="q4"):
    docs = []
    for i in range(n):
        labels = {c: 0 for c in CRITERIA}
        labels[criterion] = 1 if i < n // 2 else 0
        docs.append(
            Document(id=f"d{i:02d}", topic="other", sentences=[["w", "."]], labels=labels)
        )
    return docs


class TestCrossValidate:
    def test_constant_perfect_classifier(self):
        docs = _corpus()
        plan = stratified_folds(docs, "q4", 5, seed=0)
        by_id = {d.id: d for d in docs}

        def trainer(fold, train_docs, test_docs):
            return [
                PredictionRecord(d.id, "q4", d.labels["q4"], d.labels["q4"], 1.0)
                for d in test_docs
            ]

        report, records = cross_validate(docs, plan, trainer, "oracle")
        assert report.mean["f1_macro"] == 1.0
        assert report.std["f1_macro"] == 0.0
        assert len(records) == len(docs)

    def test_mean_equals_hand_average(self):
        docs = _corpus()
        plan = stratified_folds(docs, "q4", 5, seed=1)
        rng = np.random.default_rng(5)

        def trainer(fold, train_docs, test_docs):
            return [
                PredictionRecord(
                    d.id, "q4", d.labels["q4"],
                    d.labels["q4"] if rng.random() > 0.3 else 1 - d.labels["q4"],
                    0.75,
                )
                for d in test_docs
            ]

        report, _ = cross_validate(docs, plan, trainer, "noisy")
        f1s = [fold["f1_macro"] for fold in report.per_fold]
        assert report.mean["f1_macro"] == pytest.approx(np.mean(f1s), abs=1e-12)
        assert report.std["f1_macro"] == pytest.approx(np.std(f1s, ddof=1), abs=1e-12)

    def test_trainer_must_cover_test_set(self):
        docs = _corpus()
        plan = stratified_folds(docs, "q4", 5, seed=0)

        def bad_trainer(fold, train_docs, test_docs):
            return [
                PredictionRecord(d.id, "q4", d.labels["q4"], 1, 0.9)
                for d in test_docs[:-1]
            ]

        with pytest.raises(DiscernError):
            cross_validate(docs, plan, bad_trainer, "bad")


class TestDumpIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        records = _records(rng.uniform(0.5, 1.0, 12), rng.random(12) > 0.5)
        path = tmp_path / "predictions.csv"
        write_prediction_dump(path, records)
        assert read_prediction_dump(path) == records

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(DiscernError):
            read_prediction_dump(path)
