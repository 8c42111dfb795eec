import random

import pytest

from raglog import evaluation
from raglog.evaluation import (
    F1_UNDEFINED,
    PRECISION_UNDEFINED,
    RECALL_UNDEFINED,
    ComparisonRow,
    ConfusionMatrix,
    accumulate,
    compare_strategies,
    f1_from_precision_recall,
    metrics,
    write_comparison,
)
from raglog.ingest import GroundTruth
from raglog.ragqa import ClassificationError, Verdict, VerdictLabel

import oracles


def verdict(label):
    return Verdict(VerdictLabel.ABNORMAL if label == "abnormal" else VerdictLabel.NORMAL, label)


class TestAccumulate:
    def test_matches_independent_tally(self):
        rng = random.Random(17)
        predicted, actual, preds, labels = [], [], [], []
        for _ in range(500):
            p = rng.choice(["abnormal", "normal", "error"])
            a = rng.choice(["anomalous", "normal"])
            predicted.append(p)
            actual.append(a)
            if p == "error":
                preds.append(ClassificationError("boom", trace=None))
            else:
                preds.append(verdict(p))
            labels.append(GroundTruth.ANOMALOUS if a == "anomalous" else GroundTruth.NORMAL)
        matrix = accumulate(preds, labels)
        want = oracles.tally_ref(predicted, actual)
        assert matrix.to_dict() == want
        assert matrix.total == 500

    def test_exceptions_never_coerced(self):
        preds = [ClassificationError("x", trace=None), verdict("normal")]
        labels = [GroundTruth.ANOMALOUS, GroundTruth.NORMAL]
        matrix = accumulate(preds, labels)
        assert matrix.skipped == 1
        assert matrix.tn == 1
        assert matrix.fn == 0  # the failed anomaly is not counted as a miss

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            accumulate([verdict("normal")], [])

    def test_merge(self):
        a = ConfusionMatrix(tp=1, fp=2, fn=3, tn=4, skipped=5)
        b = ConfusionMatrix(tp=10, fp=20, fn=30, tn=40, skipped=50)
        assert a.merge(b).to_dict() == {"tp": 11, "fp": 22, "fn": 33, "tn": 44, "skipped": 55}


class TestMetrics:
    def test_formulas_match_oracle(self):
        rng = random.Random(23)
        for _ in range(200):
            m = ConfusionMatrix(
                tp=rng.randint(0, 50), fp=rng.randint(0, 50),
                fn=rng.randint(0, 50), tn=rng.randint(0, 50),
            )
            report = metrics(m)
            p, r, f = oracles.prf_ref(m.tp, m.fp, m.fn)
            assert report.precision == pytest.approx(p, abs=1e-12)
            assert report.recall == pytest.approx(r, abs=1e-12)
            assert report.f1 == pytest.approx(f, abs=1e-12)

    def test_perfect_and_zero(self):
        perfect = metrics(ConfusionMatrix(tp=10, fp=0, fn=0, tn=90))
        assert (perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0)
        zero = metrics(ConfusionMatrix(tp=0, fp=5, fn=5, tn=90))
        assert zero.f1 == 0.0

    def test_degenerate_flags(self):
        no_predicted_positive = metrics(ConfusionMatrix(tp=0, fp=0, fn=3, tn=7))
        assert no_predicted_positive.precision == 0.0
        assert PRECISION_UNDEFINED in no_predicted_positive.degenerate_flags
        no_actual_positive = metrics(ConfusionMatrix(tp=0, fp=2, fn=0, tn=8))
        assert RECALL_UNDEFINED in no_actual_positive.degenerate_flags
        nothing = metrics(ConfusionMatrix(tn=10))
        assert nothing.degenerate_flags == {PRECISION_UNDEFINED, RECALL_UNDEFINED, F1_UNDEFINED}
        assert nothing.f1 == 0.0

    def test_no_flags_on_healthy_matrix(self):
        report = metrics(ConfusionMatrix(tp=5, fp=1, fn=2, tn=10))
        assert report.degenerate_flags == set()

    def test_f1_zero_rule(self):
        assert f1_from_precision_recall(0.0, 0.0) == 0.0
        assert f1_from_precision_recall(1.0, 1.0) == 1.0
        assert f1_from_precision_recall(0.5, 1.0) == pytest.approx(2 / 3)


class TestComparison:
    def make_rows(self):
        r1 = metrics(ConfusionMatrix(tp=88, fp=9, fn=12, tn=891), config_digest="aa")
        r2 = metrics(ConfusionMatrix(tp=83, fp=249, fn=17, tn=651), config_digest="aa")
        return [
            ComparisonRow("bgl", "clustered", r1),
            ComparisonRow("bgl", "random", r2),
        ]

    def test_csv_layout(self):
        csv = compare_strategies(self.make_rows()).to_csv()
        lines = csv.splitlines()
        assert lines[0] == "dataset,strategy,precision,recall,f1,tp,fp,fn,tn,skipped"
        assert lines[1].startswith("bgl,clustered,0.91,0.88,")
        assert lines[2].startswith("bgl,random,0.25,0.83,")
        assert csv.endswith("\n")

    def test_csv_rounding_half_even(self):
        report = metrics(ConfusionMatrix(tp=1, fp=7, fn=0, tn=0))  # precision 0.125
        csv = compare_strategies([ComparisonRow("d", "s", report)]).to_csv()
        assert ",0.12," in csv.splitlines()[1]  # 0.125 rounds half-even to 0.12

    def test_json_full_precision_and_stable(self):
        comp = compare_strategies(self.make_rows())
        doc = comp.to_json()
        assert doc == compare_strategies(self.make_rows()).to_json()
        assert "0.9072164948453608" in doc  # 88/97 unrounded

    def test_empty_rows_rejected(self):
        with pytest.raises(ValueError):
            compare_strategies([])

    def test_write_comparison(self, tmp_path):
        comp = compare_strategies(self.make_rows())
        csv_path, json_path = tmp_path / "c.csv", tmp_path / "c.json"
        write_comparison(comp, csv_path, json_path)
        assert csv_path.read_text(encoding="utf-8") == comp.to_csv()
        assert json_path.read_text(encoding="utf-8") == comp.to_json()
