import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import gammaln

from mtensemble import evaluation as ev
from mtensemble.errors import DataError, UndefinedMetricError
from mtensemble.training import TaskSpec

# Confusion counts as printed (gold rows sadness, fear, joy, anger;
# predicted columns anger, joy, fear, sadness), reordered to one class order.
CLASSES = ["anger", "joy", "fear", "sadness"]
REFERENCE_COUNTS = np.array([
    [718, 31, 29, 33],
    [11, 657, 25, 12],
    [16, 17, 901, 80],
    [15, 9, 40, 548],
])


def expand(counts, classes):
    gold, pred = [], []
    for i, g in enumerate(classes):
        for j, p in enumerate(classes):
            gold += [g] * int(counts[i, j])
            pred += [p] * int(counts[i, j])
    return gold, pred


def pearson_oracle(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def t_two_sided_oracle(t, df):
    """2 * integral of the Student t density from |t| to infinity."""
    logc = gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi)
    pdf = lambda u: math.exp(logc - (df + 1) / 2 * math.log1p(u * u / df))
    tail, _ = integrate.quad(pdf, abs(t), math.inf, epsabs=1e-14, epsrel=1e-12)
    return 2 * tail


class TestAccuracy:
    def test_all_correct(self):
        assert ev.accuracy(["a", "b"], ["a", "b"]) == 1.0

    def test_swapped(self):
        assert ev.accuracy(["A", "B"], ["B", "A"]) == 0.0

    def test_empty(self):
        with pytest.raises(UndefinedMetricError):
            ev.accuracy([], [])

    def test_reference_confusion(self):
        gold, pred = expand(REFERENCE_COUNTS, CLASSES)
        assert len(gold) == 3142
        assert ev.accuracy(gold, pred) == pytest.approx(2824 / 3142, abs=1e-15)
        assert abs(ev.accuracy(gold, pred) - 0.8988) <= 1e-4


class TestConfusion:
    def test_reference_matrix(self):
        cm = ev.confusion(*expand(REFERENCE_COUNTS, CLASSES), CLASSES)
        np.testing.assert_array_equal(cm.counts, REFERENCE_COUNTS)
        assert cm.row_sums[CLASSES.index("sadness")] == 15 + 9 + 40 + 548 == 612
        assert cm.total == 3142

    def test_perfect_is_diagonal(self):
        cm = ev.confusion(["a", "b", "b"], ["a", "b", "b"], ["a", "b"])
        np.testing.assert_array_equal(cm.counts, [[1, 0], [0, 2]])

    def test_single_miss(self):
        cm = ev.confusion(["a"], ["b"], ["a", "b"])
        np.testing.assert_array_equal(cm.counts, [[0, 1], [0, 0]])

    def test_unknown_label(self):
        with pytest.raises(DataError):
            ev.confusion(["a"], ["c"], ["a", "b"])


class TestPearson:
    def test_examples(self):
        assert ev.pearson([1, 2, 3], [1, 2, 3]) == 1.0
        assert ev.pearson([1, 2, 3], [3, 2, 1]) == -1.0
        # hand arithmetic: sum dx*dy = 4.7, sum dx^2 = 5, sum dy^2 = 4.5
        assert ev.pearson([1, 2, 3, 4], [1.1, 1.9, 3.2, 3.8]) == pytest.approx(4.7 / math.sqrt(22.5), abs=1e-12)

    @pytest.mark.parametrize("x, y", [([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [2, 2, 2]), ([1.0], [2.0])])
    def test_undefined(self, x, y):
        with pytest.raises(UndefinedMetricError):
            ev.pearson(x, y)

    def test_oracle_100_pairs(self):
        rng = np.random.default_rng(123)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(3, 60))
            x = rng.normal(size=n)
            y = 0.5 * x + rng.normal(size=n)
            worst = max(worst, abs(ev.pearson(x, y) - pearson_oracle(list(x), list(y))))
        assert worst <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=3, max_size=30).filter(lambda v: np.ptp(v) > 1e-3),
           st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 2**31))
    def test_affine_invariance(self, x, a, b, seed):
        y = np.random.default_rng(seed).normal(size=len(x))
        x = np.array(x)
        assert ev.pearson(a * x + b, y) == pytest.approx(ev.pearson(x, y), abs=1e-12)


class TestDependent:
    def test_worked_example(self):
        r, n = ev.dependent_pearson(["A", "A", "B"], ["A", "B", "B"], [0.1, 0.2, 0.3], [0.2, 0.9, 0.4])
        assert (r, n) == (1.0, 2)

    def test_all_wrong(self):
        with pytest.raises(UndefinedMetricError):
            ev.dependent_pearson(["A", "B"], ["B", "A"], [0.1, 0.2], [0.3, 0.4])

    def test_all_correct_equals_plain(self):
        rng = np.random.default_rng(0)
        g, p = rng.uniform(size=50), rng.uniform(size=50)
        labels = list(rng.choice(["x", "y"], size=50))
        r, n = ev.dependent_pearson(labels, labels, g, p)
        assert n == 50 and r == ev.pearson(g, p)


class TestTTest:
    def test_identical(self):
        assert ev.paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == (0.0, 1.0)

    def test_constant_shift(self):
        b = np.array([0.3, 0.5, 0.9, 0.1])
        t, p = ev.paired_t_test(b + 0.1, b)
        assert t == math.inf and p == 0.0

    @pytest.mark.parametrize("t, df", [(0.3, 4), (2.1, 19), (-3.7, 7), (10.0, 30)])
    def test_tail_matches_integration(self, t, df):
        assert ev.student_t_sf2(t, df) == pytest.approx(t_two_sided_oracle(t, df), rel=1e-9, abs=1e-15)

    def test_agrees_with_scipy(self):
        stats = pytest.importorskip("scipy.stats")
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=15), rng.normal(size=15)
        ref = stats.ttest_rel(a, b)
        t, p = ev.paired_t_test(a, b)
        assert t == pytest.approx(ref.statistic, rel=1e-12) and p == pytest.approx(ref.pvalue, rel=1e-10)

    def test_score_samples_significant(self):
        t, p = ev.score_significance(0.80, 0.75, n=20, sigma=0.05, seed=0)
        assert p < 0.05
        assert p == pytest.approx(t_two_sided_oracle(t, 19), rel=1e-9)

    def test_short_sample(self):
        with pytest.raises(UndefinedMetricError):
            ev.paired_t_test([1.0], [2.0])


class TestReport:
    tasks = [TaskSpec.classification("emotion", ("a", "b")), TaskSpec.regression("intensity")]

    def test_rows_and_dependent(self):
        gold = {"emotion": ["a", "a", "b"], "intensity": [0.1, 0.2, 0.3]}
        pred = {"emotion": ["a", "b", "b"], "intensity": [0.2, 0.9, 0.4]}
        report = ev.evaluate(self.tasks, gold, pred, dependent=True)
        assert report.get("emotion", "accuracy") == pytest.approx(2 / 3)
        assert report.get("intensity", "pearson_dependent") == 1.0
        text = report.to_text()
        assert "dependent_evaluation=true" in text
        assert "multitask.intensity.pearson_dependent.n=2" in text
        assert "multitask.emotion" in report.confusions

    def test_undefined_is_reported_not_raised(self):
        gold = {"emotion": ["a", "b"], "intensity": [0.5, 0.5]}
        report = ev.evaluate(self.tasks, gold, gold)
        assert report.get("intensity", "pearson") is None
        assert "multitask.intensity.pearson=undefined" in report.to_text()
        assert "constant" in report.to_text()
