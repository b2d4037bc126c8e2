import math

import numpy as np
import pytest

from helpers import make_samples
from nemomap.evaluation import (
    NLL_CAP,
    Z95,
    compare,
    eval_nll,
    paired_diff_ci,
    time_build,
    time_query,
)
from nemomap.baselines import build_hourly_cliff, build_stef
from nemomap.synth import scenario, synth_generate, truth_entropy


class FixedModel:
    def __init__(self, values, kind="fixed"):
        self.values = np.asarray(values, dtype=float)
        self.kind = kind

    def logpdf(self, samples):
        return self.values[: len(samples)]

    def query(self, x, y, t):
        return None


def dummy(n):
    return make_samples(np.zeros(n), np.zeros(n), np.zeros(n), np.ones(n), np.zeros(n))


class TestPairedDiff:
    def test_equal_lists(self, rng):
        a = rng.normal(size=50)
        d = paired_diff_ci(a, a)
        assert d.mean == 0.0 and d.ci_low <= 0.0 <= d.ci_high and d.p_value == 0.5

    def test_constant_shift(self, rng):
        a = rng.normal(size=50)
        d = paired_diff_ci(a, a + 1.0)
        assert d.mean == pytest.approx(1.0)
        assert d.ci_high - d.ci_low == pytest.approx(0.0, abs=1e-12)
        assert d.excludes_zero()

    def test_textbook_values(self):
        a = np.zeros(4)
        b = np.array([1.0, 2.0, 3.0, 4.0])
        d = paired_diff_ci(a, b)
        se = np.std(b, ddof=1) / 2.0
        assert d.mean == 2.5
        assert d.ci_low == pytest.approx(2.5 - Z95 * se)
        assert d.p_value == pytest.approx(0.5 * math.erfc(2.5 / se / math.sqrt(2)))

    def test_antisymmetric(self, rng):
        a, b = rng.normal(size=100), rng.normal(size=100)
        d1, d2 = paired_diff_ci(a, b), paired_diff_ci(b, a)
        assert d1.mean == -d2.mean
        assert d1.ci_low == pytest.approx(-d2.ci_high)
        assert d1.p_value == pytest.approx(1.0 - d2.p_value)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            paired_diff_ci([1.0, 2.0], [1.0])

    def test_ci_ordering(self, rng):
        d = paired_diff_ci(rng.normal(size=30), rng.normal(size=30))
        assert d.ci_low <= d.mean <= d.ci_high


class TestEvalNll:
    def test_cap(self):
        r = eval_nll(FixedModel([-1.0, -60.0, -np.inf, np.nan]), dummy(4))
        np.testing.assert_array_equal(r.nll, [1.0, NLL_CAP, NLL_CAP, NLL_CAP])
        assert r.capped == 3

    def test_empty(self):
        r = eval_nll(FixedModel([]), dummy(0))
        assert r.n == 0 and math.isnan(r.mean)
        rep = compare({"a": FixedModel([]), "b": FixedModel([])}, dummy(0))
        assert "N/A" in rep.to_table()
        assert "N/A" in rep.to_csv()

    def test_truth_matches_entropy(self):
        _, test, truth = synth_generate(scenario("drift", samples_per_day=8000, test_days=1, train_days=0, seed=4))
        r = eval_nll(truth, test)
        h, se = truth_entropy(truth, n=30000, seed=9)
        assert abs(r.mean - h) <= 3 * math.hypot(se, r.std / math.sqrt(r.n))

    def test_deterministic(self):
        train, test, _ = synth_generate(scenario("reversal", samples_per_day=1500, train_days=1, seed=2))
        m = build_hourly_cliff(train, (0, 30, 0, 6))
        assert np.array_equal(eval_nll(m, test).nll, eval_nll(m, test).nll)

    def test_stef_flagged(self):
        train, test, _ = synth_generate(scenario("reversal", samples_per_day=500, train_days=1, seed=2))
        m = build_stef(train, (0, 30, 0, 6))
        assert eval_nll(m, test).orientation_only
        rep = compare({"truth": FixedModel(np.zeros(len(test))), "stef": m}, test)
        assert "*" in rep.to_table()
        assert rep.to_csv().splitlines()[2].split(",")[5] == "1"


class TestReport:
    def test_csv_layout(self):
        rep = compare({"ref": FixedModel([-1.0, -2.0, -3.0]), "other": FixedModel([-2.0, -2.5, -4.0])}, dummy(3))
        lines = rep.to_csv().splitlines()
        assert lines[0].split(",")[:4] == ["method", "n", "nll_mean", "nll_std"]
        ref, other = (l.split(",") for l in lines[1:])
        assert ref[6] == "" and float(other[6]) == pytest.approx(2.5 / 3.0, abs=1e-6)

    def test_explicit_reference(self):
        rep = compare({"a": FixedModel([-1.0]), "b": FixedModel([-2.0])}, dummy(1), reference="b")
        assert rep.rows[0].diff.mean == pytest.approx(-1.0)
        assert rep.rows[1].diff is None

    def test_timing_columns_optional(self):
        rep = compare({"a": FixedModel([-1.0, -1.5])}, dummy(2))
        assert "train_s" not in rep.to_csv()
        rep.rows[0].train_seconds = 1.0
        rep.rows[0].query_seconds = 1e-6
        assert "train_s" in rep.to_csv(timings=True)
        assert "Train time" in rep.to_table()


class TestTiming:
    def test_build(self):
        out, t = time_build(lambda: 42, repeats=3)
        assert out == 42 and len(t.seconds) == 3 and t.std >= 0

    def test_query(self):
        calls = []

        class M:
            def query(self, x, y, t):
                calls.append(1)

        t = time_query(M(), (0, 1, 0, 1), n=20, repeats=2, warmup=3, batched=False)
        assert len(calls) == 3 + 40
        assert len(t.seconds) == 2 and all(s > 0 for s in t.seconds)
