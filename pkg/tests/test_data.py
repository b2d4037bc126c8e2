import math

import numpy as np
import pytest

from helpers import make_samples
from nemomap.data import (
    DataFormatError,
    SampleSet,
    TrackPoints,
    VelocitySample,
    derive_velocity,
    downsample,
    load_samples,
    local_day_time,
    parse_atc_csv,
    read_canonical_csv,
    split_by_date,
    write_canonical_csv,
)
from nemomap.serialize import dumps
from nemomap.synth import FlowSpec, TruthModel, scenario, synth_generate, truth_entropy
from nemomap.models import load_model

# 2012-10-24 00:00:00 in Japan (UTC+9)
JST_MIDNIGHT = 1351004400.0


def atc_row(t, pid, x_mm, y_mm, v_mm=1000.0, angle=0.5):
    return f"{t},{pid},{x_mm},{y_mm},1600.0,{v_mm},{angle},{angle}"


def track(times, pid, xs, ys, speed=np.nan, angle=np.nan):
    n = len(times)
    return TrackPoints(np.asarray(times, float), np.full(n, pid), np.asarray(xs, float), np.asarray(ys, float),
                       np.full(n, speed, dtype=float), np.full(n, angle, dtype=float))


class TestAtcParsing:
    def test_units(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(atc_row(JST_MIDNIGHT + 10.0, 7, 1500, -2500, 1300) + "\n")
        tr = parse_atc_csv(p)
        assert tr.x[0] == 1.5 and tr.y[0] == -2.5
        assert tr.speed[0] == pytest.approx(1.3)
        assert tr.person_id[0] == 7

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        tr = parse_atc_csv(p)
        assert len(tr) == 0 and tr.malformed == 0

    def test_header_sniffed(self, tmp_path):
        body = "\n".join(atc_row(JST_MIDNIGHT + i, 1, 1000 * i, 0) for i in range(5))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text(body + "\n")
        b.write_text("time,person_id,x,y,z,velocity,motion_angle,facing_angle\n" + body + "\n")
        ta, tb = parse_atc_csv(a), parse_atc_csv(b)
        np.testing.assert_array_equal(ta.x, tb.x)
        assert tb.malformed == 0

    def test_malformed_counted(self, tmp_path):
        rows = [atc_row(JST_MIDNIGHT + i, 1, 0, 0) for i in range(19)] + ["1,2,3"]
        p = tmp_path / "m.csv"
        p.write_text("\n".join(rows) + "\n")
        tr = parse_atc_csv(p)
        assert len(tr) == 19 and tr.malformed == 1

    def test_too_many_malformed(self, tmp_path):
        rows = [atc_row(JST_MIDNIGHT + i, 1, 0, 0) for i in range(8)] + ["x,y,z,1,2,3,4,5", "1,2"]
        p = tmp_path / "bad.csv"
        p.write_text("\n".join(rows) + "\n")
        with pytest.raises(DataFormatError):
            parse_atc_csv(p)

    def test_unreadable(self, tmp_path):
        with pytest.raises(OSError):
            parse_atc_csv(tmp_path / "missing.csv")

    def test_load_samples_pipeline(self, tmp_path):
        # 10 Hz track moving east at 1 m/s, velocity columns provided
        rows = [atc_row(JST_MIDNIGHT + 3600 + 0.1 * i, 3, 100 * i, 0, 1000, 0.0) for i in range(50)]
        p = tmp_path / "atc.csv"
        p.write_text("\n".join(rows) + "\n")
        s = load_samples(p)
        assert len(s) == 5
        assert set(s.date.tolist()) == {"2012-10-24"}
        np.testing.assert_allclose(s.t, 3600.0 + np.arange(5), atol=1e-6)
        np.testing.assert_allclose(s.speed, 1.0)


class TestDownsample:
    def test_ten_hz(self):
        tr = track(np.arange(100) * 0.1 + 1000.0, 1, np.arange(100), np.zeros(100))
        out = downsample(tr, 1.0)
        np.testing.assert_array_equal(out.x, np.arange(0, 100, 10))

    def test_already_slow(self):
        tr = track(np.arange(10) * 2.0, 1, np.arange(10), np.zeros(10))
        assert len(downsample(tr, 1.0)) == 10

    def test_window_alignment(self):
        # windows start on whole seconds, not at the first sample
        tr = track([0.5, 0.9, 1.0, 1.7], 1, [0, 1, 2, 3], [0, 0, 0, 0])
        np.testing.assert_array_equal(downsample(tr, 1.0).x, [0, 2])

    def test_per_person(self):
        a = track([0.0, 0.5], 1, [0, 1], [0, 0])
        b = track([0.2, 0.4], 2, [5, 6], [0, 0])
        tr = TrackPoints(*(np.r_[getattr(a, k), getattr(b, k)] for k in ("time", "person_id", "x", "y", "speed", "motion_angle")))
        assert sorted(downsample(tr, 1.0).x.tolist()) == [0, 5]

    def test_idempotent(self, rng):
        tr = track(np.sort(rng.uniform(0, 100, 500)), 1, rng.uniform(0, 5, 500), np.zeros(500))
        once = downsample(tr, 1.0)
        twice = downsample(once, 1.0)
        np.testing.assert_array_equal(once.time, twice.time)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            downsample(track([0.0], 1, [0], [0]), 0.0)


class TestDeriveVelocity:
    def test_east(self):
        s = derive_velocity(track([JST_MIDNIGHT, JST_MIDNIGHT + 1], 1, [0, 1], [0, 0]))
        assert len(s) == 1
        assert s.speed[0] == pytest.approx(1.0) and s.theta[0] == pytest.approx(0.0)

    def test_stationary_dropped(self):
        assert len(derive_velocity(track([0.0, 1.0], 1, [2, 2], [3, 3]))) == 0

    def test_diagonal(self):
        s = derive_velocity(track([0.0, 1.0], 1, [0, 1], [0, 1]))
        assert s.speed[0] == pytest.approx(math.sqrt(2)) and s.theta[0] == pytest.approx(math.pi / 4)

    def test_columns_preferred(self):
        s = derive_velocity(track([0.0, 1.0], 1, [0, 1], [0, 0], speed=0.7, angle=-math.pi / 2))
        assert len(s) == 2
        np.testing.assert_allclose(s.speed, 0.7)
        np.testing.assert_allclose(s.theta, 3 * math.pi / 2)

    def test_no_cross_person_difference(self):
        a = track([0.0], 1, [0], [0])
        b = track([1.0], 2, [1], [0])
        tr = TrackPoints(*(np.r_[getattr(a, k), getattr(b, k)] for k in ("time", "person_id", "x", "y", "speed", "motion_angle")))
        assert len(derive_velocity(tr)) == 0

    def test_local_day(self):
        dates, tod = local_day_time([JST_MIDNIGHT - 1.0, JST_MIDNIGHT + 43200.0], 9.0)
        assert dates.tolist() == ["2012-10-23", "2012-10-24"]
        np.testing.assert_allclose(tod, [86399.0, 43200.0])


class TestSplit:
    def samples(self):
        dates = ["2012-10-24"] * 3 + ["2012-10-28"] * 2 + ["2012-10-31"] * 2 + ["2012-11-04"] + ["2013-01-01"]
        n = len(dates)
        s = make_samples(np.zeros(n), np.zeros(n), np.zeros(n), np.ones(n), np.zeros(n))
        s.date = np.array(dates)
        return s

    def test_one_train_three_test(self):
        r = split_by_date(self.samples(), ["2012-10-24"], ["2012-10-28", "2012-10-31", "2012-11-04"])
        assert (len(r.train), len(r.test), r.excluded) == (3, 5, 1)

    def test_empty_test_allowed(self):
        r = split_by_date(self.samples(), ["2012-10-24"], [])
        assert len(r.test) == 0

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            split_by_date(self.samples(), ["2012-10-24"], ["2012-10-24"])


class TestCanonicalCsv:
    def test_round_trip_exact(self, tmp_path, rng):
        s = make_samples(rng.uniform(0, 1, 20), rng.uniform(0, 1, 20), rng.uniform(0, 86400, 20),
                         rng.uniform(0, 2, 20), rng.uniform(0, 6, 20))
        p = tmp_path / "s.csv"
        write_canonical_csv(s, p)
        back = read_canonical_csv(p)
        for col in ("x", "y", "t", "speed", "theta", "person_id", "date"):
            np.testing.assert_array_equal(getattr(back, col), getattr(s, col))

    def test_bad_header(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataFormatError):
            read_canonical_csv(p)

    def test_sample_invariants(self):
        with pytest.raises(ValueError):
            VelocitySample(0, 0, 0, -1.0, 0.0)
        with pytest.raises(ValueError):
            VelocitySample(0, 0, 86400.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            VelocitySample(0, 0, 0, 1.0, 7.0)


class TestSynth:
    def test_constant_truth_time_invariant(self):
        _, _, truth = synth_generate(scenario("constant", samples_per_day=100))
        a = truth.query(5.0, 3.0, 3600.0)
        b = truth.query(20.0, 1.0, 70000.0)
        assert a == b and a.n_components == 1

    def test_reversal_truth(self):
        truth = TruthModel(scenario("reversal"))
        m9, m18 = truth.query(15.0, 3.0, 9 * 3600.0), truth.query(15.0, 3.0, 18 * 3600.0)
        d9 = m9.components[int(np.argmax(m9.weights))].mean_theta
        d18 = m18.components[int(np.argmax(m18.weights))].mean_theta
        assert abs(abs(d9 - d18) - math.pi) < 1e-12

    def test_fixed_seed_identical(self):
        cfg = scenario("reversal", samples_per_day=500)
        a = synth_generate(cfg)
        b = synth_generate(scenario("reversal", samples_per_day=500))
        for col in ("x", "y", "t", "speed", "theta", "date"):
            np.testing.assert_array_equal(getattr(a[0], col), getattr(b[0], col))
            np.testing.assert_array_equal(getattr(a[1], col), getattr(b[1], col))

    def test_sizes_and_dates(self):
        train, test, _ = synth_generate(scenario("drift", samples_per_day=200, train_days=3, test_days=1))
        assert len(train) == 600 and len(test) == 200
        assert sorted(set(train.date.tolist())) == ["2012-10-24", "2012-10-25", "2012-10-26"]
        assert set(test.date.tolist()) == {"2012-10-27"}

    def test_samples_valid(self):
        train, _, _ = synth_generate(scenario("reversal", samples_per_day=2000))
        assert np.all(train.speed >= 0)
        assert np.all((train.theta >= 0) & (train.theta < 2 * math.pi))
        assert np.all((train.t >= 0) & (train.t < 86400))
        for s in list(train)[:50]:
            assert isinstance(s, VelocitySample)

    def test_empirical_nll_matches_entropy(self):
        train, _, truth = synth_generate(scenario("reversal", samples_per_day=20000, train_days=1, test_days=0, seed=3))
        nll = -truth.logpdf(train)
        h, se = truth_entropy(truth, n=40000, seed=11)
        se_total = math.hypot(se, nll.std(ddof=1) / math.sqrt(nll.size))
        assert abs(nll.mean() - h) <= 3 * se_total

    def test_truth_document(self, tmp_path):
        _, _, truth = synth_generate(scenario("drift", samples_per_day=10))
        truth.save(tmp_path / "t.json")
        back = load_model(tmp_path / "t.json")
        assert dumps(back.to_document()) == dumps(truth.to_document())

    def test_unknown_scenario(self):
        with pytest.raises(ValueError):
            scenario("nope")
