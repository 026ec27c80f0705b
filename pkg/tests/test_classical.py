import math
from pathlib import Path

import numpy as np
import pytest

from sham_meta import classical, study_data
from sham_meta.classical import EstimateSet
from sham_meta.study_data import Dataset, StudyRecord
from sham_meta.util import ValidationError

DATA_PATH = Path(__file__).parent.parent / "sham_meta" / "data"


def get_chick():
    return study_data.ingest(DATA_PATH / "chick_partial.csv")


class TestEstimators:

    def test_exposed_only(self):
        e = classical.exposed_only(get_chick())
        assert e.method == "exposed-only"
        assert e.ids == ["f1", "f15", "f30", "f45"]
        assert (e.estimate[1], e.se[1]) == (0.173, 0.034)
        assert np.array_equal(e.se, get_chick().column("s1"))
        assert e.df == [31, 35, 31, 31]

    def test_difference(self):
        e = classical.difference(get_chick())
        assert e.estimate[0] == pytest.approx(0.041)
        assert e.se[0] == pytest.approx(0.05798, abs=1e-5)
        assert e.df[0] == 62

    def test_difference_minus_exposed(self):
        d = get_chick()
        gap = classical.difference(d).estimate - classical.exposed_only(d).estimate
        assert gap == pytest.approx(-d.column("y0"))

    def test_equal_arms(self):
        d = Dataset([StudyRecord({"id": "a", "y1": 0.3, "s1": 0.1, "y0": 0.3, "s0": 0.1})])
        assert classical.difference(d).estimate[0] == 0

    def test_tiny_sham_se(self):
        d = Dataset([StudyRecord({"id": "a", "y1": 0.3, "s1": 0.1, "y0": 0.0, "s0": 1e-12})])
        assert classical.difference(d).se[0] == pytest.approx(0.1, rel=1e-12)

    def test_count_data_rejected(self):
        d = study_data.ingest(DATA_PATH / "rtms_partial.csv")
        with pytest.raises(ValidationError):
            classical.exposed_only(d)


class TestSignificance:

    def test_normal(self):
        e = EstimateSet("exposed-only", ["a", "b", "c"], [0.173, 0.0, 2.5], [0.034, 1.0, 1.0])
        table = classical.classify_significance(e, "normal")
        assert table.stat[0] == pytest.approx(5.088, abs=1e-3)
        assert table.p[0] == pytest.approx(3.6e-7, rel=0.05)
        assert table.band == ["p<0.01", "p>=0.05", "0.01<=p<0.05"]
        assert table.p[1] == 1
        assert table.p[2] == pytest.approx(0.01242, abs=1e-5)

    def test_band_edges(self):
        assert classical.significance_band(0.01) == "0.01<=p<0.05"
        assert classical.significance_band(0.05) == "p>=0.05"
        assert classical.significance_band(0.0099) == "p<0.01"

    def test_t(self):
        e = classical.exposed_only(get_chick())
        t = classical.classify_significance(e, "t")
        normal = classical.classify_significance(e, "normal")
        # heavier tails give larger p-values
        assert np.all(t.p >= normal.p)

    def test_t_without_sizes(self):
        e = EstimateSet("difference", ["a"], [0.1], [0.05])
        with pytest.raises(ValidationError, match="sample sizes"):
            classical.classify_significance(e, "t")

    def test_positive_se(self):
        with pytest.raises(ValidationError):
            EstimateSet("difference", ["a"], [0.1], [0.0])


class TestPooling:

    def test_homogeneous(self):
        e = EstimateSet("difference", ["a", "b", "c"], [0.1, 0.1, 0.1], [0.1, 0.2, 0.1])
        pooled = classical.dersimonian_laird(e)
        assert pooled.estimate == pytest.approx(0.1)
        assert pooled.tau2 == 0
        assert pooled.i2 == 0
        assert pooled.se == pytest.approx(1 / math.sqrt(100 + 25 + 100))

    def test_heterogeneous(self):
        e = EstimateSet("difference", ["a", "b", "c", "d"], [-1.0, 1.0, -1.0, 1.0], [0.1] * 4)
        pooled = classical.dersimonian_laird(e)
        # w = 100, Q = 400, tau2 = (400 - 3) / (400 - 100)
        assert pooled.q == pytest.approx(400)
        assert pooled.tau2 == pytest.approx(397 / 300)
        assert pooled.i2 == pytest.approx(397 / 400)
        assert pooled.ci_low < 0 < pooled.ci_high

    def test_intervals(self):
        e = EstimateSet("difference", ["a"], [0.0], [1.0])
        row = classical.confidence_intervals(e)[0]
        assert row["low"] == pytest.approx(-1.959964, abs=1e-6)
        row = classical.confidence_intervals(e, transform="exp")[0]
        assert row["estimate"] == 1
        assert row["high"] == pytest.approx(math.exp(1.959964), rel=1e-6)
        with pytest.raises(ValidationError):
            classical.confidence_intervals(e, level=1.5)
