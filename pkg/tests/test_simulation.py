import math
from pathlib import Path
import warnings

import numpy as np
import pytest

from sham_meta import sampler, simulation, study_data, util
from sham_meta.classical import EstimateSet
from sham_meta.model import ModelSpec
from sham_meta.sampler import SamplerConfig
from sham_meta.simulation import MetricsGrid, SimConfig
from sham_meta.util import ValidationError

CHICK = str(Path(__file__).parent.parent / "sham_meta" / "data" / "chick_partial.csv")
TABLE_HYPER = {"mu_theta": 0.097, "sigma_theta": 0.069, "mu_b": 0.004, "sigma_b": 0.008}


def fixed_config(**kwargs):
    obj = {"theta_source": "fixed", "theta": [0.2, -0.1, 0.05, 0.3],
           "estimators": ["exposed-only", "difference"], "replicates": 5,
           "sigma_b_grid": [0.0, 0.05]}
    obj.update(kwargs)
    return SimConfig(obj)


def table_theta(J=38):
    theta, _, _ = simulation.simulate_from_hyper(TABLE_HYPER, J, 0.04, util.make_rng(38))
    return [float(t) for t in theta]


class TestSimConfig:

    def test_defaults(self):
        cfg = SimConfig({"theta_source": "fixed", "theta": [0.1]})
        assert cfg.sigma_b_grid == simulation.DEFAULT_GRID
        assert cfg.replicates == 200
        assert cfg.estimators == simulation.ESTIMATORS

    def test_comma_lists(self):
        cfg = SimConfig({"sigma_b_grid": "0, 0.1", "estimators": "difference,bayes"})
        assert cfg.sigma_b_grid == [0, 0.1]
        assert cfg.estimators == ["difference", "bayes"]

    def test_invalid(self):
        with pytest.raises(ValidationError, match="sigma_b_grid"):
            SimConfig({"sigma_b_grid": [-0.1]})
        with pytest.raises(ValidationError, match="estimators"):
            SimConfig({"estimators": ["median"]})
        with pytest.raises(ValidationError, match="theta_source"):
            SimConfig({"theta_source": "oracle"})

    def test_prepare_errors(self):
        with pytest.raises(ValidationError, match="theta_draws"):
            SimConfig().prepare()
        with pytest.raises(ValidationError, match="sample sizes"):
            fixed_config(noise="t").prepare()
        with pytest.raises(ValidationError, match="size"):
            fixed_config(size=5).prepare()
        with pytest.raises(ValidationError, match="studies"):
            fixed_config(dataset=CHICK, theta=[0.1, 0.2]).prepare()

    def test_bayes_prior(self):
        assert fixed_config().bayes_spec().prior == "weak"
        cfg = SimConfig({"theta_source": "fixed", "theta": table_theta()})
        assert cfg.bayes_spec().prior == "uniform"
        assert cfg.replace(protocol="sizes").bayes_spec().prior == "weak"
        assert cfg.replace(size=10).bayes_spec().prior == "weak"


class TestReplicate:

    def test_no_bias(self):
        cfg = fixed_config(sigma_y=1e-9)
        theta, d = simulation.simulate_replicate(cfg, 0.0, np.random.default_rng(0))
        assert np.allclose(d.column("y0"), 0, atol=1e-7)
        assert np.allclose(d.column("y1"), theta, atol=1e-7)

    def test_bias_only_in_sham_and_active(self):
        cfg = fixed_config(sigma_y=1e-9, mu_b=0.5)
        theta, d = simulation.simulate_replicate(cfg, 0.0, np.random.default_rng(0))
        assert np.allclose(d.column("y0"), 0.5, atol=1e-7)
        assert np.allclose(d.column("y1") - d.column("y0"), theta, atol=1e-7)

    def test_raw_source(self):
        cfg = SimConfig({"theta_source": "raw", "dataset": CHICK, "sigma_y": 1e-9})
        theta, d = simulation.simulate_replicate(cfg, 0.0, np.random.default_rng(1))
        assert d.ids == ["f1", "f15", "f30", "f45"]
        assert np.allclose(d.column("y1"), [0.036, 0.173, 0.107, 0.181], atol=1e-7)
        assert np.allclose(d.column("x"), [1, 15, 30, 45])

    def test_deterministic(self):
        cfg = fixed_config()
        _, first = simulation.simulate_replicate(cfg, 0.05, util.make_rng(3, 0, 1))
        _, second = simulation.simulate_replicate(cfg, 0.05, util.make_rng(3, 0, 1))
        _, other = simulation.simulate_replicate(cfg, 0.05, util.make_rng(3, 0, 2))
        assert np.array_equal(first.column("y1"), second.column("y1"))
        assert not np.array_equal(first.column("y1"), other.column("y1"))

    def test_subset(self):
        cfg = fixed_config(size=2)
        theta, d = simulation.simulate_replicate(cfg, 0.0, np.random.default_rng(4))
        assert d.J == 2 and len(theta) == 2
        ids = ["study1", "study2", "study3", "study4"]
        assert ids.index(d.ids[0]) < ids.index(d.ids[1])

    def test_t_noise(self):
        cfg = fixed_config(noise="t", sample_size=3, sigma_b_grid=[0.0])
        _, d = simulation.simulate_replicate(cfg, 0.0, np.random.default_rng(5))
        assert np.all(np.isfinite(d.column("y0")))
        assert list(d.column("n1")) == [3, 3, 3, 3]


class TestMetrics:

    def test_hand_example(self):
        e = EstimateSet("difference", ["a", "b"], [1.0, -1.0], [0.1, 0.1])
        m = simulation.evaluate_metrics(e, [1.0, 1.0])
        assert m["prop_significant"] == 1.0
        assert m["type_s_rate"] == 0.5
        assert m["rmse"] == pytest.approx(1.41421, abs=1e-5)

    def test_reversed_ranking(self):
        e = EstimateSet("difference", ["a", "b", "c"], [3.0, 2.0, 1.0], [1.0] * 3)
        assert simulation.evaluate_metrics(e, [1, 2, 3])["rank_corr"] == pytest.approx(-1)

    def test_perfect(self):
        e = EstimateSet("difference", ["a", "b", "c"], [0.1, 0.5, 0.3], [1e-9] * 3)
        m = simulation.evaluate_metrics(e, [0.1, 0.5, 0.3])
        assert m["rmse"] == 0
        assert m["rank_corr"] == pytest.approx(1)

    def test_nothing_significant(self):
        e = EstimateSet("difference", ["a", "b"], [0.1, -0.1], [1.0, 1.0])
        m = simulation.evaluate_metrics(e, [1, 1])
        assert m["prop_significant"] == 0
        assert math.isnan(m["type_s_rate"])

    def test_interval_significance(self):
        # posterior interval covering zero is not significant, whatever the se
        e = EstimateSet("bayes", ["a"], [0.5], [0.01], low=[-0.1], high=[1.0])
        assert simulation.evaluate_metrics(e, [0.5])["prop_significant"] == 0

    def test_zero_truth_has_no_sign(self):
        e = EstimateSet("difference", ["a", "b", "c"], [1.0, -1.0, 1.0], [0.1] * 3)
        m = simulation.evaluate_metrics(e, [0.0, 1.0, 1.0])
        assert m["prop_significant"] == 1.0
        assert m["type_s_rate"] == 0.5
        m = simulation.evaluate_metrics(e, [0.0, 0.0, 0.0])
        assert math.isnan(m["type_s_rate"])

    def test_length_mismatch(self):
        e = EstimateSet("difference", ["a"], [0.1], [1.0])
        with pytest.raises(ValidationError):
            simulation.evaluate_metrics(e, [1, 2])


class TestRunGrid:

    def test_cells(self):
        grid = simulation.run_grid(fixed_config())
        for sigma_b in [0.0, 0.05]:
            for estimator in ["exposed-only", "difference"]:
                cell = grid.cell(sigma_b, estimator)
                assert cell["n_replicates"] == 5 and cell["n_failed"] == 0
                assert 0 <= grid.value(sigma_b, estimator, "prop_significant") <= 1
                assert grid.value(sigma_b, estimator, "rmse") >= 0
                assert -1 <= grid.value(sigma_b, estimator, "rank_corr") <= 1

    def test_threads_identical(self):
        cfg = fixed_config()
        serial = simulation.run_grid(cfg, threads=1)
        parallel = simulation.run_grid(cfg, threads=2)
        for key, cell in serial.cells.items():
            for metric in ["prop_significant", "rmse", "mse"]:
                assert cell[metric]["value"] == parallel.cells[key][metric]["value"]

    def test_bayes_estimator(self):
        cfg = fixed_config(estimators=["bayes"], replicates=2, sigma_b_grid=[0.02],
                           sampler={"chains": 2, "warmup": 100, "draws": 100})
        grid = simulation.run_grid(cfg)
        cell = grid.cell(0.02, "bayes")
        assert cell["n_failed"] == 0
        assert cell["rmse"]["n"] == 2

    def test_single_study_rank_corr(self):
        # one study has no ranking; the metric is left out, not failed
        cfg = fixed_config(theta=[0.1], estimators=["difference"], replicates=3)
        grid = simulation.run_grid(cfg)
        assert grid.cell(0.0, "difference")["n_failed"] == 0
        assert grid.cell(0.0, "difference")["rank_corr"]["n"] == 0

    def test_draws_source(self, tmp_path):
        # true effects come from one stored fit of the observed dataset
        d = study_data.ingest(CHICK)
        config = SamplerConfig({"chains": 2, "warmup": 100, "draws": 50, "seed": 3})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            draws, _ = sampler.fit(ModelSpec(), d, config)
        draws.write_csv(tmp_path / "draws.csv")
        pool = draws.study_matrix("theta")

        cfg = SimConfig({"theta_source": "draws", "theta_draws": str(tmp_path / "draws.csv"),
                         "dataset": CHICK, "sigma_y": 1e-9, "replicates": 4,
                         "estimators": ["exposed-only", "difference"],
                         "sigma_b_grid": [0.0, 0.05]})
        theta, sim = simulation.simulate_replicate(cfg, 0.05, util.make_rng(1, 0, 0))
        assert sim.ids == d.ids
        assert np.any(np.all(np.isclose(pool, theta, rtol=0, atol=1e-12), axis=1))
        assert np.allclose(sim.column("y1") - sim.column("y0"), theta, atol=1e-7)

        grid = simulation.run_grid(cfg)
        for sigma_b in [0.0, 0.05]:
            for estimator in ["exposed-only", "difference"]:
                cell = grid.cell(sigma_b, estimator)
                assert cell["n_replicates"] == 4 and cell["n_failed"] == 0
        # difference estimates are unbiased by the sham arm
        assert grid.value(0.05, "difference", "rmse") < 1e-6

    def test_csv_round_trip(self, tmp_path):
        grid = simulation.run_grid(fixed_config())
        grid.write_csv(tmp_path / "metrics.csv")
        loaded = MetricsGrid.read_csv(tmp_path / "metrics.csv")
        assert loaded.sigma_b_grid == grid.sigma_b_grid
        assert loaded.estimators == grid.estimators
        for key, cell in grid.cells.items():
            assert loaded.cells[key]["n_replicates"] == cell["n_replicates"]
            assert loaded.cells[key]["rmse"]["value"] == cell["rmse"]["value"]


class TestCalibration:

    def test_rank_uniformity(self):
        assert simulation.rank_uniformity_pvalue(np.tile(np.arange(64), 4), 63) > 0.99
        assert simulation.rank_uniformity_pvalue(np.zeros(200, dtype=int), 63) < 1e-10

    def test_simulate_from_hyper(self):
        theta, b, d = simulation.simulate_from_hyper(TABLE_HYPER, 6, 0.04,
                                                     np.random.default_rng(0))
        assert d.J == 6 and len(theta) == 6 and len(b) == 6
        assert np.all(d.column("s1") == 0.04)

    @pytest.mark.slow
    def test_interval_coverage(self):
        covered = simulation.interval_coverage(TABLE_HYPER, 38, 100, threads=4,
                                               sampler={"chains": 4, "warmup": 1000,
                                                        "draws": 1000})
        assert 88 <= covered <= 99

    @pytest.mark.slow
    def test_sbc(self):
        spec = ModelSpec({"variant": "normal-default", "prior": "weak"})
        ranks = simulation.sbc_ranks(spec, 10, 200, thin=63, threads=4,
                                     sampler={"chains": 4, "warmup": 1000, "draws": 1000})
        for name in ["mu_theta", "sigma_theta", "mu_b", "sigma_b"]:
            assert simulation.rank_uniformity_pvalue(ranks[name], 63) > 0.005, name


@pytest.mark.slow
class TestGridPatterns:

    def test_default_scenario(self):
        cfg = SimConfig({"theta_source": "fixed", "theta": table_theta(),
                         "replicates": 50, "sample_size": 32})
        grid = simulation.run_grid(cfg, threads=4)
        for sigma_b in cfg.sigma_b_grid:
            for estimator in ["difference", "bayes"]:
                assert grid.value(sigma_b, estimator, "type_s_rate") <= 0.10
            bayes = grid.value(sigma_b, "bayes", "rmse")
            for other in ["exposed-only", "difference"]:
                assert bayes <= grid.value(sigma_b, other, "rmse") \
                    + 2 * grid.mcse(sigma_b, other, "rmse")
            rank_floor = min(grid.value(sigma_b, e, "rank_corr") - 2 * grid.mcse(sigma_b, e, "rank_corr")
                             for e in ["exposed-only", "difference"])
            assert grid.value(sigma_b, "bayes", "rank_corr") >= rank_floor
        assert grid.value(0.1, "exposed-only", "type_s_rate") \
            >= 2 * grid.value(0.0, "exposed-only", "type_s_rate")
        assert grid.value(0.0, "exposed-only", "rmse") < grid.value(0.0, "difference", "rmse")
        assert grid.value(0.1, "difference", "rmse") < grid.value(0.1, "exposed-only", "rmse")

    @pytest.mark.parametrize("size", [5, 10])
    def test_small_study_counts(self, size):
        cfg = SimConfig({"theta_source": "fixed", "theta": table_theta(), "replicates": 50,
                         "size": size, "protocol": "sizes", "sigma_b_grid": [0.0, 0.04, 0.1]})
        grid = simulation.run_grid(cfg, threads=4)
        for sigma_b in cfg.sigma_b_grid:
            bayes = grid.value(sigma_b, "bayes", "rmse")
            for other in ["exposed-only", "difference"]:
                assert bayes <= grid.value(sigma_b, other, "rmse") \
                    + 2 * grid.mcse(sigma_b, other, "rmse")
