import json
from pathlib import Path
import subprocess
import sys

import numpy as np
import pytest

import analyze
from sham_meta import report, sampler

TEST_REPO_PATH = Path(__file__).parent
REPO_PATH = TEST_REPO_PATH.parent
CONFIG_PATH = REPO_PATH / "configs"
TEST_DATA = TEST_REPO_PATH / "test_data"
CHICK = str(REPO_PATH / "sham_meta" / "data" / "chick_partial.csv")
RTMS = str(REPO_PATH / "sham_meta" / "data" / "rtms_partial.csv")
QUICK_SAMPLER = ["--chains", "2", "--warmup", "50", "--draws", "50"]


def compare_files(p1, p2):
    # compare with universal line breaks
    try:
        with p1.open('r', newline=None) as f1:
            content1 = f1.read()
        with p2.open('r', newline=None) as f2:
            content2 = f2.read()
        return content1 == content2
    except Exception:
        return False


def run_config(name, tmp_path):
    # copy config to tmp, write output to tmp
    src_text = (CONFIG_PATH / name).read_text()
    src_text = src_text.replace(f"output/{Path(name).stem}", str(tmp_path / "output"))
    dst = tmp_path / name
    dst.write_text(src_text)
    # call analyze.py from shell, relative paths resolve against the repository
    return subprocess.call([sys.executable, REPO_PATH / "analyze.py", "--config", dst],
                           cwd=REPO_PATH)


class TestExampleConfigs:

    def test_estimate(self, tmp_path):
        assert run_config("estimate.cfg", tmp_path) == 0
        out = tmp_path / "output"
        for name in ["estimates_exposed_only.csv", "estimates_difference.csv",
                     "significance_exposed_only.csv", "significance_difference.csv",
                     "intervals_difference.csv",
                     "pooled.csv", "estimates.json", "estimates.svg"]:
            assert (out / name).exists(), name
        content = json.loads((out / "estimates.json").read_text())
        assert content["dist"] == "t"

    def test_fit(self, tmp_path):
        # small count dataset: a flagged fit still writes its outputs
        assert run_config("fit.cfg", tmp_path) in [0, 4]
        out = tmp_path / "output"
        summary = sampler.FitSummary.from_json(out / "fit.json")
        assert summary.variant == "binomial"
        assert summary.transformed["mu_theta"]["transform"] == "exp"
        assert sampler.Draws.read_csv(out / "draws.csv").chains == 4
        assert (out / "shrinkage.svg").exists()

    def test_adjust(self, tmp_path):
        assert run_config("adjust.cfg", tmp_path) == 0
        content = json.loads((tmp_path / "output" / "adjustment.json").read_text())
        assert content["sigma_b"] == 0.008
        assert len(content["studies"]) == 4

    def test_simulate(self, tmp_path):
        assert run_config("simulate.cfg", tmp_path) == 0
        out = tmp_path / "output"
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "sigma_b,estimator,metric,value,mcse,n_replicates,n_failed," \
                           "n_nonconverged"
        # 3 grid points, 2 estimators, 5 metrics
        assert len(lines) == 1 + 3 * 2 * 5
        assert (out / "metrics.svg").exists()

    def test_diagnose(self, tmp_path):
        assert run_config("diagnose.cfg", tmp_path) == 0
        content = json.loads((tmp_path / "output" / "diagnose.json").read_text())
        assert content["chi_square"]["df"] == 4


class TestExitCodes:

    def test_no_command(self, tmp_path):
        assert analyze.main(["-o", str(tmp_path)]) == analyze.EXIT_VALIDATION

    def test_empty_dataset(self, tmp_path):
        args = ["estimate", "-i", str(TEST_DATA / "empty.csv"), "-o", str(tmp_path)]
        assert analyze.main(args) == analyze.EXIT_VALIDATION

    def test_missing_input(self, tmp_path):
        assert analyze.main(["estimate", "-o", str(tmp_path)]) == analyze.EXIT_VALIDATION
        args = ["estimate", "-i", str(tmp_path / "missing.csv"), "-o", str(tmp_path)]
        assert analyze.main(args) == analyze.EXIT_VALIDATION

    def test_gp_without_covariate(self, tmp_path):
        args = ["fit", "-i", str(TEST_DATA / "no_covariate.csv"), "--variant", "gp-se",
                "-o", str(tmp_path)] + QUICK_SAMPLER
        assert analyze.main(args) == analyze.EXIT_VALIDATION
        assert not (tmp_path / "draws.csv").exists()

    def test_bad_options(self, tmp_path):
        base = ["fit", "-i", CHICK, "-o", str(tmp_path)] + QUICK_SAMPLER
        assert analyze.main(base + ["--transform", "mu_theta=square"]) == analyze.EXIT_VALIDATION
        assert analyze.main(base + ["--threads", "0"]) == analyze.EXIT_VALIDATION
        assert analyze.main(base + ["--target-accept", "1.5"]) == analyze.EXIT_VALIDATION
        # adjust without bias parameters
        args = ["adjust", "-i", CHICK, "-o", str(tmp_path)]
        assert analyze.main(args) == analyze.EXIT_VALIDATION

    def test_rescale_with_counts(self, tmp_path):
        args = ["fit", "-i", RTMS, "--variant", "binomial", "--rescale-sham-se", "0.5",
                "-o", str(tmp_path)] + QUICK_SAMPLER
        assert analyze.main(args) == analyze.EXIT_VALIDATION
        assert not (tmp_path / "draws.csv").exists()

    def test_not_utf8_input(self, tmp_path):
        path = tmp_path / "latin.csv"
        path.write_bytes(b"id,y1,s1,y0,s0\nm\xfcller,0.1,0.1,0.0,0.1\n")
        args = ["estimate", "-i", str(path), "-o", str(tmp_path)]
        assert analyze.main(args) == analyze.EXIT_VALIDATION

    def test_unknown_config_option(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("command = estimate\ncolour = blue\n")
        assert analyze.main(["--config", str(cfg)]) == analyze.EXIT_VALIDATION


class TestCommands:

    def test_adjust_limits(self, tmp_path):
        assert analyze.main(["estimate", "-i", CHICK, "-o", str(tmp_path / "estimate"),
                             "--format", "csv"]) == 0
        for sigma_b, method in [("0", "exposed_only"), ("inf", "difference")]:
            out = tmp_path / f"adjust_{method}"
            assert analyze.main(["adjust", "-i", CHICK, "-o", str(out), "--format", "csv",
                                 "--mu-b", "0", "--sigma-b", sigma_b]) == 0
            adjusted = report.read_estimates(out / "estimates_linear_adjust.csv", "linear-adjust")
            reference = report.read_estimates(
                tmp_path / "estimate" / f"estimates_{method}.csv", "difference")
            assert adjusted.ids == reference.ids
            assert np.allclose(adjusted.estimate, reference.estimate, rtol=0, atol=1e-12)
            assert np.allclose(adjusted.se, reference.se, rtol=0, atol=1e-12)

    def test_adjust_from_fit(self, tmp_path):
        values = np.empty((2, 10, 2))
        values[:, :, 0] = 0.01
        values[:, :, 1] = 0.02
        summary = sampler.summarize(sampler.Draws(values, ["mu_b", "sigma_b"]))
        summary.write_json(tmp_path / "fit.json")
        args = ["adjust", "-i", CHICK, "-o", str(tmp_path), "--format", "json",
                "--from-fit", str(tmp_path / "fit.json")]
        assert analyze.main(args) == 0
        content = json.loads((tmp_path / "adjustment.json").read_text())
        assert content["mu_b"] == pytest.approx(0.01)
        assert content["sigma_b"] == pytest.approx(0.02)

    def test_rescale_sham_se(self, tmp_path):
        base = ["diagnose", "-i", CHICK, "--format", "json"]
        assert analyze.main(base + ["-o", str(tmp_path / "a")]) == 0
        assert analyze.main(base + ["-o", str(tmp_path / "b"), "--rescale-sham-se", "2"]) == 0
        a = json.loads((tmp_path / "a" / "diagnose.json").read_text())
        b = json.loads((tmp_path / "b" / "diagnose.json").read_text())
        assert b["chi_square"]["stat"] == pytest.approx(a["chi_square"]["stat"] / 4)

    def test_fit_deterministic(self, tmp_path):
        for run in ["a", "b"]:
            args = ["fit", "-i", CHICK, "-o", str(tmp_path / run), "--seed", "7",
                    "--format", "csv", "json"] + QUICK_SAMPLER
            assert analyze.main(args) in [0, 4]
        assert (tmp_path / "a" / "draws.csv").read_bytes() == \
            (tmp_path / "b" / "draws.csv").read_bytes()
        assert compare_files(tmp_path / "a" / "fit.json", tmp_path / "b" / "fit.json")

    def test_simulate_sizes(self, tmp_path):
        args = ["simulate", "-i", CHICK, "-o", str(tmp_path), "--theta-source", "raw",
                "--estimators", "exposed-only,difference", "--sigma-b-grid", "0,0.05",
                "--replicates", "4", "--sizes", "2,3", "--format", "csv"]
        assert analyze.main(args) == 0
        assert (tmp_path / "metrics_M2.csv").exists()
        assert (tmp_path / "metrics_M3.csv").exists()
        assert not (tmp_path / "metrics_M2.svg").exists()
