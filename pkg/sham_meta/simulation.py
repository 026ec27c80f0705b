""" Repeated-sampling evaluation of the estimators over a grid of sham-bias scales.

Every replicate owns the random stream (seed, grid index, replicate index), so the
aggregated grid does not depend on worker count or scheduling.
"""

from concurrent.futures import ProcessPoolExecutor
import csv
import math
import warnings

import numpy as np
from scipy import stats

from sham_meta import classical, study_data, util
from sham_meta.model import ModelSpec, build_model
from sham_meta.sampler import Draws, SamplerConfig, fit
from sham_meta.study_data import Dataset, StudyRecord
from sham_meta.util import NonConvergenceWarning, ValidationError

ESTIMATORS = ["exposed-only", "difference", "bayes"]
THETA_SOURCES = ["draws", "fixed", "raw"]
NOISES = ["normal", "t"]
PROTOCOLS = ["default", "sizes"]
METRICS = ["prop_significant", "type_s_rate", "rmse", "mse", "rank_corr"]
SIGNIFICANCE_Z = 1.96
DEFAULT_GRID = [0.0, 0.02, 0.04, 0.06, 0.08, 0.10]
DEFAULT_BAYES_SAMPLER = {"chains": 2, "warmup": 500, "draws": 500}


def _float_list(v):
    if isinstance(v, str):
        v = [s for s in v.split(',') if s.strip()]
    return [util.to_float(x) for x in v]


def _str_list(v):
    if isinstance(v, str):
        v = [s.strip() for s in v.split(',') if s.strip()]
    return [str(x) for x in v]


class SimConfig:
    """ Simulation scenario.

    theta_source selects where the true effects come from: draws (one joint posterior
    draw per replicate from a Draws CSV), fixed (the vector `theta`) or raw (the
    observed y1 of `dataset`). `dataset` also provides ids, covariates and sample sizes.

    :param obj: JSON-like dict
    :type obj: dict
    :raises ValidationError: on invalid settings
    """

    def __init__(self, obj=None):
        obj = obj or {}
        util.check_schema_version(obj)
        optional_keys = [
            ('sigma_b_grid', _float_list, list(DEFAULT_GRID)),
            ('replicates', util.to_int, 200),
            ('sigma_y', util.to_float, 0.04),
            ('mu_b', util.to_float, 0.0),
            ('size', util.to_int, None),
            ('theta_source', str, 'draws'),
            ('theta_draws', str, None),
            ('theta', _float_list, None),
            ('dataset', str, None),
            ('noise', str, 'normal'),
            ('sample_size', util.to_int, None),
            ('estimators', _str_list, list(ESTIMATORS)),
            ('model', dict, {}),
            ('sampler', dict, dict(DEFAULT_BAYES_SAMPLER)),
            ('prior', str, None),
            ('protocol', str, 'default'),
            ('seed', util.to_int, util.DEFAULT_SEED),
        ]
        util.set_attr_from_dict(obj, self, [], optional_keys)
        if not self.sigma_b_grid or any(not s >= 0 for s in self.sigma_b_grid):
            raise ValidationError("sigma_b_grid: need non-negative values")
        if self.replicates < 1:
            raise ValidationError("replicates: must be positive")
        if not (self.sigma_y > 0 and math.isfinite(self.sigma_y)):
            raise ValidationError("sigma_y: must be positive")
        if self.size is not None and self.size < 1:
            raise ValidationError("size: must be positive")
        for name, choices in [('theta_source', THETA_SOURCES), ('noise', NOISES),
                              ('protocol', PROTOCOLS)]:
            if getattr(self, name) not in choices:
                raise ValidationError(f"{name}: choose from {choices}")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown or not self.estimators:
            raise ValidationError(f"estimators: choose from {ESTIMATORS}")
        if self.prior is not None and self.prior not in ["uniform", "weak"]:
            raise ValidationError("prior: choose from uniform, weak")
        # validated early, used per replicate
        ModelSpec(self.model)
        SamplerConfig(self.sampler)
        self._pool = None

    @classmethod
    def from_json(cls, path):
        return cls(util.read_json_config(path))

    def to_dict(self):
        return {
            "schema_version": 1,
            "sigma_b_grid": list(self.sigma_b_grid),
            "replicates": self.replicates,
            "sigma_y": self.sigma_y,
            "mu_b": self.mu_b,
            "size": self.size,
            "theta_source": self.theta_source,
            "theta_draws": self.theta_draws,
            "theta": self.theta,
            "dataset": self.dataset,
            "noise": self.noise,
            "sample_size": self.sample_size,
            "estimators": list(self.estimators),
            "model": dict(self.model),
            "sampler": dict(self.sampler),
            "prior": self.prior,
            "protocol": self.protocol,
            "seed": self.seed,
        }

    def replace(self, **kwargs):
        obj = self.to_dict()
        obj.update(kwargs)
        return SimConfig(obj)

    def prepare(self):
        """ Load theta source and study information once.

        :raises ValidationError: on missing inputs, length mismatches or t noise
            without sample sizes
        :return: theta pool (rows x J), ids, x, n1, n0
        :rtype: tuple
        """

        if self._pool is not None:
            return self._pool
        observed = None
        if self.dataset is not None:
            observed = study_data.as_summary(study_data.ingest(self.dataset))

        if self.theta_source == "draws":
            if self.theta_draws is None:
                raise ValidationError("theta_source draws needs theta_draws (a draws CSV)")
            pool = Draws.read_csv(self.theta_draws).study_matrix("theta")
            if pool.shape[1] == 0:
                raise ValidationError(f"{self.theta_draws}: no theta[j] columns")
        elif self.theta_source == "fixed":
            if not self.theta:
                raise ValidationError("theta_source fixed needs the theta vector")
            pool = np.array([self.theta], dtype=float)
        else:
            if observed is None:
                raise ValidationError("theta_source raw needs an observed dataset")
            pool = observed.column("y1")[None, :]

        J = pool.shape[1]
        if observed is not None and observed.J != J:
            raise ValidationError(
                f"theta source has {J} studies, dataset {self.dataset} has {observed.J}")
        if self.size is not None and self.size > J:
            raise ValidationError(f"size: {self.size} exceeds the {J} available studies")

        ids = observed.ids if observed is not None else [f"study{j + 1}" for j in range(J)]
        x = None
        if observed is not None and observed.has_column("x"):
            x = observed.column("x")
        n1 = n0 = None
        if observed is not None and observed.has_column("n1") and observed.has_column("n0"):
            n1, n0 = observed.column("n1"), observed.column("n0")
        elif self.sample_size is not None:
            if self.sample_size < 2:
                raise ValidationError("sample_size: must be at least 2")
            n1 = n0 = np.full(J, float(self.sample_size))
        if self.noise == "t" and n1 is None:
            raise ValidationError("t noise requires per-study sample sizes (dataset n1/n0 "
                                  "or sample_size)")
        self._pool = (pool, ids, x, n1, n0)
        return self._pool

    def study_count(self):
        pool = self.prepare()[0]
        return self.size or pool.shape[1]

    def bayes_spec(self):
        """ Model spec for the per-replicate fit with the prior of the chosen protocol. """
        prior = self.prior
        if prior is None:
            if self.protocol == "sizes" or self.study_count() < 15:
                prior = "weak"
            else:
                prior = "uniform"
        return ModelSpec(dict(self.model, prior=prior))


class MetricsGrid:
    """ Averaged metrics per (sigma_b, estimator) cell.

    Each cell maps metric -> {value, mcse, n} plus n_replicates, n_failed and
    n_nonconverged. type_s_rate averages only replicates with significant estimates.
    """

    def __init__(self, sigma_b_grid, estimators, size=None):
        self.sigma_b_grid = list(sigma_b_grid)
        self.estimators = list(estimators)
        self.size = size
        self.cells = {}

    def cell(self, sigma_b, estimator):
        return self.cells[(float(sigma_b), estimator)]

    def value(self, sigma_b, estimator, metric):
        return self.cell(sigma_b, estimator)[metric]["value"]

    def mcse(self, sigma_b, estimator, metric):
        return self.cell(sigma_b, estimator)[metric]["mcse"]

    def add_cell(self, sigma_b, estimator, replicate_metrics, n_failed, n_nonconverged):
        """ Aggregate per-replicate metric dicts (already in replicate order). """
        cell = {"n_replicates": len(replicate_metrics), "n_failed": n_failed,
                "n_nonconverged": n_nonconverged}
        for metric in METRICS:
            values = np.array([m[metric] for m in replicate_metrics], dtype=float)
            values = values[~np.isnan(values)]
            n = len(values)
            cell[metric] = {
                "value": float(np.mean(values)) if n else math.nan,
                "mcse": float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
                "n": n,
            }
        self.cells[(float(sigma_b), estimator)] = cell

    def rows(self):
        rows = []
        for sigma_b in self.sigma_b_grid:
            for estimator in self.estimators:
                cell = self.cell(sigma_b, estimator)
                for metric in METRICS:
                    rows.append({
                        "sigma_b": sigma_b, "estimator": estimator, "metric": metric,
                        "value": cell[metric]["value"], "mcse": cell[metric]["mcse"],
                        "n_replicates": cell[metric]["n"], "n_failed": cell["n_failed"],
                        "n_nonconverged": cell["n_nonconverged"],
                    })
        return rows

    def write_csv(self, path):
        header = ["sigma_b", "estimator", "metric", "value", "mcse",
                  "n_replicates", "n_failed", "n_nonconverged"]
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(','.join(header))
            for row in self.rows():
                f.write('\n' + ','.join(
                    repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in header))
            f.write('\n')

    @classmethod
    def read_csv(cls, path):
        with open(path, 'r', encoding='utf-8', newline='') as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise ValidationError(f"{path}: empty metrics grid")
        grid, estimators = [], []
        for row in rows:
            sigma_b = float(row["sigma_b"])
            if sigma_b not in grid:
                grid.append(sigma_b)
            if row["estimator"] not in estimators:
                estimators.append(row["estimator"])
        result = cls(grid, estimators)
        for row in rows:
            key = (float(row["sigma_b"]), row["estimator"])
            cell = result.cells.setdefault(key, {
                "n_failed": int(row["n_failed"]),
                "n_nonconverged": int(row["n_nonconverged"]),
            })
            cell[row["metric"]] = {"value": float(row["value"]), "mcse": float(row["mcse"]),
                                   "n": int(row["n_replicates"])}
        for cell in result.cells.values():
            cell["n_replicates"] = cell["n_failed"] + max(
                cell[m]["n"] for m in METRICS if m != "type_s_rate")
        return result


def simulate_replicate(cfg, sigma_b, rng):
    """ Draw one synthetic dataset.

    b_j ~ normal(mu_b, sigma_b); theta from the configured source; y0_j = b_j + noise,
    y1_j = theta_j + b_j + noise, noise sigma_y times standard normal or t with n - 1
    degrees of freedom per arm. With a size M below the available studies, M studies
    are picked uniformly without replacement.

    :param cfg: scenario
    :type cfg: SimConfig
    :param sigma_b: sd of the biases
    :type sigma_b: float
    :param rng: random stream of this replicate
    :type rng: numpy.random.Generator
    :return: true effects and simulated dataset
    :rtype: tuple(numpy.ndarray, Dataset)
    """

    pool, ids, x, n1, n0 = cfg.prepare()
    J = pool.shape[1]
    M = cfg.size or J
    if M < J:
        idx = np.sort(rng.choice(J, size=M, replace=False))
    else:
        idx = np.arange(J)
    row = pool[rng.integers(len(pool))]
    theta = row[idx]
    b = cfg.mu_b + sigma_b * rng.standard_normal(M)
    if cfg.noise == "normal":
        e0 = rng.standard_normal(M)
        e1 = rng.standard_normal(M)
    else:
        e0 = rng.standard_t(n0[idx] - 1)
        e1 = rng.standard_t(n1[idx] - 1)
    y0 = b + cfg.sigma_y * e0
    y1 = theta + b + cfg.sigma_y * e1
    records = []
    for k, j in enumerate(idx):
        records.append(StudyRecord({
            "id": ids[j],
            "x": None if x is None else x[j],
            "y1": y1[k], "s1": cfg.sigma_y,
            "y0": y0[k], "s0": cfg.sigma_y,
            "n1": None if n1 is None else int(n1[j]),
            "n0": None if n0 is None else int(n0[j]),
        }))
    return theta, Dataset(records)


def rank_correlation(a, b):
    """ Spearman correlation: Pearson correlation of average ranks. NaN if undefined. """
    if len(a) < 2:
        return math.nan
    ra = stats.rankdata(a, method="average")
    rb = stats.rankdata(b, method="average")
    if np.ptp(ra) == 0 or np.ptp(rb) == 0:
        return math.nan
    return float(np.corrcoef(ra, rb)[0, 1])


def evaluate_metrics(estimates, truths):
    """ Frequency properties of one set of estimates against the true effects.

    Significant means the interval estimate +- 1.96 se (or the estimate set's own
    interval, e.g. a 95% posterior interval) excludes zero.

    :param estimates: per-study estimates
    :type estimates: EstimateSet
    :param truths: true effects
    :type truths: array-like
    :return: prop_significant, type_s_rate (NaN without significant estimates of
        nonzero truths; studies with a true effect of exactly 0 do not enter it),
        rmse, mse, rank_corr
    :rtype: dict
    """

    truths = np.asarray(truths, dtype=float)
    est = estimates.estimate
    if len(est) != len(truths):
        raise ValidationError("estimates and truths differ in length")
    if estimates.low is not None and estimates.high is not None:
        low, high = estimates.low, estimates.high
    else:
        low = est - SIGNIFICANCE_Z * estimates.se
        high = est + SIGNIFICANCE_Z * estimates.se
    significant = (low > 0) | (high < 0)
    n_sig = int(np.sum(significant))
    # a zero truth has no sign to get wrong
    signed = significant & (truths != 0)
    if np.any(signed):
        wrong_sign = signed & (np.sign(est) != np.sign(truths))
        type_s = float(np.sum(wrong_sign) / np.sum(signed))
    else:
        type_s = math.nan
    mse = float(np.mean((est - truths) ** 2))
    return {
        "prop_significant": n_sig / len(est),
        "type_s_rate": type_s,
        "rmse": math.sqrt(mse),
        "mse": mse,
        "rank_corr": rank_correlation(est, truths),
    }


def _estimate(cfg, estimator, dataset, rng):
    if estimator == "exposed-only":
        return classical.exposed_only(dataset), True
    if estimator == "difference":
        return classical.difference(dataset), True
    sampler = SamplerConfig(dict(cfg.sampler, seed=int(rng.integers(np.iinfo(np.int64).max))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        _, summary = fit(cfg.bayes_spec(), dataset, sampler)
    return summary.estimate_set(), summary.converged


def _replicate_job(job):
    cfg, grid_idx, rep_idx = job
    rng = util.make_rng(cfg.seed, grid_idx, rep_idx)
    sigma_b = cfg.sigma_b_grid[grid_idx]
    try:
        theta, dataset = simulate_replicate(cfg, sigma_b, rng)
    except Exception as e:
        return {est: {"error": str(e)} for est in cfg.estimators}
    result = {}
    for estimator in cfg.estimators:
        try:
            estimates, converged = _estimate(cfg, estimator, dataset, rng)
            result[estimator] = {"metrics": evaluate_metrics(estimates, theta),
                                 "converged": converged}
        except Exception as e:
            result[estimator] = {"error": str(e)}
    return result


def run_grid(cfg, threads=1, verbose=0):
    """ Evaluate every estimator on R replicates per grid point.

    :param cfg: scenario
    :type cfg: SimConfig
    :param threads: worker processes
    :type threads: int
    :param verbose: print progress bar if > 0
    :type verbose: int
    :raises ValidationError: if the scenario can not be prepared
    :return: averaged metrics; failed replicates are counted, not raised
    :rtype: MetricsGrid
    """

    cfg.prepare()
    jobs = [(cfg, gi, ri) for gi in range(len(cfg.sigma_b_grid)) for ri in range(cfg.replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_replicate_job, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_replicate_job(job))
            if verbose:
                util.progress_bar(i, len(jobs))

    assert len(results) == len(jobs), "one result per replicate"
    grid = MetricsGrid(cfg.sigma_b_grid, cfg.estimators, size=cfg.study_count())
    errors = []
    for gi, sigma_b in enumerate(cfg.sigma_b_grid):
        chunk = results[gi * cfg.replicates:(gi + 1) * cfg.replicates]
        for estimator in cfg.estimators:
            ok = [r[estimator] for r in chunk if "metrics" in r[estimator]]
            failed = [r[estimator]["error"] for r in chunk if "error" in r[estimator]]
            errors += failed
            grid.add_cell(sigma_b, estimator, [r["metrics"] for r in ok], len(failed),
                          sum(1 for r in ok if not r["converged"]))
    if errors:
        warnings.warn(f"{len(errors)} replicate evaluations failed, first error: {errors[0]}")
    return grid


def simulate_from_hyper(hyper, J, sigma_y, rng, x=None):
    """ Dataset from the normal hierarchy: theta_j, b_j from the hyperparameters, se sigma_y.

    :return: theta, b and dataset
    :rtype: tuple
    """

    h = hyper.as_dict() if hasattr(hyper, "as_dict") else dict(hyper)
    theta = h["mu_theta"] + h["sigma_theta"] * rng.standard_normal(J)
    b = h["mu_b"] + h["sigma_b"] * rng.standard_normal(J)
    y1 = theta + b + sigma_y * rng.standard_normal(J)
    y0 = b + sigma_y * rng.standard_normal(J)
    records = [StudyRecord({
        "id": f"study{j + 1}", "x": None if x is None else x[j],
        "y1": y1[j], "s1": sigma_y, "y0": y0[j], "s0": sigma_y,
    }) for j in range(J)]
    return theta, b, Dataset(records)


def _coverage_job(job):
    hyper, J, sigma_y, spec, sampler, seed, rep, parameter, level = job
    rng = util.make_rng(seed, rep)
    _, _, dataset = simulate_from_hyper(hyper, J, sigma_y, rng)
    config = SamplerConfig(dict(sampler, seed=int(rng.integers(np.iinfo(np.int64).max))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        draws, _ = fit(spec, dataset, config)
    x = draws.get(parameter).reshape(-1)
    low, high = np.quantile(x, [(1 - level) / 2, (1 + level) / 2])
    return bool(low <= hyper[parameter] <= high)


def interval_coverage(hyper, J, repetitions, sigma_y=0.04, spec=None, sampler=None,
                      seed=util.DEFAULT_SEED, threads=1, parameter="mu_theta", level=0.95):
    """ Count repetitions whose posterior interval of `parameter` covers its true value.

    Datasets are simulated from the normal hierarchy with the given hyperparameters
    and refitted.

    :param hyper: true hyperparameters (mu_theta, sigma_theta, mu_b, sigma_b)
    :type hyper: dict
    :param J: studies per dataset
    :type J: int
    :param repetitions: number of datasets
    :type repetitions: int
    :return: number of covering intervals
    :rtype: int
    """

    spec = spec or ModelSpec({"variant": "normal-default", "prior": "weak"})
    sampler = sampler or dict(DEFAULT_BAYES_SAMPLER)
    hyper = dict(hyper)
    jobs = [(hyper, J, sigma_y, spec, sampler, seed, rep, parameter, level)
            for rep in range(repetitions)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            covered = list(ex.map(_coverage_job, jobs))
    else:
        covered = [_coverage_job(job) for job in jobs]
    return sum(covered)


def _sbc_job(job):
    spec, J, sigma_y, sampler, thin, seed, rep = job
    rng = util.make_rng(seed, rep)
    placeholder = Dataset([StudyRecord({"id": f"study{j + 1}", "y1": 0.0, "s1": sigma_y,
                                        "y0": 0.0, "s0": sigma_y}) for j in range(J)])
    model = build_model(spec, placeholder)
    hyper, _ = model.sample_prior(rng)
    _, _, dataset = simulate_from_hyper(hyper, J, sigma_y, rng)
    config = SamplerConfig(dict(sampler, seed=int(rng.integers(np.iinfo(np.int64).max))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        draws, _ = fit(spec, dataset, config)
    ranks = {}
    for name in model.free_hypers:
        x = draws.get(name).reshape(-1)
        keep = np.linspace(0, len(x) - 1, thin).round().astype(int)
        ranks[name] = int(np.sum(x[keep] < getattr(hyper, name)))
    return ranks


def sbc_ranks(spec, J, replications, thin=63, sigma_y=1.0, sampler=None,
              seed=util.DEFAULT_SEED, threads=1):
    """ Simulation-based calibration ranks of the hyperparameters.

    Each replication draws hyperparameters from the (weak) prior, simulates a
    normal-hierarchy dataset, refits and ranks the truth among `thin` evenly spaced
    posterior draws. Ranks lie in 0..thin.

    :return: hyperparameter name -> array of ranks
    :rtype: dict
    """

    sampler = sampler or dict(DEFAULT_BAYES_SAMPLER)
    jobs = [(spec, J, sigma_y, sampler, thin, seed, rep) for rep in range(replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_sbc_job, jobs))
    else:
        results = [_sbc_job(job) for job in jobs]
    return {name: np.array([r[name] for r in results]) for name in results[0]}


def rank_uniformity_pvalue(ranks, max_rank, n_bins=8):
    """ Chi-square test that ranks in 0..max_rank are uniform, over `n_bins` bins. """
    ranks = np.asarray(ranks)
    edges = np.linspace(0, max_rank + 1, n_bins + 1)
    observed, _ = np.histogram(ranks, bins=edges)
    # rank values per bin, so unequal bins get their share
    per_bin, _ = np.histogram(np.arange(max_rank + 1), bins=edges)
    expected = len(ranks) * per_bin / (max_rank + 1)
    return float(stats.chisquare(observed, expected).pvalue)
