""" Hamiltonian Monte Carlo for the hierarchical models.

Each chain runs a jittered fixed-length leapfrog integrator. During warmup the step size
follows dual averaging toward the target acceptance rate and a diagonal metric is
estimated over doubling windows. Chains are independent and seeded from (seed, chain).
"""

from concurrent.futures import ProcessPoolExecutor
import csv
import json
import math
import warnings

import numpy as np
from scipy import special

from sham_meta import convergence, util
from sham_meta.classical import EstimateSet
from sham_meta.model import HyperParams, build_model
from sham_meta.util import ModelError, NonConvergenceWarning, ValidationError

RHAT_MAX = 1.01
ESS_PER_CHAIN = 100
MAX_DIVERGENCE_RATE = 0.001
# energy error above which a trajectory counts as divergent
DIVERGENCE_THRESHOLD = 1000
INIT_ATTEMPTS = 100
QUANTILES = [0.025, 0.5, 0.975]
TRANSFORMS = {
    "exp": np.exp,
    "inv_logit": special.expit,
}


class SamplerConfig:
    """ Sampler settings.

    :param obj: JSON-like dict; keys chains, warmup, draws, target_accept,
        max_leapfrog, seed, path_length
    :type obj: dict
    :raises ValidationError: on non-positive counts or target_accept outside (0, 1)
    """

    def __init__(self, obj=None):
        obj = obj or {}
        util.check_schema_version(obj)
        optional_keys = [
            ('chains', util.to_int, 4),
            ('warmup', util.to_int, 1000),
            ('draws', util.to_int, 1000),
            ('target_accept', util.to_float, 0.8),
            ('max_leapfrog', util.to_int, 1024),
            ('seed', util.to_int, util.DEFAULT_SEED),
            # integration time, jittered uniformly in [0.5, 1.5] times this value
            ('path_length', util.to_float, 2.0),
        ]
        util.set_attr_from_dict(obj, self, [], optional_keys)
        for name in ['chains', 'warmup', 'draws', 'max_leapfrog']:
            if getattr(self, name) < 1:
                raise ValidationError(f"{name}: must be positive")
        if not 0 < self.target_accept < 1:
            raise ValidationError("target_accept: must lie strictly inside (0, 1)")
        if not self.path_length > 0:
            raise ValidationError("path_length: must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed: must be a 64-bit unsigned integer")

    @classmethod
    def from_json(cls, path):
        return cls(util.read_json_config(path))

    def to_dict(self):
        return {
            "schema_version": 1,
            "chains": self.chains,
            "warmup": self.warmup,
            "draws": self.draws,
            "target_accept": self.target_accept,
            "max_leapfrog": self.max_leapfrog,
            "seed": self.seed,
            "path_length": self.path_length,
        }

    def replace(self, **kwargs):
        obj = self.to_dict()
        obj.update({k: v for k, v in kwargs.items() if v is not None})
        return SamplerConfig(obj)


class Draws:
    """ Posterior draws on the constrained scale.

    :param values: array (chains, draws, parameters)
    :type values: numpy.ndarray
    :param names: parameter names
    :type names: list
    :param divergent: bool array (chains, draws)
    :type divergent: numpy.ndarray
    :param study_ids: ids of the studies behind theta[j] / b[j]
    :type study_ids: list
    """

    def __init__(self, values, names, divergent=None, study_ids=None):
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] != len(names):
            raise ValidationError("draws must have shape (chains, draws, parameters)")
        self.names = list(names)
        if divergent is None:
            divergent = np.zeros(self.values.shape[:2], dtype=bool)
        self.divergent = np.asarray(divergent, dtype=bool)
        self.study_ids = None if study_ids is None else list(study_ids)
        self.step_size = None
        self.accept_rate = None

    @property
    def chains(self):
        return self.values.shape[0]

    @property
    def n_draws(self):
        return self.values.shape[1]

    def get(self, name):
        """ Draws of one parameter, shape (chains, draws). """
        try:
            return self.values[:, :, self.names.index(name)]
        except ValueError:
            raise ValidationError(f"no parameter named {name!r} in draws")

    def study_matrix(self, block="theta"):
        """ All draws of theta[j] (or b[j]) pooled over chains, shape (samples, J). """
        cols = [k for k, n in enumerate(self.names) if n.startswith(block + "[")]
        return self.values[:, :, cols].reshape(-1, len(cols))

    def write_csv(self, path):
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(','.join(["chain", "iteration", "divergent"] + self.names))
            for c in range(self.chains):
                for i in range(self.n_draws):
                    row = [str(c), str(i), str(int(self.divergent[c, i]))]
                    row += [repr(float(v)) for v in self.values[c, i]]
                    f.write('\n' + ','.join(row))
            f.write('\n')

    @classmethod
    def read_csv(cls, path):
        """ Read draws written by :meth:`write_csv`.

        :raises ValidationError: on missing columns or ragged chains
        """

        try:
            with open(path, 'r', encoding='utf-8', newline='') as f:
                reader = csv.reader(f)
                header = next(reader)
                rows = [row for row in reader if row]
        except (OSError, StopIteration):
            raise ValidationError(f"can not read draws from {path}")
        if header[:3] != ["chain", "iteration", "divergent"]:
            raise ValidationError(f"{path}: expected columns chain, iteration, divergent first")
        names = header[3:]
        chains = {}
        for row_idx, row in enumerate(rows, start=1):
            try:
                chain = int(row[0])
                values = [float(v) for v in row[3:]]
                div = bool(int(row[2]))
            except (ValueError, IndexError):
                raise ValidationError(f"{path}, row {row_idx}: malformed draw")
            if len(values) != len(names):
                raise ValidationError(f"{path}, row {row_idx}: expected {len(names)} values")
            chains.setdefault(chain, []).append((values, div))
        lengths = {len(v) for v in chains.values()}
        if len(lengths) != 1:
            raise ValidationError(f"{path}: chains have different lengths")
        order = sorted(chains)
        values = np.array([[v for v, _ in chains[c]] for c in order])
        divergent = np.array([[d for _, d in chains[c]] for c in order])
        return cls(values, names, divergent)

    def __eq__(self, other):
        return (isinstance(other, Draws) and self.names == other.names
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.divergent, other.divergent))


class FitSummary:
    """ Posterior summaries, convergence diagnostics and per-study effects. """

    def __init__(self, parameters, studies, divergences, chains, n_draws,
                 transformed=None, converged=True, reasons=None, variant=None):
        self.parameters = parameters
        self.studies = studies
        self.divergences = int(divergences)
        self.chains = chains
        self.n_draws = n_draws
        self.transformed = transformed or {}
        self.converged = converged
        self.reasons = reasons or []
        self.variant = variant

    def mean(self, name):
        try:
            return self.parameters[name]["mean"]
        except KeyError:
            raise ValidationError(f"no parameter named {name!r} in fit summary")

    def estimate_set(self):
        """ Posterior mean and sd of theta[j] with 95% intervals as a bayes EstimateSet. """
        ids = [s["id"] for s in self.studies]
        est = [s["theta_mean"] for s in self.studies]
        sd = [s["theta_sd"] for s in self.studies]
        low = [self.parameters[f"theta[{j}]"]["q2.5"] for j in range(len(ids))]
        high = [self.parameters[f"theta[{j}]"]["q97.5"] for j in range(len(ids))]
        # constant draws have sd 0; keep EstimateSet valid
        sd = [s if s > 0 else np.finfo(float).tiny for s in sd]
        return EstimateSet("bayes", ids, est, sd, low=low, high=high)

    def to_dict(self):
        return {
            "schema_version": 1,
            "variant": self.variant,
            "chains": self.chains,
            "draws": self.n_draws,
            "divergences": self.divergences,
            "converged": self.converged,
            "reasons": self.reasons,
            "parameters": self.parameters,
            "transformed": self.transformed,
            "studies": self.studies,
        }

    def write_json(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_json(cls, path):
        obj = util.read_json_config(path)
        try:
            return cls(obj["parameters"], obj["studies"], obj["divergences"], obj["chains"],
                       obj["draws"], obj.get("transformed"), obj["converged"],
                       obj.get("reasons"), obj.get("variant"))
        except KeyError as e:
            raise ValidationError(f"{path}: fit summary misses field {e.args[0]}")


class DualAverage:
    """ Step size adaptation by dual averaging of the acceptance statistic. """

    def __init__(self, initial_step_size, target_accept=0.8):
        self._log_avg_step = 0.0
        self._H = 0.0
        self._mu = math.log(10 * initial_step_size)
        self._t0 = 10
        self._delta = target_accept
        self._gamma = 0.05
        self._kappa = 0.75
        self._m = 1.0

    def step(self, accept_prob):
        H_frac = 1.0 / (self._m + self._t0)
        self._H = (1 - H_frac) * self._H + H_frac * (self._delta - accept_prob)
        log_step = self._mu - (math.sqrt(self._m) / self._gamma) * self._H
        step_frac = self._m ** (-self._kappa)
        self._log_avg_step = step_frac * log_step + (1 - step_frac) * self._log_avg_step
        self._m += 1
        return math.exp(log_step)

    def finalize(self):
        return math.exp(self._log_avg_step)


def adaptation_windows(warmup):
    """ Start and ends of the metric adaptation windows.

    A fast initial buffer (75 iterations), doubling slow windows starting at 25
    iterations, and a fast terminal buffer (50). Short warmups use 15% / 75% / 10%.
    Below 20 iterations only the step size adapts.

    :param warmup: number of warmup iterations
    :type warmup: int
    :return: first iteration of the first window, list of window end iterations
    :rtype: tuple
    """

    if warmup < 20:
        return warmup, []
    init, term, base = 75, 50, 25
    if init + term + base > warmup:
        init = int(0.15 * warmup)
        term = int(0.1 * warmup)
        base = warmup - init - term
    ends = []
    start, size = init, base
    while True:
        end = start + size
        if end + 2 * size > warmup - term:
            ends.append(warmup - term)
            break
        ends.append(end)
        start, size = end, 2 * size
    return init, ends


def _evaluate(model, q):
    with np.errstate(all='ignore'):
        try:
            lp, grad = model.log_prob_and_grad(q)
        except (ModelError, OverflowError, ValueError):
            return -math.inf, None
    if not math.isfinite(lp) or not np.all(np.isfinite(grad)):
        return -math.inf, None
    return lp, grad


def _leapfrog(model, q, p, grad, step_size, inv_metric, n_steps):
    p = p + 0.5 * step_size * grad
    lp = -math.inf
    for i in range(n_steps):
        q = q + step_size * inv_metric * p
        lp, grad = _evaluate(model, q)
        if grad is None:
            return q, p, -math.inf, None
        if i < n_steps - 1:
            p = p + step_size * grad
    p = p + 0.5 * step_size * grad
    return q, p, lp, grad


def find_reasonable_step_size(model, q, lp, grad, inv_metric, rng):
    """ Double or halve a unit step until one leapfrog step crosses acceptance 0.5. """
    step_size = 1.0

    def accept(step):
        p = rng.standard_normal(len(q)) / np.sqrt(inv_metric)
        h0 = -lp + 0.5 * np.dot(p * inv_metric, p)
        _, p1, lp1, g1 = _leapfrog(model, q, p, grad, step, inv_metric, 1)
        if g1 is None:
            return 0.0
        h1 = -lp1 + 0.5 * np.dot(p1 * inv_metric, p1)
        return math.exp(min(0.0, h0 - h1))

    a = 1 if accept(step_size) > 0.5 else -1
    for _ in range(100):
        prob = accept(step_size)
        if (a == 1 and prob <= 0.5) or (a == -1 and prob > 0.5):
            break
        step_size *= 2.0 ** a
    return step_size


def hmc_transition(model, q, lp, grad, step_size, inv_metric, config, rng):
    """ One jittered fixed-length HMC step.

    :return: new position, log density, gradient, acceptance probability, divergence flag
    :rtype: tuple
    """

    jitter = rng.uniform(0.5, 1.5)
    n_steps = int(min(max(1, math.ceil(config.path_length * jitter / step_size)),
                      config.max_leapfrog))
    p0 = rng.standard_normal(len(q)) / np.sqrt(inv_metric)
    h0 = -lp + 0.5 * np.dot(p0 * inv_metric, p0)
    q1, p1, lp1, grad1 = _leapfrog(model, q, p0, grad, step_size, inv_metric, n_steps)
    u = rng.uniform()
    if grad1 is None:
        return q, lp, grad, 0.0, True
    h1 = -lp1 + 0.5 * np.dot(p1 * inv_metric, p1)
    error = h1 - h0
    if not math.isfinite(error) or error > DIVERGENCE_THRESHOLD:
        return q, lp, grad, 0.0, True
    accept_prob = math.exp(min(0.0, -error))
    if u < accept_prob:
        return q1, lp1, grad1, accept_prob, False
    return q, lp, grad, accept_prob, False


def initialize(model, rng):
    """ Random start with finite log density and gradient.

    :raises ModelError: if no finite start is found after 100 attempts
    """

    for _ in range(INIT_ATTEMPTS):
        q = model.initial_point(rng)
        lp, grad = _evaluate(model, q)
        if grad is not None:
            return q, lp, grad
    raise ModelError(
        f"{model.variant}: non-finite log density at initialization after {INIT_ATTEMPTS} attempts")


def run_chain(model, config, chain, verbose=0):
    """ Run warmup and sampling for one chain.

    :param model: model to sample
    :type model: Model
    :param config: sampler settings
    :type config: SamplerConfig
    :param chain: chain index, selects the random stream
    :type chain: int
    :param verbose: print progress bar if > 0
    :type verbose: int
    :return: constrained draws (draws x parameters), divergence flags, step size, accept rate
    :rtype: tuple
    """

    rng = util.make_rng(config.seed, chain)
    q, lp, grad = initialize(model, rng)
    inv_metric = np.ones(model.dim)
    step_size = find_reasonable_step_size(model, q, lp, grad, inv_metric, rng)
    adapter = DualAverage(step_size, config.target_accept)
    window_start, window_ends = adaptation_windows(config.warmup)
    window = []

    n_out = len(model.output_names())
    out = np.empty((config.draws, n_out))
    divergent = np.zeros(config.draws, dtype=bool)
    accept_sum = 0.0
    n_iter = config.warmup + config.draws
    for it in range(n_iter):
        q, lp, grad, accept_prob, div = hmc_transition(
            model, q, lp, grad, step_size, inv_metric, config, rng)
        if it < config.warmup:
            step_size = adapter.step(accept_prob)
            if it >= window_start:
                window.append(q)
            if window_ends and it + 1 == window_ends[0]:
                samples = np.array(window)
                n = len(samples)
                var = np.var(samples, axis=0, ddof=1) if n > 1 else np.ones(model.dim)
                # regularized toward unit scale
                inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                window_ends.pop(0)
                window = []
                step_size = find_reasonable_step_size(model, q, lp, grad, inv_metric, rng)
                adapter = DualAverage(step_size, config.target_accept)
            if it + 1 == config.warmup:
                step_size = adapter.finalize()
        else:
            out[it - config.warmup] = model.constrained(q)
            divergent[it - config.warmup] = div
            accept_sum += accept_prob
        if verbose:
            util.progress_bar(it, n_iter)
    return out, divergent, step_size, accept_sum / config.draws


def _run_chain_job(job):
    model, config, chain = job
    return run_chain(model, config, chain)


def summarize(draws, transforms=None):
    """ Moments, quantiles and diagnostics per parameter.

    :param draws: posterior draws
    :type draws: Draws
    :param transforms: parameter name -> exp or inv_logit, applied draw-wise
    :type transforms: dict
    :return: summary; convergence is judged only with at least 2 chains of 4 draws
    :rtype: FitSummary
    """

    transforms = transforms or {}
    with_diagnostics = draws.chains >= 2 and draws.n_draws >= 4
    parameters = {}
    for k, name in enumerate(draws.names):
        x = draws.values[:, :, k]
        entry = _moments(x)
        if with_diagnostics:
            entry["rhat"] = convergence.rhat(x)
            entry["ess_bulk"] = convergence.ess_bulk(x)
            entry["mcse"] = convergence.mcse_mean(x)
        else:
            entry["rhat"] = entry["ess_bulk"] = entry["mcse"] = math.nan
        parameters[name] = entry

    transformed = {}
    for name, kind in transforms.items():
        if kind not in TRANSFORMS:
            raise ValidationError(f"unknown transform {kind!r}, choose from {list(TRANSFORMS)}")
        entry = _moments(TRANSFORMS[kind](draws.get(name)))
        entry["transform"] = kind
        transformed[name] = entry

    ids = draws.study_ids
    J = sum(1 for n in draws.names if n.startswith("theta["))
    if ids is None:
        ids = [str(j) for j in range(J)]
    studies = []
    for j in range(J):
        s = {
            "id": ids[j],
            "theta_mean": parameters[f"theta[{j}]"]["mean"],
            "theta_sd": parameters[f"theta[{j}]"]["sd"],
        }
        if f"b[{j}]" in parameters:
            s["b_mean"] = parameters[f"b[{j}]"]["mean"]
            s["b_sd"] = parameters[f"b[{j}]"]["sd"]
        studies.append(s)

    divergences = int(np.sum(draws.divergent))
    reasons = []
    if with_diagnostics:
        bad_rhat = [n for n, e in parameters.items() if not e["rhat"] <= RHAT_MAX]
        bad_ess = [n for n, e in parameters.items()
                   if not e["ess_bulk"] >= ESS_PER_CHAIN * draws.chains]
        if bad_rhat:
            reasons.append(f"R-hat above {RHAT_MAX} for {', '.join(bad_rhat[:5])}")
        if bad_ess:
            reasons.append(f"bulk ESS below {ESS_PER_CHAIN * draws.chains} for "
                           f"{', '.join(bad_ess[:5])}")
    else:
        reasons.append("convergence not assessed: need 2 chains with 4 draws")
    if divergences > MAX_DIVERGENCE_RATE * draws.chains * draws.n_draws:
        reasons.append(f"{divergences} divergent transitions")
    return FitSummary(parameters, studies, divergences, draws.chains, draws.n_draws,
                      transformed, converged=not reasons, reasons=reasons)


def _moments(x):
    flat = np.asarray(x, dtype=float).reshape(-1)
    q = np.quantile(flat, QUANTILES)
    return {
        "mean": float(np.mean(flat)),
        "sd": float(np.std(flat, ddof=1)) if flat.size > 1 else 0.0,
        "q2.5": float(q[0]),
        "q50": float(q[1]),
        "q97.5": float(q[2]),
    }


def fit(spec, dataset, config=None, threads=1, transforms=None, verbose=0):
    """ Sample the posterior of `spec` given `dataset`.

    :param spec: model specification
    :type spec: ModelSpec
    :param dataset: data
    :type dataset: Dataset
    :param config: sampler settings (defaults if None)
    :type config: SamplerConfig
    :param threads: number of worker processes for the chains
    :type threads: int
    :param transforms: parameter name -> exp or inv_logit for transformed summaries
    :type transforms: dict
    :param verbose: print progress if > 0
    :type verbose: int
    :raises ValidationError: if model and dataset do not fit together
    :raises ModelError: if no finite starting point is found
    :return: draws and summary; non-convergence is flagged in the summary and warned about
    :rtype: tuple(Draws, FitSummary)
    """

    config = config or SamplerConfig()
    model = build_model(spec, dataset)
    jobs = [(model, config, c) for c in range(config.chains)]
    if threads > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, config.chains)) as ex:
            results = list(ex.map(_run_chain_job, jobs))
    else:
        results = []
        for c in range(config.chains):
            if verbose:
                print(f"Chain {c + 1}/{config.chains}")
            results.append(run_chain(model, config, c, verbose=verbose))

    draws = Draws(np.stack([r[0] for r in results]), model.output_names(),
                  np.stack([r[1] for r in results]), study_ids=model.ids)
    draws.step_size = [r[2] for r in results]
    draws.accept_rate = [r[3] for r in results]
    summary = summarize(draws, transforms)
    summary.variant = spec.variant
    if not summary.converged:
        warnings.warn(f"fit of {spec.variant} did not converge: {'; '.join(summary.reasons)}",
                      NonConvergenceWarning)
    return draws, summary


def conjugate_posterior(dataset, hyper, variant='normal-default'):
    """ Exact Gaussian posterior of the study latents for fixed hyperparameters.

    Supported for the normal-likelihood variants normal-default, correlated,
    linear-trend (latents theta_j, b_j) and diff-meta (theta_j only).

    :param dataset: summary dataset
    :type dataset: Dataset
    :param hyper: hyperparameters
    :type hyper: HyperParams or dict
    :param variant: model variant
    :type variant: str
    :raises ValidationError: for other variants
    :return: means (J x k) and covariances (J x k x k)
    :rtype: tuple
    """

    dataset.require_kind("summary")
    h = hyper.as_dict() if isinstance(hyper, HyperParams) else dict(hyper)
    y1, s1 = dataset.column("y1"), dataset.column("s1")
    y0, s0 = dataset.column("y0"), dataset.column("s0")
    if variant == 'diff-meta':
        v = s1 ** 2 + s0 ** 2
        prior_prec = 1 / h['sigma_theta'] ** 2
        var = 1 / (prior_prec + 1 / v)
        mean = var * (h['mu_theta'] * prior_prec + (y1 - y0) / v)
        return mean[:, None], var[:, None, None]
    if variant not in ['normal-default', 'correlated', 'linear-trend']:
        raise ValidationError(f"no closed-form posterior for variant {variant}")

    if variant == 'linear-trend':
        theta_mean = h['a'] + h['b_slope'] * dataset.column("x")
    else:
        theta_mean = np.full(dataset.J, h['mu_theta'])
    rho = h.get('rho', 0.0) if variant == 'correlated' else 0.0
    s_t, s_b = h['sigma_theta'], h['sigma_b']
    prior_prec = np.linalg.inv(np.array([[s_t ** 2, rho * s_t * s_b],
                                         [rho * s_t * s_b, s_b ** 2]]))
    # y1 = theta + b + e1, y0 = b + e0
    H = np.array([[1.0, 1.0], [0.0, 1.0]])
    means = np.empty((dataset.J, 2))
    covs = np.empty((dataset.J, 2, 2))
    for j in range(dataset.J):
        noise_prec = np.diag([1 / s1[j] ** 2, 1 / s0[j] ** 2])
        cov = np.linalg.inv(prior_prec + H.T @ noise_prec @ H)
        m0 = np.array([theta_mean[j], h['mu_b']])
        means[j] = cov @ (prior_prec @ m0 + H.T @ noise_prec @ np.array([y1[j], y0[j]]))
        covs[j] = cov
    return means, covs
