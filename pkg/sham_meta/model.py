""" Model specification, parameter layout and the shared log density machinery.

Every variant lives in its own module under :mod:`sham_meta.models` and is looked up
by name with :func:`class_from_str`. Hierarchical latents are non-centered
(theta = mu + sigma * z); the sampler works on the flat, unconstrained ParamVector
[raw latents..., unconstrained hyperparameters...].
"""

from importlib import import_module
import math

import numpy as np

from sham_meta import util
from sham_meta.util import ModelError, ValidationError

VARIANTS = {
    'normal-default': 'normal_default',
    'correlated': 'correlated',
    'binomial': 'binomial',
    'diff-meta': 'diff_meta',
    'no-pool-theta': 'no_pool',
    'no-pool-both': 'no_pool',
    'gp-se': 'gp',
    'gp-periodic': 'gp',
    'linear-trend': 'linear_trend',
}
PRIORS = ['uniform', 'weak']

HYPER_NAMES = [
    'mu_theta', 'sigma_theta', 'mu_b', 'sigma_b', 'rho',
    'alpha', 'ell', 'period', 'a', 'b_slope',
]
LOCATION_HYPERS = {'mu_theta', 'mu_b', 'a', 'b_slope'}
SCALE_HYPERS = {'sigma_theta', 'sigma_b'}
TRANSFORMS = {
    'sigma_theta': 'log', 'sigma_b': 'log',
    'alpha': 'log', 'ell': 'log', 'period': 'log',
    'rho': 'atanh',
}

# GP hyperprior defaults; not taken from data
KERNEL_DEFAULTS = {
    'alpha_scale': 0.2,
    'ell_median': 50.0,
    'ell_log_sd': 1.0,
    'period_median': 30.0,
    'period_log_sd': 1.0,
}
TREND_DEFAULTS = {
    'intercept_scale': 1.0,
    'slope_scale': 1.0,
}

# prior is chosen as weak below this many studies when not set
WEAK_PRIOR_BELOW = 15

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
LOG_2 = math.log(2)


def class_from_str(variant):
    """ Model class for a variant name like 'no-pool-theta' (class NoPoolTheta). """
    if variant not in VARIANTS:
        raise ValidationError(f"unknown model variant {variant!r}, choose from {list(VARIANTS)}")
    module = import_module('sham_meta.models.' + VARIANTS[variant])
    class_name = "".join([s.capitalize() for s in variant.split('-')])
    return getattr(module, class_name)


class ModelSpec:
    """ Which model variant to fit, with prior choice and variant settings.

    :param obj: JSON-like dict with optional keys variant, prior, fixed, kernel, trend
    :type obj: dict
    :raises ValidationError: on unknown variant, prior or schema version
    """

    def __init__(self, obj=None):
        obj = obj or {}
        util.check_schema_version(obj)
        optional_keys = [
            ('variant', str, 'normal-default'),
            ('prior', str, None),
            ('fixed', dict, {}),
            ('kernel', dict, {}),
            ('trend', dict, {}),
        ]
        util.set_attr_from_dict(obj, self, [], optional_keys)
        if self.variant not in VARIANTS:
            raise ValidationError(
                f"variant: unknown model variant {self.variant!r}, choose from {list(VARIANTS)}")
        if self.prior is not None and self.prior not in PRIORS:
            raise ValidationError(f"prior: unknown prior {self.prior!r}, choose from {PRIORS}")
        self.fixed = {k: util.to_float(v) for k, v in self.fixed.items()}
        for k in self.kernel:
            if k not in KERNEL_DEFAULTS:
                raise ValidationError(f"kernel: unknown setting {k!r}")
        for k in self.trend:
            if k not in TREND_DEFAULTS:
                raise ValidationError(f"trend: unknown setting {k!r}")
        self.kernel = dict(KERNEL_DEFAULTS, **{k: float(v) for k, v in self.kernel.items()})
        self.trend = dict(TREND_DEFAULTS, **{k: float(v) for k, v in self.trend.items()})

    @classmethod
    def from_json(cls, path):
        return cls(util.read_json_config(path))

    def resolve_prior(self, J):
        if self.prior is not None:
            return self.prior
        return 'weak' if J < WEAK_PRIOR_BELOW else 'uniform'

    def to_dict(self):
        return {
            "schema_version": 1,
            "variant": self.variant,
            "prior": self.prior,
            "fixed": dict(self.fixed),
            "kernel": dict(self.kernel),
            "trend": dict(self.trend),
        }


class HyperParams:
    """ Population-level parameters. Parameters a variant does not use stay None. """

    def __init__(self, **values):
        for name in HYPER_NAMES:
            setattr(self, name, None)
        for name, value in values.items():
            if name not in HYPER_NAMES:
                raise ValidationError(f"unknown hyperparameter {name!r}")
            if value is not None:
                setattr(self, name, float(value))
        for name in ['sigma_theta', 'sigma_b']:
            if getattr(self, name) is not None and not getattr(self, name) >= 0:
                raise ValidationError(f"{name}: scale must be non-negative")
        for name in ['alpha', 'ell', 'period']:
            if getattr(self, name) is not None and not getattr(self, name) > 0:
                raise ValidationError(f"{name}: must be positive")
        if self.rho is not None and not -1 < self.rho < 1:
            raise ValidationError("rho: must lie strictly inside (-1, 1)")

    def as_dict(self):
        return {k: getattr(self, k) for k in HYPER_NAMES if getattr(self, k) is not None}

    def __repr__(self):
        return f"HyperParams({self.as_dict()})"


class LatentState:
    """ Study-level effects theta and biases b, with their standard-normal versions. """

    def __init__(self, theta, b=None, raw_theta=None, raw_b=None):
        self.theta = np.asarray(theta, dtype=float)
        self.b = None if b is None else np.asarray(b, dtype=float)
        self.raw_theta = None if raw_theta is None else np.asarray(raw_theta, dtype=float)
        self.raw_b = None if raw_b is None else np.asarray(raw_b, dtype=float)


def _forward(name, value):
    kind = TRANSFORMS.get(name)
    if kind == 'log':
        return math.log(value)
    if kind == 'atanh':
        return math.atanh(value)
    return value


def _inverse(name, u):
    kind = TRANSFORMS.get(name)
    if kind == 'log':
        return math.exp(u)
    if kind == 'atanh':
        return math.tanh(u)
    return u


class Model:
    """ Parent class of all model variants.

    Subclasses set `hyper_names`, `latent_blocks`, `direct_blocks` and `kind` and
    implement the latent transform, its backward pass and the likelihood.

    :param spec: model specification
    :type spec: ModelSpec
    :param dataset: data to condition on
    :type dataset: Dataset
    :raises ValidationError: if dataset and variant do not fit together
    """

    # constrained hyperparameters in ParamVector order
    hyper_names = []
    # latent vectors of length J, in ParamVector order
    latent_blocks = ['theta', 'b']
    # latent blocks without hierarchy: sampled as is, flat density
    direct_blocks = []
    # record kind the variant is defined for
    kind = 'summary'
    requires_x = False

    def __init__(self, spec, dataset):
        self.spec = spec
        self.variant = spec.variant
        if dataset.kind != self.kind:
            raise ValidationError(
                f"variant {self.variant} requires {self.kind} records, got {dataset.kind}")
        if self.requires_x and not dataset.has_column("x"):
            raise ValidationError(f"variant {self.variant} requires covariate x on every record")
        self.ids = dataset.ids
        self.J = dataset.J
        self.prior = spec.resolve_prior(self.J)
        unknown = [k for k in spec.fixed if k not in self.hyper_names]
        if unknown:
            raise ValidationError(
                f"fixed: {', '.join(unknown)} not a hyperparameter of {self.variant}")
        self.fixed = {k: v for k, v in spec.fixed.items()}
        self.free_hypers = [h for h in self.hyper_names if h not in self.fixed]
        self.n_latent = self.J * len(self.latent_blocks)
        self.dim = self.n_latent + len(self.free_hypers)
        self._prepare_data(dataset)

    # --- variant hooks ---

    def _prepare_data(self, dataset):
        self.y1 = dataset.column("y1")
        self.s1 = dataset.column("s1")
        self.y0 = dataset.column("y0")
        self.s0 = dataset.column("s0")
        self._ll_const = -np.sum(np.log(self.s1)) - np.sum(np.log(self.s0)) \
            - 2 * self.J * HALF_LOG_2PI

    def _transform_latents(self, hyper, raw):
        raise NotImplementedError

    def _backprop_latents(self, hyper, raw, cache, g_theta, g_b):
        raise NotImplementedError

    def _latent_log_density_centered(self, hyper, theta, b):
        raise NotImplementedError

    def _latent_log_jacobian(self, hyper):
        raise NotImplementedError

    def _likelihood(self, theta, b):
        """ Normal measurement model y1 ~ N(theta + b, s1), y0 ~ N(b, s0). """
        r1 = (self.y1 - theta - b) / self.s1
        r0 = (self.y0 - b) / self.s0
        ll = self._ll_const - 0.5 * (np.dot(r1, r1) + np.dot(r0, r0))
        g_theta = r1 / self.s1
        g_b = g_theta + r0 / self.s0
        return ll, g_theta, g_b

    # --- parameter layout ---

    def names(self):
        """ Name of every ParamVector coordinate. """
        names = []
        for block in self.latent_blocks:
            prefix = block if block in self.direct_blocks else "raw_" + block
            names += [f"{prefix}[{j}]" for j in range(self.J)]
        for h in self.free_hypers:
            kind = TRANSFORMS.get(h)
            names.append(f"{kind}_{h}" if kind else h)
        return names

    def output_names(self):
        """ Names of constrained draws: free hyperparameters, then theta[j] and b[j]. """
        names = list(self.free_hypers)
        for block in self.latent_blocks:
            names += [f"{block}[{j}]" for j in range(self.J)]
        return names

    def _split(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dim,):
            raise ModelError(
                f"parameter vector has shape {p.shape}, {self.variant} needs ({self.dim},)")
        raw = {block: p[i * self.J:(i + 1) * self.J] for i, block in enumerate(self.latent_blocks)}
        hyper = dict(self.fixed)
        for name, u in zip(self.free_hypers, p[self.n_latent:]):
            hyper[name] = _inverse(name, u)
        return hyper, raw

    def unpack(self, p):
        """ Split a ParamVector into constrained hyperparameters and latent state.

        :param p: unconstrained parameter vector
        :type p: numpy.ndarray
        :return: hyperparameters (fixed ones included) and latents
        :rtype: tuple(HyperParams, LatentState)
        """

        hyper, raw = self._split(p)
        theta, b, _ = self._transform_latents(hyper, raw)
        raw_theta = None if 'theta' in self.direct_blocks else raw.get('theta')
        raw_b = None if 'b' in self.direct_blocks else raw.get('b')
        return HyperParams(**hyper), LatentState(theta, b, raw_theta, raw_b)

    def pack(self, hyper, latent):
        """ Inverse of :meth:`unpack`. Uses the raw latents of hierarchical blocks. """
        values = hyper.as_dict() if isinstance(hyper, HyperParams) else dict(hyper)
        p = np.empty(self.dim)
        for i, block in enumerate(self.latent_blocks):
            if block in self.direct_blocks:
                v = getattr(latent, block)
            else:
                v = getattr(latent, "raw_" + block)
            if v is None or len(v) != self.J:
                raise ModelError(f"latent state needs {block} of length {self.J}")
            p[i * self.J:(i + 1) * self.J] = v
        for k, name in enumerate(self.free_hypers):
            if values.get(name) is None:
                raise ModelError(f"hyperparameter {name} missing")
            p[self.n_latent + k] = _forward(name, values[name])
        return p

    def constrained(self, p):
        """ Output vector in the order of :meth:`output_names`. """
        hyper, raw = self._split(p)
        theta, b, _ = self._transform_latents(hyper, raw)
        parts = [[hyper[h] for h in self.free_hypers], theta]
        if b is not None:
            parts.append(b)
        return np.concatenate(parts)

    def initial_point(self, rng):
        """ Raw latents from normal(0, 0.1), unconstrained hyperparameters from uniform(-1, 1). """
        p = np.empty(self.dim)
        p[:self.n_latent] = rng.normal(0, 0.1, self.n_latent)
        p[self.n_latent:] = rng.uniform(-1, 1, self.dim - self.n_latent)
        return p

    # --- densities ---

    def log_hyperprior(self, hyper):
        """ Log prior of the free hyperparameters on the constrained scale and its gradient.

        uniform: flat on locations and scales; weak: normal(0, 1) on locations,
        half-normal(0, 1) on scales. GP parameters always get their kernel prior,
        rho is always flat on (-1, 1).
        """

        lp = 0.0
        grads = {}
        kernel = self.spec.kernel
        for name in self.free_hypers:
            v = hyper[name]
            g = 0.0
            if name in LOCATION_HYPERS:
                if self.prior == 'weak':
                    scale = 1.0
                    if name == 'a':
                        scale = self.spec.trend['intercept_scale']
                    elif name == 'b_slope':
                        scale = self.spec.trend['slope_scale']
                    lp += -HALF_LOG_2PI - math.log(scale) - 0.5 * (v / scale) ** 2
                    g = -v / scale ** 2
            elif name in SCALE_HYPERS:
                if self.prior == 'weak':
                    lp += LOG_2 - HALF_LOG_2PI - 0.5 * v ** 2
                    g = -v
            elif name == 'alpha':
                scale = kernel['alpha_scale']
                lp += LOG_2 - HALF_LOG_2PI - math.log(scale) - 0.5 * (v / scale) ** 2
                g = -v / scale ** 2
            elif name in ('ell', 'period'):
                median = kernel[name + '_median']
                log_sd = kernel[name + '_log_sd']
                z = (math.log(v) - math.log(median)) / log_sd
                lp += -math.log(v) - HALF_LOG_2PI - math.log(log_sd) - 0.5 * z ** 2
                g = -1 / v - z / (log_sd * v)
            grads[name] = g
        return lp, grads

    def log_jacobian(self, hyper):
        """ Non-centering and unconstraining log Jacobian at constrained hyperparameters. """
        values = hyper.as_dict() if isinstance(hyper, HyperParams) else dict(hyper)
        values = dict(self.fixed, **values)
        lj = self._latent_log_jacobian(values)
        for name in self.free_hypers:
            kind = TRANSFORMS.get(name)
            if kind == 'log':
                lj += math.log(values[name])
            elif kind == 'atanh':
                lj += math.log1p(-values[name] ** 2)
        return lj

    def log_likelihood(self, theta, b=None):
        return self._likelihood(np.asarray(theta, dtype=float),
                                None if b is None else np.asarray(b, dtype=float))[0]

    def latent_log_density_centered(self, hyper, theta, b=None):
        values = hyper.as_dict() if isinstance(hyper, HyperParams) else dict(hyper)
        values = dict(self.fixed, **values)
        return self._latent_log_density_centered(values, np.asarray(theta, dtype=float),
                                                 None if b is None else np.asarray(b, dtype=float))

    def log_density_centered(self, hyper, latent):
        """ Density in (hyperparameters, theta, b) without any change-of-variable terms.

        log_posterior(pack(hyper, latent)) equals this plus :meth:`log_jacobian`.
        """

        values = hyper.as_dict() if isinstance(hyper, HyperParams) else dict(hyper)
        values = dict(self.fixed, **values)
        return (self.log_likelihood(latent.theta, latent.b)
                + self.latent_log_density_centered(values, latent.theta, latent.b)
                + self.log_hyperprior(values)[0])

    def log_prob_and_grad(self, p):
        """ Log posterior on the unconstrained scale and its gradient.

        :param p: ParamVector
        :type p: numpy.ndarray
        :raises ModelError: on dimension mismatch or a singular kernel matrix
        :return: log density and gradient
        :rtype: tuple(float, numpy.ndarray)
        """

        hyper, raw = self._split(p)
        theta, b, cache = self._transform_latents(hyper, raw)
        lp, g_theta, g_b = self._likelihood(theta, b)
        g_hyper, g_raw = self._backprop_latents(hyper, raw, cache, g_theta, g_b)

        grad = np.empty(self.dim)
        for i, block in enumerate(self.latent_blocks):
            g = g_raw[block]
            if block not in self.direct_blocks:
                # standard normal density of the raw latents
                z = raw[block]
                lp += -0.5 * np.dot(z, z) - self.J * HALF_LOG_2PI
                g = g - z
            grad[i * self.J:(i + 1) * self.J] = g

        prior_lp, prior_g = self.log_hyperprior(hyper)
        lp += prior_lp
        for k, name in enumerate(self.free_hypers):
            v = hyper[name]
            g = g_hyper.get(name, 0.0) + prior_g[name]
            kind = TRANSFORMS.get(name)
            if kind == 'log':
                lp += math.log(v) if v > 0 else -math.inf
                g = g * v + 1
            elif kind == 'atanh':
                lp += math.log1p(-v * v) if abs(v) < 1 else -math.inf
                g = g * (1 - v * v) - 2 * v
            grad[self.n_latent + k] = g
        return float(lp), grad

    def log_posterior(self, p):
        p = np.asarray(p, dtype=float)
        if not np.all(np.isfinite(p)):
            raise ModelError("parameter vector contains non-finite values")
        return self.log_prob_and_grad(p)[0]

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        if not np.all(np.isfinite(p)):
            raise ModelError("parameter vector contains non-finite values")
        return self.log_prob_and_grad(p)[1]

    # --- prior simulation ---

    def sample_prior(self, rng):
        """ Draw hyperparameters and latents from the prior (weak prior only).

        :param rng: random generator
        :type rng: numpy.random.Generator
        :raises ValidationError: if the prior is improper
        :return: hyperparameters and latents
        :rtype: tuple(HyperParams, LatentState)
        """

        if self.direct_blocks:
            raise ValidationError(f"{self.variant} has flat latent densities, can not sample")
        kernel = self.spec.kernel
        p = np.empty(self.dim)
        p[:self.n_latent] = rng.standard_normal(self.n_latent)
        for k, name in enumerate(self.free_hypers):
            if name in LOCATION_HYPERS or name in SCALE_HYPERS:
                if self.prior != 'weak':
                    raise ValidationError("prior draws need the weak prior")
            if name in LOCATION_HYPERS:
                scale = 1.0
                if name == 'a':
                    scale = self.spec.trend['intercept_scale']
                elif name == 'b_slope':
                    scale = self.spec.trend['slope_scale']
                v = rng.normal(0, scale)
            elif name in SCALE_HYPERS:
                v = abs(rng.standard_normal())
            elif name == 'rho':
                v = rng.uniform(-1, 1)
            elif name == 'alpha':
                v = abs(rng.normal(0, kernel['alpha_scale']))
            else:
                v = math.exp(rng.normal(math.log(kernel[name + '_median']),
                                        kernel[name + '_log_sd']))
            p[self.n_latent + k] = _forward(name, v)
        return self.unpack(p)


def build_model(spec, dataset):
    """ Instantiate the model class of `spec.variant` for `dataset`. """
    return class_from_str(spec.variant)(spec, dataset)


def log_posterior(spec, dataset, p):
    """ Unnormalized log posterior of ParamVector `p` on the unconstrained scale. """
    return build_model(spec, dataset).log_posterior(p)


def gradient(spec, dataset, p):
    """ Gradient of :func:`log_posterior` with respect to every coordinate of `p`. """
    return build_model(spec, dataset).gradient(p)
