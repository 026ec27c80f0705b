""" Closed-form partial adjustment for sham bias.

The sham measurement y0 is shrunk toward the population bias mean mu_b with weight
lambda = sigma_b^2 / (sigma_b^2 + s0^2) and the shrunken bias is subtracted from y1.
sigma_b = 0 gives the exposed-only estimate, sigma_b = inf the difference estimate.
"""

import math

import numpy as np

from sham_meta import util
from sham_meta.classical import EstimateSet
from sham_meta.util import ValidationError


class AdjustmentResult:
    """ Per-study shrinkage weight, bias posterior and adjusted effect. """

    def __init__(self, ids, lam, b_hat, s_post, theta_hat, se, mu_b, sigma_b):
        self.ids = list(ids)
        self.lam = np.asarray(lam, dtype=float)
        self.b_hat = np.asarray(b_hat, dtype=float)
        self.s_post = np.asarray(s_post, dtype=float)
        self.theta_hat = np.asarray(theta_hat, dtype=float)
        self.se = np.asarray(se, dtype=float)
        self.mu_b = mu_b
        self.sigma_b = sigma_b

    def rows(self):
        return [
            {"id": i, "lambda": float(lam), "b_hat": float(b), "s_post": float(s),
             "theta_hat": float(t), "se": float(se)}
            for i, lam, b, s, t, se in zip(
                self.ids, self.lam, self.b_hat, self.s_post, self.theta_hat, self.se)
        ]

    def to_estimate_set(self):
        return EstimateSet("linear-adjust", self.ids, self.theta_hat, self.se)


def _check_bias_prior(mu_b, sigma_b):
    mu_b = util.to_float(mu_b)
    sigma_b = util.to_float(sigma_b)
    if not math.isfinite(mu_b):
        raise ValidationError(f"mu_b must be finite, got {mu_b}")
    if math.isnan(sigma_b) or sigma_b < 0:
        raise ValidationError(f"sigma_b must be non-negative, got {sigma_b}")
    return mu_b, sigma_b


def shrinkage_weight(s0, sigma_b):
    """ lambda = sigma_b^2 / (sigma_b^2 + s0^2), exactly 0 and 1 at the limits. """
    s0 = np.asarray(s0, dtype=float)
    if sigma_b == 0:
        return np.zeros_like(s0)
    if math.isinf(sigma_b):
        return np.ones_like(s0)
    return sigma_b ** 2 / (sigma_b ** 2 + s0 ** 2)


def posterior_bias(y0, s0, mu_b, sigma_b):
    """ Posterior of the bias b given the sham measurement and a normal(mu_b, sigma_b) prior.

    Works element-wise on arrays.

    :param y0: sham estimate(s)
    :type y0: float or numpy.ndarray
    :param s0: sham standard error(s), positive
    :type s0: float or numpy.ndarray
    :param mu_b: prior mean of the bias
    :type mu_b: float
    :param sigma_b: prior sd of the bias, 0 <= sigma_b <= inf
    :type sigma_b: float
    :raises ValidationError: if sigma_b is negative or NaN
    :return: posterior mean b_hat and sd s_post
    :rtype: tuple
    """

    mu_b, sigma_b = _check_bias_prior(mu_b, sigma_b)
    y0 = np.asarray(y0, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    if sigma_b == 0:
        b_hat = np.full_like(y0, mu_b)
        s_post = np.zeros_like(s0)
    elif math.isinf(sigma_b):
        b_hat = y0.copy()
        s_post = s0.copy()
    else:
        lam = shrinkage_weight(s0, sigma_b)
        b_hat = mu_b + lam * (y0 - mu_b)
        s_post = s0 * sigma_b / np.hypot(sigma_b, s0)
    if b_hat.ndim == 0:
        return float(b_hat), float(s_post)
    return b_hat, s_post


def linear_adjust(d, mu_b, sigma_b):
    """ Adjust every study's active estimate by its shrunken sham measurement.

    :param d: summary dataset
    :type d: Dataset
    :param mu_b: bias mean
    :type mu_b: float
    :param sigma_b: bias sd, inf accepted
    :type sigma_b: float
    :raises ValidationError: if sigma_b is negative or NaN
    :return: adjustment per study
    :rtype: AdjustmentResult
    """

    d.require_kind("summary")
    mu_b, sigma_b = _check_bias_prior(mu_b, sigma_b)
    y1, s1 = d.column("y1"), d.column("s1")
    y0, s0 = d.column("y0"), d.column("s0")
    lam = shrinkage_weight(s0, sigma_b)
    b_hat, s_post = posterior_bias(y0, s0, mu_b, sigma_b)
    b_hat, s_post = np.atleast_1d(b_hat), np.atleast_1d(s_post)
    theta_hat = y1 - b_hat
    se = np.hypot(s1, s_post)
    return AdjustmentResult(d.ids, lam, b_hat, s_post, theta_hat, se, mu_b, sigma_b)
