""" Split R-hat, bulk effective sample size and Monte Carlo standard error.

All functions take draws of one parameter as an array of shape (chains, draws).
"""

import math

import arviz as az
import numpy as np

from sham_meta.util import ValidationError


def _check_shape(ary):
    ary = np.asarray(ary, dtype=float)
    if ary.ndim != 2:
        raise ValidationError("draws must have shape (chains, draws)")
    n_chain, n_draw = ary.shape
    if n_chain < 2 or n_draw < 4:
        raise ValidationError("diagnostics need at least 2 chains with 4 draws each")
    return ary


def _degenerate(ary):
    # any constant split half
    half = ary.shape[1] // 2
    halves = np.vstack((ary[:, :half], ary[:, -half:]))
    return not np.all(np.isfinite(ary)) or np.any(np.ptp(halves, axis=1) == 0)


def rhat(ary):
    """ Largest of the rank-normalized split R-hat (bulk and folded tail)
    and the classical split R-hat on the raw draws.

    Rank normalization bounds R-hat for chains stuck in well separated modes,
    the classical version does not.

    :param ary: draws (chains x draws)
    :type ary: numpy.ndarray
    :raises ValidationError: with fewer than 2 chains or 4 draws
    :return: R-hat, +inf if any split chain is constant
    :rtype: float
    """

    ary = _check_shape(ary)
    if _degenerate(ary):
        return math.inf
    ranked = float(az.rhat(ary, method="rank"))
    classical = float(az.rhat(ary, method="split"))
    return max(ranked, classical)


def ess_bulk(ary):
    """ Bulk effective sample size of rank-normalized split chains.

    Capped at the total number of draws.

    :param ary: draws (chains x draws)
    :type ary: numpy.ndarray
    :return: ESS, NaN for degenerate draws
    :rtype: float
    """

    ary = _check_shape(ary)
    if _degenerate(ary):
        return math.nan
    ess = float(az.ess(ary, method="bulk"))
    return min(ess, float(ary.size))


def mcse_mean(ary):
    """ Monte Carlo standard error of the mean: sd / sqrt(ESS). """
    ary = np.asarray(ary, dtype=float)
    ess = ess_bulk(ary)
    if not ess > 0:
        return math.nan
    return float(np.std(ary, ddof=1) / math.sqrt(ess))
