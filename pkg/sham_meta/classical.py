""" Exposed-only and difference estimators, significance bands and random-effects pooling. """

import math

import numpy as np
from scipy import stats

from sham_meta.util import ValidationError

METHODS = ["exposed-only", "difference", "linear-adjust", "bayes"]
BANDS = ["p<0.01", "0.01<=p<0.05", "p>=0.05"]
Z_95 = stats.norm.ppf(0.975)


class EstimateSet:
    """ Per-study point estimates with standard errors, tagged by method.

    `df` holds per-study degrees of freedom for t-based classification (None if sample
    sizes are unknown). `low` / `high` optionally carry interval limits that take
    precedence over estimate +- 1.96 se when deciding significance.
    """

    def __init__(self, method, ids, estimate, se, df=None, low=None, high=None):
        if method not in METHODS:
            raise ValidationError(f"unknown estimation method {method!r}")
        self.method = method
        self.ids = list(ids)
        self.estimate = np.asarray(estimate, dtype=float)
        self.se = np.asarray(se, dtype=float)
        self.df = None if df is None else [None if v is None else int(v) for v in df]
        self.low = None if low is None else np.asarray(low, dtype=float)
        self.high = None if high is None else np.asarray(high, dtype=float)
        if not len(self.ids) == len(self.estimate) == len(self.se):
            raise ValidationError("estimate set needs one estimate and se per study")
        if np.any(~(self.se > 0)):
            raise ValidationError("se: standard error must be positive")

    def __len__(self):
        return len(self.ids)

    def rows(self):
        return [
            {"id": i, "estimate": float(e), "se": float(s)}
            for i, e, s in zip(self.ids, self.estimate, self.se)
        ]


class SignificanceTable:
    """ Test statistic, two-sided p-value and band per study. """

    def __init__(self, ids, stat, p, dist):
        self.ids = list(ids)
        self.stat = np.asarray(stat, dtype=float)
        self.p = np.asarray(p, dtype=float)
        self.dist = dist
        self.band = [significance_band(v) for v in self.p]

    def rows(self):
        return [
            {"id": i, "stat": float(z), "p": float(p), "band": b}
            for i, z, p, b in zip(self.ids, self.stat, self.p, self.band)
        ]


class PooledEstimate:
    """ Result of a random-effects pooling. """

    def __init__(self, estimate, se, tau2, q, i2):
        self.estimate = estimate
        self.se = se
        self.tau2 = tau2
        self.q = q
        self.i2 = i2
        self.ci_low = estimate - Z_95 * se
        self.ci_high = estimate + Z_95 * se

    def to_dict(self):
        return {k: float(getattr(self, k))
                for k in ["estimate", "se", "tau2", "q", "i2", "ci_low", "ci_high"]}


def significance_band(p):
    """ Half-open bands: p < 0.01, 0.01 <= p < 0.05, p >= 0.05. """
    if p < 0.01:
        return BANDS[0]
    if p < 0.05:
        return BANDS[1]
    return BANDS[2]


def exposed_only(d):
    """ Use the active-arm estimate and its standard error, ignoring the sham arm.

    :param d: summary dataset
    :type d: Dataset
    :return: estimates with df = n1 - 1 where known
    :rtype: EstimateSet
    """

    d.require_kind("summary")
    df = [None if r.n1 is None else r.n1 - 1 for r in d.records]
    return EstimateSet("exposed-only", d.ids, d.column("y1"), d.column("s1"), df=df)


def difference(d):
    """ Active minus sham estimate with se = sqrt(s1^2 + s0^2).

    :param d: summary dataset
    :type d: Dataset
    :return: estimates with df = n1 + n0 - 2 where known
    :rtype: EstimateSet
    """

    d.require_kind("summary")
    df = [None if r.n1 is None or r.n0 is None else r.n1 + r.n0 - 2 for r in d.records]
    y1, y0 = d.column("y1"), d.column("y0")
    se = np.hypot(d.column("s1"), d.column("s0"))
    return EstimateSet("difference", d.ids, y1 - y0, se, df=df)


def classify_significance(e, dist="normal"):
    """ Two-sided p-values of estimate / se and their significance bands.

    :param e: estimates
    :type e: EstimateSet
    :param dist: reference distribution, normal or t (with the estimate set's df)
    :type dist: str
    :raises ValidationError: if t is requested without degrees of freedom for every study
    :return: statistic, p-value and band per study
    :rtype: SignificanceTable
    """

    z = e.estimate / e.se
    if dist == "normal":
        p = 2 * stats.norm.sf(np.abs(z))
    elif dist == "t":
        if e.df is None or any(v is None for v in e.df):
            raise ValidationError("t reference requires sample sizes n1/n0 for every study")
        p = 2 * stats.t.sf(np.abs(z), np.asarray(e.df, dtype=float))
    else:
        raise ValidationError(f"unknown reference distribution {dist!r}")
    return SignificanceTable(e.ids, z, p, dist)


def dersimonian_laird(e):
    """ DerSimonian-Laird random-effects pooled estimate.

    :param e: per-study estimates
    :type e: EstimateSet
    :return: pooled estimate with between-study variance and heterogeneity
    :rtype: PooledEstimate
    """

    y = e.estimate
    w = 1 / e.se ** 2
    J = len(y)
    y_fixed = np.sum(w * y) / np.sum(w)
    q = float(np.sum(w * (y - y_fixed) ** 2))
    denom = np.sum(w) - np.sum(w ** 2) / np.sum(w)
    tau2 = max(0.0, (q - (J - 1)) / denom) if denom > 0 else 0.0
    w_star = 1 / (e.se ** 2 + tau2)
    estimate = float(np.sum(w_star * y) / np.sum(w_star))
    se = float(1 / math.sqrt(np.sum(w_star)))
    i2 = max(0.0, (q - (J - 1)) / q) if q > 0 else 0.0
    return PooledEstimate(estimate, se, tau2, q, i2)


def confidence_intervals(e, level=0.95, transform="identity"):
    """ Normal intervals per study, optionally exponentiated (odds ratios).

    :param e: estimates
    :type e: EstimateSet
    :param level: coverage in (0, 1)
    :type level: float
    :param transform: identity or exp
    :type transform: str
    :return: rows with id, estimate, low, high
    :rtype: list
    """

    if not 0 < level < 1:
        raise ValidationError(f"interval level must lie in (0, 1), got {level}")
    z = stats.norm.ppf(0.5 + level / 2)
    est, low, high = e.estimate, e.estimate - z * e.se, e.estimate + z * e.se
    if transform == "exp":
        est, low, high = np.exp(est), np.exp(low), np.exp(high)
    elif transform != "identity":
        raise ValidationError(f"unknown interval transform {transform!r}")
    return [
        {"id": i, "estimate": float(a), "low": float(b), "high": float(c)}
        for i, a, b, c in zip(e.ids, est, low, high)
    ]
