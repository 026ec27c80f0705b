""" Covariance functions over the study covariate x. """

import math

import numpy as np

from sham_meta.util import ValidationError

KERNELS = ["se", "periodic"]
JITTER = 1e-8


def _check_positive(**params):
    for name, value in params.items():
        if value is None or not math.isfinite(value) or value <= 0:
            raise ValidationError(f"{name}: kernel parameter must be positive, got {value}")


def base_kernel(kind, x, ell, period=None):
    """ Unit-amplitude kernel without jitter and its derivatives.

    :param kind: se or periodic
    :type kind: str
    :param x: covariate per study
    :type x: numpy.ndarray
    :param ell: length scale
    :type ell: float
    :param period: period (periodic kernel only)
    :type period: float
    :return: kernel matrix k0 and dict of dk0/dparam for ell (and period)
    :rtype: tuple
    """

    x = np.asarray(x, dtype=float)
    d = np.abs(x[:, None] - x[None, :])
    if kind == "se":
        k0 = np.exp(-d ** 2 / (2 * ell ** 2))
        grads = {"ell": k0 * d ** 2 / ell ** 3}
    elif kind == "periodic":
        s = np.sin(math.pi * d / period)
        k0 = np.exp(-2 * s ** 2 / ell ** 2)
        grads = {
            "ell": k0 * 4 * s ** 2 / ell ** 3,
            "period": k0 * 2 * math.pi * d * np.sin(2 * math.pi * d / period)
            / (ell ** 2 * period ** 2),
        }
    else:
        raise ValidationError(f"unknown kernel {kind!r}, choose from {KERNELS}")
    return k0, grads


def kernel_matrix(kind, x, alpha, ell, period=None):
    """ Covariance matrix alpha^2 * (k(x_i, x_j) + 1e-8 * delta_ij).

    | se: k = exp(-(x_i - x_j)^2 / (2 ell^2))
    | periodic: k = exp(-2 sin^2(pi |x_i - x_j| / period) / ell^2)

    :param kind: se or periodic
    :type kind: str
    :param x: finite covariate per study
    :type x: array-like
    :param alpha: amplitude
    :type alpha: float
    :param ell: length scale
    :type ell: float
    :param period: period, required for the periodic kernel
    :type period: float
    :raises ValidationError: on non-positive parameters or non-finite x
    :return: symmetric positive definite matrix
    :rtype: numpy.ndarray
    """

    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError("x: covariate must be finite")
    _check_positive(alpha=alpha, ell=ell)
    if kind == "periodic":
        _check_positive(period=period)
    k0, _ = base_kernel(kind, x, ell, period)
    return alpha ** 2 * (k0 + JITTER * np.eye(len(x)))
