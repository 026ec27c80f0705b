""" Gaussian process over the covariate for the study effects.

theta = mu_theta + alpha * L0 z with L0 the Cholesky factor of the unit-amplitude
kernel matrix (jitter included), biases as in the normal model.
"""

import math

import numpy as np
from scipy import linalg, stats

from sham_meta import kernels
from sham_meta.models.normal_default import NormalDefault
from sham_meta.util import ModelError


def _cholesky_derivative(L, dK):
    """ dL for K = L L^T: dL = L * Phi(L^-1 dK L^-T), Phi = lower triangle with half diagonal. """
    A = linalg.solve_triangular(L, dK, lower=True)
    B = linalg.solve_triangular(L, A.T, lower=True).T
    phi = np.tril(B)
    phi[np.diag_indices_from(phi)] *= 0.5
    return L @ phi


class _GaussianProcess(NormalDefault):

    hyper_names = ['mu_theta', 'alpha', 'ell', 'mu_b', 'sigma_b']
    requires_x = True
    kernel_kind = None

    def _prepare_data(self, dataset):
        super()._prepare_data(dataset)
        self.x = dataset.column("x")

    def _factor(self, hyper):
        k0, grads = kernels.base_kernel(self.kernel_kind, self.x, hyper['ell'], hyper.get('period'))
        k0 = k0 + kernels.JITTER * np.eye(self.J)
        try:
            L0 = linalg.cholesky(k0, lower=True)
        except linalg.LinAlgError:
            raise ModelError(f"{self.variant}: kernel matrix not positive definite after jitter")
        return k0, L0, grads

    def _theta(self, hyper, z):
        if not (hyper['ell'] > 0 and math.isfinite(hyper['ell'])):
            raise ModelError(f"{self.variant}: invalid length scale {hyper['ell']}")
        _, L0, grads = self._factor(hyper)
        L0z = L0 @ z
        return hyper['mu_theta'] + hyper['alpha'] * L0z, (L0, L0z, grads)

    def _theta_backprop(self, hyper, z, cache, g, g_hyper):
        L0, L0z, grads = cache
        alpha = hyper['alpha']
        g_hyper['mu_theta'] = np.sum(g)
        g_hyper['alpha'] = np.dot(g, L0z)
        for name, dK in grads.items():
            if name in self.fixed:
                continue
            dL = _cholesky_derivative(L0, dK)
            g_hyper[name] = alpha * np.dot(g, dL @ z)
        return alpha * (L0.T @ g)

    def _theta_log_density(self, hyper, theta):
        K = kernels.kernel_matrix(self.kernel_kind, self.x, hyper['alpha'], hyper['ell'],
                                  hyper.get('period'))
        mean = np.full(self.J, hyper['mu_theta'])
        return float(stats.multivariate_normal.logpdf(theta, mean=mean, cov=K))

    def _theta_log_jacobian(self, hyper):
        _, L0, _ = self._factor(hyper)
        return self.J * math.log(hyper['alpha']) + float(np.sum(np.log(np.diag(L0))))


class GpSe(_GaussianProcess):
    """ Squared-exponential kernel. """

    kernel_kind = 'se'


class GpPeriodic(_GaussianProcess):
    """ Periodic kernel with an additional period parameter. """

    hyper_names = ['mu_theta', 'alpha', 'ell', 'period', 'mu_b', 'sigma_b']
    kernel_kind = 'periodic'
