import math

import numpy as np
from scipy import stats

from sham_meta.model import Model


class NormalDefault(Model):
    """ Normal measurement model with independent normal hierarchies for effects and biases.

    | y1_j ~ normal(theta_j + b_j, s1_j), y0_j ~ normal(b_j, s0_j)
    | theta_j ~ normal(mu_theta, sigma_theta), b_j ~ normal(mu_b, sigma_b)

    Subclasses replace the theta or b part through the `_theta*` / `_b*` hooks.
    """

    hyper_names = ['mu_theta', 'sigma_theta', 'mu_b', 'sigma_b']

    def _transform_latents(self, hyper, raw):
        theta, cache = self._theta(hyper, raw['theta'])
        b = self._b(hyper, raw['b'])
        return theta, b, cache

    def _backprop_latents(self, hyper, raw, cache, g_theta, g_b):
        g_hyper = {}
        g_raw = {
            'theta': self._theta_backprop(hyper, raw['theta'], cache, g_theta, g_hyper),
            'b': self._b_backprop(hyper, raw['b'], g_b, g_hyper),
        }
        return g_hyper, g_raw

    def _latent_log_density_centered(self, hyper, theta, b):
        return self._theta_log_density(hyper, theta) + self._b_log_density(hyper, b)

    def _latent_log_jacobian(self, hyper):
        return self._theta_log_jacobian(hyper) + self._b_log_jacobian(hyper)

    # theta hierarchy

    def _theta(self, hyper, z):
        return hyper['mu_theta'] + hyper['sigma_theta'] * z, None

    def _theta_backprop(self, hyper, z, cache, g, g_hyper):
        g_hyper['mu_theta'] = np.sum(g)
        g_hyper['sigma_theta'] = np.dot(g, z)
        return g * hyper['sigma_theta']

    def _theta_log_density(self, hyper, theta):
        return np.sum(stats.norm.logpdf(theta, hyper['mu_theta'], hyper['sigma_theta']))

    def _theta_log_jacobian(self, hyper):
        return self.J * math.log(hyper['sigma_theta'])

    # bias hierarchy

    def _b(self, hyper, z):
        return hyper['mu_b'] + hyper['sigma_b'] * z

    def _b_backprop(self, hyper, z, g, g_hyper):
        g_hyper['mu_b'] = np.sum(g)
        g_hyper['sigma_b'] = np.dot(g, z)
        return g * hyper['sigma_b']

    def _b_log_density(self, hyper, b):
        return np.sum(stats.norm.logpdf(b, hyper['mu_b'], hyper['sigma_b']))

    def _b_log_jacobian(self, hyper):
        return self.J * math.log(hyper['sigma_b'])
