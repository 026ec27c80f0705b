import math

import numpy as np
from scipy import stats

from sham_meta.models.normal_default import NormalDefault


class Correlated(NormalDefault):
    """ Effects and biases drawn jointly from a bivariate normal with correlation rho.

    Non-centered as theta = mu_theta + sigma_theta * z_t and
    b = mu_b + sigma_b * (rho * z_t + sqrt(1 - rho^2) * z_b).
    """

    hyper_names = ['mu_theta', 'sigma_theta', 'mu_b', 'sigma_b', 'rho']

    def _transform_latents(self, hyper, raw):
        z_t, z_b = raw['theta'], raw['b']
        rho = hyper['rho']
        c = math.sqrt(1 - rho * rho)
        theta = hyper['mu_theta'] + hyper['sigma_theta'] * z_t
        b = hyper['mu_b'] + hyper['sigma_b'] * (rho * z_t + c * z_b)
        return theta, b, c

    def _backprop_latents(self, hyper, raw, c, g_theta, g_b):
        z_t, z_b = raw['theta'], raw['b']
        rho = hyper['rho']
        sigma_b = hyper['sigma_b']
        g_hyper = {
            'mu_theta': np.sum(g_theta),
            'sigma_theta': np.dot(g_theta, z_t),
            'mu_b': np.sum(g_b),
            'sigma_b': np.dot(g_b, rho * z_t + c * z_b),
            'rho': sigma_b * np.dot(g_b, z_t - rho / c * z_b),
        }
        g_raw = {
            'theta': g_theta * hyper['sigma_theta'] + g_b * sigma_b * rho,
            'b': g_b * sigma_b * c,
        }
        return g_hyper, g_raw

    def _latent_log_density_centered(self, hyper, theta, b):
        s_t, s_b, rho = hyper['sigma_theta'], hyper['sigma_b'], hyper['rho']
        cov = [[s_t ** 2, rho * s_t * s_b], [rho * s_t * s_b, s_b ** 2]]
        points = np.column_stack([theta, b])
        return np.sum(stats.multivariate_normal.logpdf(
            points, mean=[hyper['mu_theta'], hyper['mu_b']], cov=cov))

    def _latent_log_jacobian(self, hyper):
        rho = hyper['rho']
        return self.J * (math.log(hyper['sigma_theta']) + math.log(hyper['sigma_b'])
                         + 0.5 * math.log1p(-rho * rho))
