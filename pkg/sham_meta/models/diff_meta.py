import math

import numpy as np
from scipy import stats

from sham_meta.model import HALF_LOG_2PI, Model


class DiffMeta(Model):
    """ Meta-analysis of differences: y1_j - y0_j ~ normal(theta_j, sqrt(s1_j^2 + s0_j^2)).

    No bias latents; theta_j ~ normal(mu_theta, sigma_theta).
    """

    hyper_names = ['mu_theta', 'sigma_theta']
    latent_blocks = ['theta']

    def _prepare_data(self, dataset):
        self.d = dataset.column("y1") - dataset.column("y0")
        self.sd = np.hypot(dataset.column("s1"), dataset.column("s0"))
        self._ll_const = -np.sum(np.log(self.sd)) - self.J * HALF_LOG_2PI

    def _likelihood(self, theta, b):
        r = (self.d - theta) / self.sd
        return self._ll_const - 0.5 * np.dot(r, r), r / self.sd, None

    def _transform_latents(self, hyper, raw):
        return hyper['mu_theta'] + hyper['sigma_theta'] * raw['theta'], None, None

    def _backprop_latents(self, hyper, raw, cache, g_theta, g_b):
        g_hyper = {
            'mu_theta': np.sum(g_theta),
            'sigma_theta': np.dot(g_theta, raw['theta']),
        }
        return g_hyper, {'theta': g_theta * hyper['sigma_theta']}

    def _latent_log_density_centered(self, hyper, theta, b):
        return np.sum(stats.norm.logpdf(theta, hyper['mu_theta'], hyper['sigma_theta']))

    def _latent_log_jacobian(self, hyper):
        return self.J * math.log(hyper['sigma_theta'])
