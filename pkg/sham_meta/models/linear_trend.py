import numpy as np
from scipy import stats

from sham_meta.models.normal_default import NormalDefault


class LinearTrend(NormalDefault):
    """ Effects scattered around a line in the covariate: theta_j ~ normal(a + b_slope * x_j, sigma_theta). """

    hyper_names = ['a', 'b_slope', 'sigma_theta', 'mu_b', 'sigma_b']
    requires_x = True

    def _prepare_data(self, dataset):
        super()._prepare_data(dataset)
        self.x = dataset.column("x")

    def _theta(self, hyper, z):
        return hyper['a'] + hyper['b_slope'] * self.x + hyper['sigma_theta'] * z, None

    def _theta_backprop(self, hyper, z, cache, g, g_hyper):
        g_hyper['a'] = np.sum(g)
        g_hyper['b_slope'] = np.dot(g, self.x)
        g_hyper['sigma_theta'] = np.dot(g, z)
        return g * hyper['sigma_theta']

    def _theta_log_density(self, hyper, theta):
        mean = hyper['a'] + hyper['b_slope'] * self.x
        return np.sum(stats.norm.logpdf(theta, mean, hyper['sigma_theta']))
