""" No-pooling limits: flat densities instead of a hierarchy (sigma -> inf). """

import numpy as np

from sham_meta.models.normal_default import NormalDefault


class NoPoolTheta(NormalDefault):
    """ Effects estimated separately per study, biases partially pooled. """

    hyper_names = ['mu_b', 'sigma_b']
    direct_blocks = ['theta']

    def _theta(self, hyper, z):
        return z, None

    def _theta_backprop(self, hyper, z, cache, g, g_hyper):
        return g

    def _theta_log_density(self, hyper, theta):
        return 0.0

    def _theta_log_jacobian(self, hyper):
        return 0.0


class NoPoolBoth(NoPoolTheta):
    """ Neither effects nor biases pooled. """

    hyper_names = []
    direct_blocks = ['theta', 'b']

    def _b(self, hyper, z):
        return z

    def _b_backprop(self, hyper, z, g, g_hyper):
        return np.asarray(g)

    def _b_log_density(self, hyper, b):
        return 0.0

    def _b_log_jacobian(self, hyper):
        return 0.0
