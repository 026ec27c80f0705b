import numpy as np
from scipy import special

from sham_meta.models.normal_default import NormalDefault


class Binomial(NormalDefault):
    """ Event counts on the logit scale.

    | n1_j ~ binomial(N1_j, inv_logit(theta_j + b_j)), n0_j ~ binomial(N0_j, inv_logit(b_j))

    Hierarchies as in the normal model.
    """

    kind = 'count'

    def _prepare_data(self, dataset):
        self.n1 = dataset.column("n1")
        self.N1 = dataset.column("N1")
        self.n0 = dataset.column("n0")
        self.N0 = dataset.column("N0")
        self._ll_const = float(np.sum(self._log_binom(self.N1, self.n1))
                               + np.sum(self._log_binom(self.N0, self.n0)))

    @staticmethod
    def _log_binom(N, n):
        return special.gammaln(N + 1) - special.gammaln(n + 1) - special.gammaln(N - n + 1)

    def _likelihood(self, theta, b):
        eta1 = theta + b
        eta0 = b
        ll = self._ll_const \
            + np.dot(self.n1, eta1) - np.dot(self.N1, np.logaddexp(0, eta1)) \
            + np.dot(self.n0, eta0) - np.dot(self.N0, np.logaddexp(0, eta0))
        g1 = self.n1 - self.N1 * special.expit(eta1)
        g0 = self.n0 - self.N0 * special.expit(eta0)
        return ll, g1, g1 + g0
