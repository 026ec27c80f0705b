import math

import numpy as np
import pytest

from sham_meta import convergence
from sham_meta.util import ValidationError


class TestRhat:

    def test_separated_chains(self):
        rng = np.random.default_rng(0)
        draws = np.vstack([rng.normal(0, 1, 1000), rng.normal(10, 1, 1000)])
        assert convergence.rhat(draws) > 2

    def test_separated_chains_exceed_rank_bound(self):
        # rank normalization alone stays below 2 for two far apart modes
        rng = np.random.default_rng(0)
        draws = np.vstack([rng.normal(0, 1, 1000), rng.normal(100, 1, 1000)])
        assert convergence.rhat(draws) > 5

    def test_identical_streams(self):
        rng = np.random.default_rng(1)
        chain = rng.normal(0, 1, 1000)
        assert convergence.rhat(np.vstack([chain, chain])) == pytest.approx(1, abs=0.01)

    def test_independent_chains(self):
        rng = np.random.default_rng(2)
        assert convergence.rhat(rng.normal(0, 1, (4, 1000))) < 1.01

    def test_constant_chain(self):
        draws = np.vstack([np.ones(100), np.random.default_rng(3).normal(size=100)])
        assert convergence.rhat(draws) == math.inf

    def test_shape(self):
        with pytest.raises(ValidationError):
            convergence.rhat(np.zeros((1, 100)))
        with pytest.raises(ValidationError):
            convergence.rhat(np.zeros((2, 3)))


class TestEss:

    def test_independent_draws(self):
        rng = np.random.default_rng(4)
        ess = convergence.ess_bulk(rng.normal(0, 1, (4, 1000)))
        assert 3000 < ess <= 4000

    def test_autocorrelated(self):
        # AR(1) with coefficient 0.9: ESS about n * (1 - 0.9) / (1 + 0.9)
        rng = np.random.default_rng(5)
        draws = np.empty((4, 2000))
        for c in range(4):
            x = 0.0
            for i in range(2000):
                x = 0.9 * x + rng.normal()
                draws[c, i] = x
        ess = convergence.ess_bulk(draws)
        assert 250 < ess < 700

    def test_degenerate(self):
        assert math.isnan(convergence.ess_bulk(np.ones((2, 50))))
        assert math.isnan(convergence.mcse_mean(np.ones((2, 50))))

    def test_mcse(self):
        rng = np.random.default_rng(6)
        draws = rng.normal(0, 2, (4, 1000))
        assert convergence.mcse_mean(draws) == pytest.approx(2 / math.sqrt(4000), rel=0.1)
