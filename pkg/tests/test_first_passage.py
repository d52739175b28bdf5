import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import erf

from sqtunnel.eigensolver import GridSpec, default_grid, numerov_bound_state
from sqtunnel.errors import DomainError, InsufficientDataError, NumericalFailure
from sqtunnel.first_passage import (
    FptEnsemble, digest, fit_exponential_tail, mfpt_high_barrier_quadrature, mfpt_profile, mfpt_quadrature,
    survival_decay_rate,
)
from sqtunnel.potentials import RosenMorseDouble
from sqtunnel.units import UnitSystem


@pytest.fixture(scope="module")
def harmonic():
    """Ground state of x^2/2: p = exp(-x^2)/sqrt(pi), drift u = -x."""
    return numerov_bound_state(lambda x: 0.5 * x * x, UnitSystem.dimensionless(), 0, GridSpec(-10, 10, 8001))


def _ou_mfpt(a, x0, x1):
    # 2 int dy C(y)/p(y), with C the probability between a and y
    lo = -1.0 if a is None else erf(a)
    return 2 * quad(lambda y: 0.5 * (erf(y) - lo) * math.sqrt(math.pi) * math.exp(y * y), x0, x1)[0]


class TestQuadrature:
    @pytest.mark.parametrize("a, x0, x1", [(None, -1.0, 0.0), (-1.0, -1.0, 0.5), (-2.0, -0.5, 1.5)])
    def test_against_closed_integral(self, harmonic, a, x0, x1):
        assert mfpt_quadrature(harmonic, a, x0, x1) == pytest.approx(_ou_mfpt(a, x0, x1), rel=1e-5)

    def test_square_well_value(self, square_state):
        assert mfpt_quadrature(square_state, -3.0, -2.0, 2.0) == pytest.approx(55.8975287, rel=1e-7)

    def test_additive_over_windows(self, square_state):
        whole = mfpt_quadrature(square_state, -3.0, -2.0, 2.0)
        parts = mfpt_quadrature(square_state, -3.0, -2.0, 0.3) + mfpt_quadrature(square_state, -3.0, 0.3, 2.0)
        assert parts == pytest.approx(whole, rel=1e-6)

    def test_profile_decreasing(self, square_state):
        prof = mfpt_profile(square_state, -3.0, 2.0, np.linspace(-2.9, 1.9, 25))
        assert np.all(np.diff(prof) < 0)

    def test_ordering_errors(self, square_state):
        with pytest.raises(DomainError):
            mfpt_quadrature(square_state, -3.0, 1.0, -1.0)
        with pytest.raises(DomainError):
            mfpt_quadrature(square_state, 0.0, -1.0, 1.0)

    def test_node_in_window(self):
        st = numerov_bound_state(lambda x: 0.5 * x * x, UnitSystem.dimensionless(), 1, GridSpec(-10, 10, 4000))
        with pytest.raises(NumericalFailure):
            mfpt_quadrature(st, None, -1.0, 1.0)


class TestSurvival:
    def test_ou_first_odd_level(self, harmonic):
        # generator eigenfunctions are Hermite polynomials; H_1 vanishes at the absorbing point
        assert survival_decay_rate(harmonic, None, 0.0) == pytest.approx(1.0, rel=1e-5)

    def test_square_well_tail_time(self, square_state):
        tau_l = 1.0 / survival_decay_rate(square_state, -3.0, 2.0)
        assert tau_l == pytest.approx(51.80, rel=0.10)
        assert tau_l == pytest.approx(53.38872709, rel=1e-6)


class TestHighBarrier:
    def test_square_occupancies(self, square_state, square_well):
        r = mfpt_high_barrier_quadrature(square_state, square_well)
        assert r.warning is None
        assert r.well_occupancy + 0.5 * r.barrier_occupancy == pytest.approx(0.5, rel=1e-6)
        assert r.tau == pytest.approx(2 * r.barrier_integral * r.well_occupancy)

    def test_warning_below_threshold(self, nh3_units):
        pot = RosenMorseDouble(398.0, 2810.0, 0.17, 2.22)
        st = numerov_bound_state(pot, nh3_units, 0, default_grid(pot, nh3_units))
        with pytest.warns(RuntimeWarning, match="factorization"):
            r = mfpt_high_barrier_quadrature(st, pot)
        assert r.well_occupancy == pytest.approx(0.3956, abs=1e-4)
        assert r.warning.startswith("factorization invalid")


class TestEnsemble:
    def test_sorted_and_frozen(self):
        ens = FptEnsemble(np.array([3.0, 1.0, 2.0]))
        assert ens.taus.tolist() == [1.0, 2.0, 3.0]
        assert ens.mean == 2.0 and ens.stderr == pytest.approx(1 / math.sqrt(3))
        with pytest.raises(ValueError):
            ens.taus[0] = 5.0

    def test_non_positive_rejected(self):
        with pytest.raises(DomainError):
            FptEnsemble(np.array([1.0, 0.0]))

    def test_timeout_warning(self):
        with pytest.warns(RuntimeWarning, match="timed out"):
            FptEnsemble(np.ones(100), timed_out=1)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            FptEnsemble(np.ones(2000), timed_out=1)

    def test_histogram_density(self):
        ens = FptEnsemble(np.random.default_rng(1).exponential(2.0, 5000))
        edges, counts, density = ens.histogram(40)
        assert counts.sum() == 5000
        assert np.sum(density * np.diff(edges)) == pytest.approx(1.0)


class TestTailFit:
    def test_recovers_rate(self):
        taus = np.random.default_rng(7).exponential(51.8, 20_000)
        fit = fit_exponential_tail(taus)
        assert fit.threshold == pytest.approx(np.median(taus))
        assert abs(fit.rate - 1 / 51.8) < 3 * fit.rate_stderr
        assert fit.goodness > 0.95
        # memoryless: half the samples exceed the median
        assert fit.amplitude * math.exp(-fit.rate * fit.threshold) / fit.rate == pytest.approx(0.5, rel=1e-3)

    def test_shifted_tail(self):
        rng = np.random.default_rng(3)
        taus = 10.0 + rng.exponential(4.0, 10_000)
        fit = fit_exponential_tail(FptEnsemble(taus), threshold=12.0)
        assert fit.tau_l == pytest.approx(4.0, rel=0.05)

    def test_errors(self):
        with pytest.raises(InsufficientDataError, match="only 75"):
            fit_exponential_tail(np.arange(1.0, 151.0))
        with pytest.raises(InsufficientDataError, match="spread"):
            fit_exponential_tail(np.ones(500))
        with pytest.raises(InsufficientDataError):
            fit_exponential_tail(np.array([]))
        with pytest.raises(DomainError):
            fit_exponential_tail(np.ones(500), threshold=-1.0)


def test_digest_order_independent():
    assert digest({"a": 1, "b": [1.0, 2.0]}) == digest({"b": [1.0, 2.0], "a": 1})
    assert digest({"a": 1}) != digest({"a": 2})
