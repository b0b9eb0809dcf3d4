import math
import pytest
from services.core.beta import (
    BetaMode, TUNED_BANDIT_DEFAULTS, beta_bandit, beta_mdp, linucb_radius, resolve_alpha,
)
from utils.exceptions import ParameterError


class TestBetaBandit:

    def test_theory_without_alpha_term(self):
        value = beta_bandit(M=2, k=3, t=5, log_cover=math.log(5), alpha=0.0, delta=0.1)
        assert value == pytest.approx(72 + 12 * (math.log(5) + math.log(10)))

    def test_theory_full_formula(self):
        M, k, t, alpha, delta = 2, 3, 4, 0.01, 0.1
        expected = (
            12 * M * k + 12 * (math.log(4) - math.log(delta))
            + 8 * alpha * math.sqrt(M * t * k * (M * t + math.log(2 * M * t * t / delta)))
        )
        assert beta_bandit(M, k, t, math.log(4), alpha, delta) == pytest.approx(expected)

    def test_theory_nondecreasing_in_t(self):
        values = [beta_bandit(3, 2, t, 1.0, 0.05, 0.1) for t in range(1, 50)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_tuned_defaults(self):
        a, b, c = TUNED_BANDIT_DEFAULTS
        mode = BetaMode.tuned(a, b, c)
        assert beta_bandit(1, 1, 1, 0.0, 0.0, 0.1, mode) == pytest.approx(0.4 * math.log(2.5))

    def test_fixed_accepts_infinity(self):
        assert beta_bandit(1, 1, 7, 0.0, 0.0, 0.1, BetaMode.fixed(math.inf)) == math.inf

    @pytest.mark.parametrize('delta', [0.0, 1.5, -0.1])
    def test_invalid_delta(self, delta):
        with pytest.raises(ParameterError):
            beta_bandit(1, 1, 1, 0.0, 0.0, delta)

    def test_fixed_negative_rejected(self):
        with pytest.raises(ParameterError):
            BetaMode.fixed(-1.0)


class TestBetaMdp:

    def test_formula(self):
        M, k, T, delta = 2, 3, 10, 0.1
        b1 = math.sqrt(2 * M * k + math.log(3) - math.log(delta)) + 1
        b2 = 2 * math.sqrt(M * T + math.log(2 * M * T * T / delta))
        assert beta_mdp(M, k, T, math.log(3), delta) == pytest.approx((b1 + math.sqrt(b2)) ** 2)

    def test_inherent_error_enlarges_radius(self):
        assert beta_mdp(2, 3, 10, 1.0, 0.1, ibe=0.05) > beta_mdp(2, 3, 10, 1.0, 0.1, ibe=0.0)

    def test_negative_ibe(self):
        with pytest.raises(ParameterError):
            beta_mdp(1, 1, 1, 0.0, 0.1, ibe=-0.1)


def test_resolve_alpha_auto():
    assert resolve_alpha('auto', k=4, M=5, T=100) == pytest.approx(1 / 2000)
    assert resolve_alpha(0.3, 4, 5, 100) == 0.3
    with pytest.raises(ParameterError):
        resolve_alpha('small', 1, 1, 1)


def test_linucb_radius():
    assert linucb_radius(0, 4, 1.0, 0.1) == pytest.approx(2 + math.sqrt(2 * math.log(10)))
    assert linucb_radius(100, 4, 1.0, 0.1) > linucb_radius(10, 4, 1.0, 0.1)


class TestSpotValues:

    @pytest.mark.parametrize('t', [1, 10, 1000])
    def test_bandit_minimal_radius(self, t):
        assert beta_bandit(1, 1, t, 0.0, 0.0, 1.0) == pytest.approx(12.0)

    def test_mdp_minimal_radius(self):
        assert beta_mdp(1, 1, 1, 0.0, 1.0, 0.0) == pytest.approx(16.220, abs=1e-3)

    def test_linucb_initial_radius(self):
        assert linucb_radius(0, 1, 1.0, 1.0) == pytest.approx(1.0)


BASE = dict(M=2, k=3, log_cover=1.0, delta=0.1)


class TestMonotonicity:

    @pytest.mark.parametrize('name, low, high', [
        ('M', 1, 4), ('k', 1, 5), ('log_cover', 0.0, 3.0),
    ])
    def test_grows_with_size(self, name, low, high):
        for radius in (
            lambda p: beta_bandit(p['M'], p['k'], 10, p['log_cover'], 0.01, p['delta']),
            lambda p: beta_mdp(p['M'], p['k'], 10, p['log_cover'], p['delta']),
        ):
            assert radius({**BASE, name: low}) < radius({**BASE, name: high})

    def test_shrinks_with_delta(self):
        for delta_low, delta_high in ((0.01, 0.1), (0.1, 0.5)):
            assert beta_bandit(2, 3, 10, 1.0, 0.01, delta_low) > beta_bandit(2, 3, 10, 1.0, 0.01, delta_high)
            assert beta_mdp(2, 3, 10, 1.0, delta_low) > beta_mdp(2, 3, 10, 1.0, delta_high)
