import itertools
import math
import numpy as np
import pytest
from models.function_class import MultiheadFunction, MultitaskHistory
from services.core.confidence import (
    ConfidenceSet, Strategy, confidence_contains, coupled_values, optimistic_policy,
    optimistic_select, slack_bonus, tiebreak_key, width,
)
from services.core.erm import empirical_sq_distance, erm_fit
from services.mdp.environments import make_random_linear_mdp
from utils.exceptions import DimensionError, ParameterError
from utils.helpers import rng_stream

RIDGE = 1e-6


@pytest.fixture
def scalar_set(scalar_class):
    '''Centro w = 0.3 sobre x ∈ {0.5, 1.0} (Σx² = 1.25)'''
    history = MultitaskHistory(1)
    history.append(0, 0, 0.15)
    history.append(0, 1, 0.30)
    center = MultiheadFunction(scalar_class, 0, np.array([[0.3]]))

    def _build(beta):
        return ConfidenceSet(center, beta, history, scalar_class, RIDGE)

    return _build


class TestScalarOracle:
    '''Con k = 1 el máximo sobre el conjunto tiene forma cerrada'''

    def test_optimistic_value_matches_closed_form(self, scalar_set):
        cset = scalar_set(0.01)
        q = 0.5  # φ(0)
        expected = q * (0.3 + math.sqrt(0.01 / 1.25))
        assert cset.optimistic_value(0, 0) == pytest.approx(expected, abs=1e-5)

    def test_zero_radius_returns_center(self, scalar_set):
        assert scalar_set(0.0).optimistic_value(0, 3) == pytest.approx(0.3 * 0.75, abs=1e-6)

    def test_infinite_radius_hits_cap(self, scalar_set):
        assert scalar_set(math.inf).optimistic_value(0, 2) == 1.0

    def test_membership(self, scalar_class, scalar_set):
        cset = scalar_set(0.01)
        assert confidence_contains(cset.center, cset)
        far = MultiheadFunction(scalar_class, 0, np.array([[0.9]]))
        assert not confidence_contains(far, cset)
        near = MultiheadFunction(scalar_class, 0, np.array([[0.35]]))
        assert confidence_contains(near, cset)

    def test_membership_rejects_values_above_cap(self, scalar_class, scalar_set):
        cset = scalar_set(math.inf)
        assert confidence_contains(MultiheadFunction(scalar_class, 0, np.array([[0.9]])), cset, [[1]])
        assert not confidence_contains(MultiheadFunction(scalar_class, 0, np.array([[1.2]])), cset)

    def test_negative_beta_rejected(self, scalar_set):
        with pytest.raises(ParameterError):
            scalar_set(-0.1)


class TestCoupledValues:

    def test_unclamped_split_is_proportional_to_bases(self):
        values = coupled_values(np.array([0.0, 0.0]), np.array([1.0, 3.0]), slack=0.04, cap=1.0)
        # δ_i = ν b_i con ν² Σ b = s
        nu = math.sqrt(0.04 / 4.0)
        np.testing.assert_allclose(values, [nu, 3 * nu])

    def test_clamped_task_releases_budget(self):
        values = coupled_values(np.array([0.95, 0.0]), np.array([1.0, 1.0]), slack=1.0, cap=1.0)
        assert values[0] == 1.0
        assert values[1] == pytest.approx(math.sqrt(1.0 - 0.05 ** 2))

    def test_slack_bonus_with_infinite_slack(self):
        np.testing.assert_array_equal(slack_bonus(math.inf, [0.0, 0.2]), [0.0, math.inf])


def _draw_queries(inst, seed, t):
    return [inst.draw_context(rng_stream(seed, task, t, 'context'), task).inputs for task in range(inst.M)]


class TestOptimisticSelect:

    def test_strategy_sandwich(self, latent_instance, played_history):
        center = erm_fit(played_history, latent_instance.feature_class, RIDGE)
        cset = ConfidenceSet(center, 0.5, played_history, latent_instance.feature_class, RIDGE)
        for t in range(10):
            queries = _draw_queries(latent_instance, 7, t)
            totals = {
                s: optimistic_select(cset, queries, s).total
                for s in (Strategy.SWEEP, Strategy.EXACT, Strategy.DECOUPLED)
            }
            assert totals[Strategy.SWEEP] <= totals[Strategy.EXACT] + 1e-9
            assert totals[Strategy.EXACT] <= totals[Strategy.DECOUPLED] + 1e-9

    @pytest.mark.parametrize('strategy', [Strategy.EXACT, Strategy.DECOUPLED])
    def test_optimism_when_truth_is_inside(self, latent_instance, played_history, strategy):
        inst = latent_instance
        center = erm_fit(played_history, inst.feature_class, RIDGE)
        beta = 1.0
        assert empirical_sq_distance(inst.truth, center, played_history) <= beta - 1e-3
        cset = ConfidenceSet(center, beta, played_history, inst.feature_class, RIDGE)
        for t in range(10):
            queries = _draw_queries(inst, 9, t)
            assert confidence_contains(inst.truth, cset, queries)
            best = sum(max(inst.mean_reward(task, x) for x in queries[task]) for task in range(inst.M))
            assert optimistic_select(cset, queries, strategy).total >= best - 1e-9

    def test_witness_lies_in_class(self, latent_instance, played_history):
        center = erm_fit(played_history, latent_instance.feature_class, RIDGE)
        cset = ConfidenceSet(center, 0.5, played_history, latent_instance.feature_class, RIDGE)
        choice = optimistic_select(cset, _draw_queries(latent_instance, 1, 1), Strategy.EXACT)
        assert 0 <= choice.witness_phi < len(latent_instance.feature_class)
        assert choice.witness_heads.shape == (latent_instance.feature_class.dim_k, latent_instance.M)
        assert 'phi=' in choice.describe_witness()

    def test_exact_enumeration_limit(self, scalar_class):
        history = MultitaskHistory(7)
        cset = ConfidenceSet(MultiheadFunction.zeros(scalar_class, 7), 1.0, history, scalar_class, RIDGE)
        with pytest.raises(ParameterError):
            optimistic_select(cset, [[0, 1, 2, 3, 0, 1]] * 7, Strategy.EXACT)

    def test_query_count_must_match_tasks(self, scalar_set):
        with pytest.raises(DimensionError):
            optimistic_select(scalar_set(0.1), [[0], [1]])

    def test_empty_action_set(self, scalar_set):
        with pytest.raises(ParameterError):
            optimistic_select(scalar_set(0.1), [[]])


class TestWidth:

    def test_infinite_radius_is_clipped(self, latent_instance, played_history):
        center = erm_fit(played_history, latent_instance.feature_class, RIDGE)
        cset = ConfidenceSet(center, math.inf, played_history, latent_instance.feature_class, RIDGE)
        X = [q[0] for q in _draw_queries(latent_instance, 2, 2)]
        assert width(cset, X) == 2.0 * latent_instance.M

    def test_width_grows_with_beta(self, latent_instance, played_history):
        center = erm_fit(played_history, latent_instance.feature_class, RIDGE)
        X = [q[0] for q in _draw_queries(latent_instance, 4, 4)]
        widths = [
            width(ConfidenceSet(center, beta, played_history, latent_instance.feature_class, RIDGE), X)
            for beta in (0.01, 0.1, 1.0)
        ]
        assert widths[0] <= widths[1] <= widths[2]
        assert all(0.0 <= w <= 2.0 * latent_instance.M for w in widths)


class TestCappedTies:
    '''Con el tope saturado la acción más incierta gana, no la de menor índice'''

    @pytest.fixture
    def capped_set(self, scalar_class):
        history = MultitaskHistory(1)
        history.append(0, 0, 0.15)
        center = MultiheadFunction(scalar_class, 0, np.array([[0.3]]))
        return lambda beta: ConfidenceSet(center, beta, history, scalar_class, RIDGE)

    @pytest.mark.parametrize('strategy', list(Strategy))
    @pytest.mark.parametrize('beta', [100.0, math.inf])
    def test_uncertain_action_wins(self, capped_set, strategy, beta):
        cset = capped_set(beta)
        # x = 1 tiene b ≈ 4 frente a b ≈ 1 de x = 0; ambos valores quedan en el tope
        assert optimistic_select(cset, [[0, 1]], strategy).actions == (1,)
        assert optimistic_select(cset, [[1, 0]], strategy).actions == (0,)
        assert optimistic_select(cset, [[0, 1]], strategy).total == 1.0

    def test_tiebreak_key_orders_by_raw_then_base(self):
        assert tiebreak_key([0.1], [4.0], 1.0) > tiebreak_key([0.5], [1.0], 1.0)
        assert tiebreak_key([0.0], [4.0], math.inf) > tiebreak_key([0.9], [1.0], math.inf)


def _random_scalar_problem(make_class, rng, M, n_members, n_inputs=6):
    tables = [rng.uniform(0.2, 1.0, size=(n_inputs, 1)) for _ in range(n_members)]
    cls = make_class(tables)
    history = MultitaskHistory(M)
    for task in range(M):
        for _ in range(int(rng.integers(1, 5))):
            x = int(rng.integers(n_inputs))
            history.append(task, x, float(np.clip(tables[0][x, 0] * 0.5 + 0.05 * rng.standard_normal(), -1, 1)))
    return cls, history


def _golden_max(f, low, high, iterations=200):
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = low, high
    for _ in range(iterations):
        c, d = b - ratio * (b - a), a + ratio * (b - a)
        if f(c) < f(d):
            a = c
        else:
            b = d
    return max(f(a), f(b), f(low), f(high))


def _ellipse_oracle(cset, queries):
    '''Máximo de Σ clip(w_i q_i) sobre el borde del elipsoide de cada candidato (k = 1)'''
    cap = cset.value_cap
    best = -math.inf
    for solve, slack in cset.candidates:
        for actions in itertools.product(*(range(len(q)) for q in queries)):
            q = np.array([solve.phi(queries[i][a])[0] for i, a in enumerate(actions)])
            m = q * solve.heads[0, :]
            b = q ** 2 / np.array([g[0, 0] for g in solve.grams])
            if cset.M == 1:
                value = float(np.clip(m[0] + math.sqrt(slack * b[0]), -cap, cap))
            else:
                def f(d1):
                    d2 = math.sqrt(max(b[1] * (slack - d1 ** 2 / b[0]), 0.0)) if b[0] > 0 else math.sqrt(slack * b[1])
                    return float(np.clip(m[0] + d1, -cap, cap) + np.clip(m[1] + d2, -cap, cap))
                value = _golden_max(f, 0.0, math.sqrt(slack * b[0]))
            best = max(best, value)
    return best


class TestExactOracle:

    @pytest.mark.slow
    def test_strategy_sandwich_on_random_instances(self, make_class):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            M = int(rng.integers(1, 4))
            n_actions = int(rng.integers(1, 5))
            tables = [rng.uniform(-1.0, 1.0, size=(8, 2)) for _ in range(int(rng.integers(1, 4)))]
            cls = make_class(tables)
            history = MultitaskHistory(M)
            for task in range(M):
                for _ in range(int(rng.integers(1, 6))):
                    history.append(task, int(rng.integers(8)), float(rng.uniform(-0.5, 0.5)))
            center = erm_fit(history, cls, RIDGE)
            cset = ConfidenceSet(center, float(rng.uniform(0.0, 2.0)), history, cls, RIDGE)
            queries = [list(rng.integers(8, size=n_actions)) for _ in range(M)]
            sweep = optimistic_select(cset, queries, Strategy.SWEEP).total
            exact = optimistic_select(cset, queries, Strategy.EXACT).total
            decoupled = optimistic_select(cset, queries, Strategy.DECOUPLED).total
            assert sweep <= exact + 1e-9
            assert exact <= decoupled + 1e-9

    @pytest.mark.slow
    def test_exact_matches_ellipse_oracle_for_scalar_heads(self, make_class):
        rng = np.random.default_rng(77)
        for _ in range(60):
            M = int(rng.integers(1, 3))
            cls, history = _random_scalar_problem(make_class, rng, M, n_members=int(rng.integers(1, 4)))
            center = erm_fit(history, cls, RIDGE)
            cset = ConfidenceSet(center, float(rng.uniform(0.01, 1.0)), history, cls, RIDGE)
            queries = [list(rng.integers(6, size=int(rng.integers(1, 4)))) for _ in range(M)]
            exact = optimistic_select(cset, queries, Strategy.EXACT).total
            assert exact == pytest.approx(_ellipse_oracle(cset, queries), abs=1e-9)


@pytest.fixture
def linear_mdp_set():
    '''Conjunto de confianza sobre un MDP lineal de un nivel con historial uniforme'''
    inst = make_random_linear_mdp(3, 5, 3, H=1, M=2, seed=6, noise_sigma=0.05)
    rng = np.random.default_rng(5)
    history = MultitaskHistory(inst.M)
    for _ in range(12):
        for task in range(inst.M):
            s, a = int(rng.integers(inst.n_states)), int(rng.integers(inst.n_actions))
            history.append(task, (s, a), float(inst.rewards[task, 0, s, a]) + inst.sample_noise(rng))
    center = erm_fit(history, inst.feature_class, RIDGE)
    return inst, ConfidenceSet(center, 0.3, history, inst.feature_class, RIDGE)


class TestOptimisticPolicy:

    @pytest.mark.parametrize('strategy', [Strategy.DECOUPLED, Strategy.SWEEP])
    def test_matches_per_state_selection(self, linear_mdp_set, strategy):
        inst, cset = linear_mdp_set
        state_inputs = [inst.inputs_for_state(s) for s in range(inst.n_states)]
        anchors = [1, 3]
        policy = optimistic_policy(cset, state_inputs, anchors, strategy)
        assert policy.shape == (inst.M, inst.n_states)
        for task in range(inst.M):
            for s in range(inst.n_states):
                queries = [state_inputs[a] for a in anchors]
                queries[task] = state_inputs[s]
                assert policy[task, s] == optimistic_select(cset, queries, strategy).actions[task]

    def test_anchor_column_is_joint_selection(self, linear_mdp_set):
        inst, cset = linear_mdp_set
        state_inputs = [inst.inputs_for_state(s) for s in range(inst.n_states)]
        policy = optimistic_policy(cset, state_inputs, [0, 4])
        joint = optimistic_select(cset, [state_inputs[0], state_inputs[4]])
        assert (policy[0, 0], policy[1, 4]) == joint.actions

    def test_eval_states_limits_work(self, linear_mdp_set):
        inst, cset = linear_mdp_set
        state_inputs = [inst.inputs_for_state(s) for s in range(inst.n_states)]
        full = optimistic_policy(cset, state_inputs, [1, 3])
        partial = optimistic_policy(cset, state_inputs, [1, 3], eval_states=[[1, 2], [3]])
        assert partial[0, 2] == full[0, 2] and partial[1, 3] == full[1, 3]
        assert partial[1, 0] == 0 and partial[0, 4] == 0

    def test_invalid_arguments(self, linear_mdp_set):
        inst, cset = linear_mdp_set
        state_inputs = [inst.inputs_for_state(s) for s in range(inst.n_states)]
        with pytest.raises(DimensionError):
            optimistic_policy(cset, state_inputs, [0])
        with pytest.raises(ParameterError):
            optimistic_policy(cset, state_inputs, [0, 1], eval_states=[[0], [9]])
        with pytest.raises(ParameterError):
            optimistic_policy(cset, [state_inputs[0], state_inputs[1][:2]], [0, 1])
