'''
Conjunto de confianza funcional y cómputo exacto del valor optimista.

Para cada candidato phi' se ajustan por mínimos cuadrados las cabezas que mejor
reproducen las predicciones del centro (PerPhiSolve). Las funciones del conjunto
con representación phi' forman un elipsoide alrededor de ese ajuste con holgura
s = max(β − c', 0); los valores optimistas y la anchura salen en forma cerrada.
'''
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
from config.settings import settings
from models.function_class import FeatureClass, FeatureMap, MultiheadFunction, MultitaskHistory
from services.core.erm import empirical_sq_distance, regularized_gram
from utils.exceptions import DimensionError, ParameterError
from utils.logger import get_logger

logger = get_logger(__name__)

MAX_EXACT_TUPLES = 100_000
SWEEP_GRID = np.logspace(-3, 3, 13)
CAP_TOL = 1e-9


class Strategy(str, Enum):
    DECOUPLED = 'decoupled'
    SWEEP = 'sweep'
    EXACT = 'exact'


def slack_bonus(slack: float, base):
    '''√(s·b) con s posiblemente infinito (inf·0 = 0)'''
    base = np.maximum(np.asarray(base, dtype=float), 0.0)
    if math.isinf(slack):
        return np.where(base > 0, np.inf, 0.0)
    return np.sqrt(slack * base)


@dataclass(frozen=True, eq=False)
class PerPhiSolve:
    '''Ajuste cerrado del centro sobre un candidato phi'''

    phi_index: int
    phi: FeatureMap
    grams: Tuple[np.ndarray, ...]
    gram_invs: Tuple[np.ndarray, ...]
    heads: np.ndarray
    residual: float

    def means(self, task: int, features: np.ndarray) -> np.ndarray:
        return features @ self.heads[:, task]

    def bonus_base(self, task: int, features: np.ndarray) -> np.ndarray:
        base = np.einsum('ak,kl,al->a', features, self.gram_invs[task], features)
        return np.maximum(base, 0.0)


def solve_for_phi(phi_index: int, cls: FeatureClass, history: MultitaskHistory,
                  targets: Sequence[np.ndarray], ridge: float) -> PerPhiSolve:
    phi = cls[phi_index]
    k = cls.dim_k
    grams, gram_invs = [], []
    heads = np.zeros((k, history.M))
    residual = 0.0
    for task in range(history.M):
        features = history.features(phi, task)
        gram = regularized_gram(features, ridge)
        gram_inv = np.linalg.inv(gram)
        gram_inv = 0.5 * (gram_inv + gram_inv.T)
        if features.shape[0] > 0:
            heads[:, task] = np.linalg.solve(gram, features.T @ targets[task])
            diff = features @ heads[:, task] - targets[task]
            residual += float(diff @ diff)
        grams.append(gram)
        gram_invs.append(gram_inv)
    return PerPhiSolve(phi_index, phi, tuple(grams), tuple(gram_invs), heads, residual)


@dataclass(frozen=True, eq=False)
class ConfidenceSet:
    '''
    F_t = {f : ‖f − f̂‖²_{2,E} ≤ β} sobre la clase multicabeza.

    Es una instantánea: el historial no debe crecer mientras se consulta.
    '''

    center: MultiheadFunction
    beta: float
    history: MultitaskHistory
    feature_class: FeatureClass
    ridge: float = field(default_factory=lambda: settings.RIDGE)
    feasibility_tol: float = field(default_factory=lambda: settings.FEASIBILITY_TOL)

    def __post_init__(self):
        if math.isnan(self.beta) or self.beta < 0:
            raise ParameterError(f'beta debe ser >= 0, se recibió {self.beta}')
        if self.ridge <= 0:
            raise ParameterError('ridge debe ser positivo')
        if self.center.M != self.history.M:
            raise DimensionError(
                f'El centro tiene {self.center.M} cabezas y el historial {self.history.M} tareas'
            )
        if self.center.feature_class is not self.feature_class:
            raise DimensionError('El centro no pertenece a la clase del conjunto')

    @property
    def M(self) -> int:
        return self.history.M

    @property
    def value_cap(self) -> float:
        return self.center.value_cap

    @cached_property
    def center_predictions(self) -> Tuple[np.ndarray, ...]:
        return tuple(
            self.center.predict_from_features(task, self.history.features(self.center.phi, task))
            for task in range(self.M)
        )

    @cached_property
    def solves(self) -> Tuple[PerPhiSolve, ...]:
        return tuple(
            solve_for_phi(j, self.feature_class, self.history, self.center_predictions, self.ridge)
            for j in range(len(self.feature_class))
        )

    @cached_property
    def candidates(self) -> Tuple[Tuple[PerPhiSolve, float], ...]:
        '''Pares (solve, holgura) de los phi factibles, en orden de índice'''
        feasible = tuple(
            (solve, max(self.beta - solve.residual, 0.0))
            for solve in self.solves
            if solve.residual <= self.beta + self.feasibility_tol
        )
        if feasible:
            return feasible
        # Sin candidatos factibles: el de menor residuo, sin holgura
        best = min(self.solves, key=lambda s: (s.residual, s.phi_index))
        return ((best, 0.0),)

    def optimistic_value(self, task: int, x: Any) -> float:
        '''max_{f ∈ F_t} f^{(i)}(x), recortado a value_cap'''
        if not 0 <= task < self.M:
            raise DimensionError(f'Tarea {task} fuera de rango')
        best = -math.inf
        for solve, slack in self.candidates:
            q = solve.phi(x)[None, :]
            value = solve.means(task, q) + slack_bonus(slack, solve.bonus_base(task, q))
            best = max(best, float(np.clip(value, -self.value_cap, self.value_cap)[0]))
        return best


@dataclass(frozen=True)
class OptimisticChoice:
    '''Resultado de la selección optimista'''

    actions: Tuple[int, ...]
    values: Tuple[float, ...]
    total: float
    witness_phi: int
    witness_heads: np.ndarray = field(repr=False)
    slack: float = 0.0

    def describe_witness(self) -> str:
        norms = np.linalg.norm(self.witness_heads, axis=0)
        return f'phi={self.witness_phi} holgura={self.slack:.4g} ‖w‖={np.round(norms, 4).tolist()}'


def confidence_contains(candidate: MultiheadFunction, set: ConfidenceSet,
                        queries: Optional[Sequence[Sequence[Any]]] = None) -> bool:
    '''Pertenencia (frontera inclusiva) y respeto de value_cap en los puntos consultados'''
    if candidate.M != set.M:
        raise DimensionError(f'El candidato tiene {candidate.M} cabezas, el conjunto {set.M} tareas')
    if empirical_sq_distance(candidate, set.center, set.history) > set.beta:
        return False
    cap = set.value_cap + CAP_TOL
    for task in range(set.M):
        blocks = [set.history.features(candidate.phi, task)]
        if queries is not None and len(queries[task]) > 0:
            blocks.append(candidate.phi.batch(queries[task]))
        for features in blocks:
            if features.shape[0] and np.any(np.abs(candidate.raw_from_features(task, features)) > cap):
                return False
    return True


def coupled_values(means: np.ndarray, bases: np.ndarray, slack: float, cap: float) -> np.ndarray:
    '''
    Valores por tarea que maximizan Σ_i min(m_i + δ_i, cap) con Σ δ_i²/b_i ≤ s.

    Reparto tipo water-filling: δ_i = min(cap − m_i, ν·b_i).
    '''
    means = np.asarray(means, dtype=float)
    bases = np.maximum(np.asarray(bases, dtype=float), 0.0)
    deltas = np.zeros_like(means)
    headroom = cap - means
    active = (bases > 0) & (headroom > 0)
    if slack > 0 and active.any():
        if math.isinf(slack):
            deltas[active] = headroom[active]
        else:
            budget = slack
            while active.any():
                nu = math.sqrt(max(budget, 0.0) / bases[active].sum())
                saturated = active & (headroom <= nu * bases)
                if not saturated.any():
                    deltas[active] = nu * bases[active]
                    break
                deltas[saturated] = headroom[saturated]
                budget -= float(np.sum(headroom[saturated] ** 2 / bases[saturated]))
                active &= ~saturated
    return np.clip(means + deltas, -cap, cap)


def tiebreak_key(means: np.ndarray, bases: np.ndarray, slack: float) -> Tuple[float, float]:
    '''
    Clave secundaria entre opciones con el mismo valor recortado.

    Cuando el tope satura todos los valores, ordena por el valor optimista sin
    recortar Σ(m + √(s·b)) y después por Σb, de modo que la acción más incierta
    gana en lugar de la de menor índice.
    '''
    means = np.asarray(means, dtype=float)
    bases = np.maximum(np.asarray(bases, dtype=float), 0.0)
    return float(np.sum(means + slack_bonus(slack, bases))), float(bases.sum())


def _best_action(clipped: np.ndarray, raw: np.ndarray, bases: np.ndarray) -> int:
    # max del valor recortado; empates por valor sin recortar, luego por b
    return max(range(len(clipped)), key=lambda a: (clipped[a], raw[a], bases[a], -a))


def _pick_decoupled(means, bases, slack, cap):
    actions, values = [], []
    for m, b in zip(means, bases):
        raw = m + slack_bonus(slack, b)
        v = np.clip(raw, -cap, cap)
        a = _best_action(v, raw, b)
        actions.append(a)
        values.append(float(v[a]))
    return tuple(actions), np.asarray(values)


def _best_tuple(tuples, means, bases, slack, cap):
    best_actions, best_values, best_key = None, None, None
    for actions in tuples:
        m = np.array([means[i][a] for i, a in enumerate(actions)])
        b = np.array([bases[i][a] for i, a in enumerate(actions)])
        values = coupled_values(m, b, slack, cap)
        key = (float(values.sum()), *tiebreak_key(m, b, slack))
        if best_key is None or key > best_key:
            best_actions, best_values, best_key = tuple(actions), values, key
    return best_actions, best_values


def _pick_exact(means, bases, slack, cap):
    n_tuples = math.prod(len(m) for m in means)
    if n_tuples > MAX_EXACT_TUPLES:
        raise ParameterError(
            f'La enumeración exacta requiere {n_tuples} tuplas (límite {MAX_EXACT_TUPLES})'
        )
    tuples = itertools.product(*(range(len(m)) for m in means))
    return _best_tuple(tuples, means, bases, slack, cap)


def sweep_lambdas(means: Sequence[np.ndarray], bases: Sequence[np.ndarray]) -> List[float]:
    '''Rejilla {0, 1e-3..1e3, ∞} más los puntos de quiebre positivos por tarea'''
    lambdas = {0.0, math.inf}
    lambdas.update(float(x) for x in SWEEP_GRID)
    for m, b in zip(means, bases):
        for a, a2 in itertools.combinations(range(len(m)), 2):
            db = b[a2] - b[a]
            if db != 0:
                breakpoint_ = (m[a] - m[a2]) / db
                if 0 < breakpoint_ < math.inf:
                    lambdas.add(float(breakpoint_))
    return sorted(lambdas)


def _pick_sweep(means, bases, slack, cap):
    seen, tuples = set(), []
    for lam in sweep_lambdas(means, bases):
        actions = []
        for m, b in zip(means, bases):
            if math.isinf(lam):
                ties = np.flatnonzero(b == b.max())
                actions.append(int(ties[np.argmax(m[ties])]))
            else:
                actions.append(int(np.argmax(m + lam * b)))
        key = tuple(actions)
        if key not in seen:
            seen.add(key)
            tuples.append(key)
    return _best_tuple(tuples, means, bases, slack, cap)


_PICKERS: Dict[Strategy, Callable] = {
    Strategy.DECOUPLED: _pick_decoupled,
    Strategy.EXACT: _pick_exact,
    Strategy.SWEEP: _pick_sweep,
}


def _witness_heads(solve: PerPhiSolve, chosen: Sequence[np.ndarray], raw_deltas: np.ndarray,
                   bases: np.ndarray) -> np.ndarray:
    heads = solve.heads.copy()
    for task, q in enumerate(chosen):
        delta, base = raw_deltas[task], bases[task]
        if base > 0 and math.isfinite(delta):
            heads[:, task] += (delta / base) * (solve.gram_invs[task] @ q)
    return heads


def optimistic_select(set: ConfidenceSet, queries: Sequence[Sequence[Any]],
                      strategy: Strategy = Strategy.DECOUPLED) -> OptimisticChoice:
    '''
    Acción optimista por tarea.

    queries[i] es la lista de entradas (una por acción) del contexto de la tarea i.
    Empates en el total recortado: mayor valor sin recortar, mayor Σb, y luego
    menor índice de phi y de acción.
    '''
    strategy = Strategy(strategy)
    if len(queries) != set.M:
        raise DimensionError(f'Se esperaban {set.M} contextos, se recibieron {len(queries)}')
    if any(len(q) == 0 for q in queries):
        raise ParameterError('Todo conjunto de acciones debe ser no vacío')

    cap = set.value_cap
    picker = _PICKERS[strategy]
    best: Optional[OptimisticChoice] = None
    best_key = None
    for solve, slack in set.candidates:
        features = [solve.phi.batch(q) for q in queries]
        means = [solve.means(task, f) for task, f in enumerate(features)]
        bases = [solve.bonus_base(task, f) for task, f in enumerate(features)]
        actions, values = picker(means, bases, slack, cap)
        total = float(np.sum(values))
        chosen_means = np.array([means[task][a] for task, a in enumerate(actions)])
        chosen_bases = np.array([bases[task][a] for task, a in enumerate(actions)])
        key = (total, *tiebreak_key(chosen_means, chosen_bases, slack))
        if best_key is None or key > best_key:
            best_key = key
            chosen = [features[task][a] for task, a in enumerate(actions)]
            best = OptimisticChoice(
                actions=actions,
                values=tuple(float(v) for v in values),
                total=total,
                witness_phi=solve.phi_index,
                witness_heads=_witness_heads(solve, chosen, values - chosen_means, chosen_bases),
                slack=slack,
            )
    return best


def _decoupled_tables(set: ConfidenceSet, features_by_candidate: Sequence[np.ndarray],
                      n_states: int, n_actions: int):
    '''Por candidato: acción decoupled y sus (valor, valor crudo, b), cada uno de forma (M, S)'''
    cap = set.value_cap
    tables = []
    for (solve, slack), features in zip(set.candidates, features_by_candidate):
        actions = np.zeros((set.M, n_states), dtype=int)
        values, raws, bases = (np.zeros((set.M, n_states)) for _ in range(3))
        for task in range(set.M):
            m = solve.means(task, features).reshape(n_states, n_actions)
            b = solve.bonus_base(task, features).reshape(n_states, n_actions)
            raw = m + slack_bonus(slack, b)
            v = np.clip(raw, -cap, cap)
            for s in range(n_states):
                a = _best_action(v[s], raw[s], b[s])
                actions[task, s] = a
                values[task, s], raws[task, s], bases[task, s] = v[s, a], raw[s, a], b[s, a]
        tables.append((actions, values, raws, bases))
    return tables


def optimistic_policy(set: ConfidenceSet, state_inputs: Sequence[Sequence[Any]], anchors: Sequence[int],
                      strategy: Strategy = Strategy.DECOUPLED,
                      feature_cache: Optional[Dict[FeatureMap, np.ndarray]] = None,
                      eval_states: Optional[Sequence[Sequence[int]]] = None) -> np.ndarray:
    '''
    Acción optimista de cada tarea en cada estado, forma (M, S).

    state_inputs[s] son las entradas (una por acción) del estado s y anchors[i] el
    estado actual de la tarea i. La acción de la tarea i en s es la que elige
    optimistic_select con la tarea i en s y las demás en sus anclas; en particular
    policy[i, anchors[i]] es la selección conjunta. feature_cache, si se pasa,
    guarda phi.batch de las entradas aplanadas en orden de estado.

    eval_states[i], si se pasa, limita los estados evaluados de la tarea i; el
    resto queda con la acción 0.
    '''
    strategy = Strategy(strategy)
    n_states = len(state_inputs)
    if len(anchors) != set.M:
        raise DimensionError(f'Se esperaban {set.M} anclas, se recibieron {len(anchors)}')
    if n_states == 0 or any(len(q) == 0 for q in state_inputs):
        raise ParameterError('Todo estado debe tener al menos una acción')
    sizes = {len(q) for q in state_inputs}
    if len(sizes) != 1:
        raise ParameterError('Todos los estados deben tener el mismo número de acciones')
    if eval_states is None:
        eval_states = [range(n_states)] * set.M
    elif len(eval_states) != set.M:
        raise DimensionError(f'Se esperaban {set.M} listas de estados, se recibieron {len(eval_states)}')
    eval_states = [sorted({int(s) for s in states}) for states in eval_states]
    if any(s < 0 or s >= n_states for states in eval_states for s in states):
        raise ParameterError('eval_states contiene estados fuera de rango')
    anchors = np.asarray(anchors, dtype=int)
    policy = np.zeros((set.M, n_states), dtype=int)

    if strategy is not Strategy.DECOUPLED:
        anchor_queries = [state_inputs[s] for s in anchors]
        joint = None
        for task in range(set.M):
            for s in eval_states[task]:
                if s == anchors[task]:
                    # la selección conjunta sirve para todas las tareas en su ancla
                    if joint is None:
                        joint = optimistic_select(set, anchor_queries, strategy).actions
                    policy[task, s] = joint[task]
                    continue
                queries = list(anchor_queries)
                queries[task] = state_inputs[s]
                policy[task, s] = optimistic_select(set, queries, strategy).actions[task]
        return policy

    flat = [x for q in state_inputs for x in q]
    cache = {} if feature_cache is None else feature_cache
    features_by_candidate = []
    for solve, _ in set.candidates:
        if solve.phi not in cache:
            cache[solve.phi] = solve.phi.batch(flat)
        features_by_candidate.append(cache[solve.phi])
    tables = _decoupled_tables(set, features_by_candidate, n_states, sizes.pop())

    rows = np.arange(set.M)
    for task in range(set.M):
        columns = anchors.copy()
        for s in eval_states[task]:
            columns[task] = s
            best_key = None
            for actions, values, raws, bases in tables:
                key = (float(np.sum(values[rows, columns])), float(np.sum(raws[rows, columns])),
                       float(np.sum(bases[rows, columns])))
                if best_key is None or key > best_key:
                    best_key = key
                    policy[task, s] = actions[task, s]
    return policy


def width(set: ConfidenceSet, X: Sequence[Any]) -> float:
    '''w_{F}(X) = max_{φ'} (Σm + √(sΣb)) − min_{φ'} (Σm − √(sΣb)), acotada por 2·M·cap'''
    if len(X) != set.M:
        raise DimensionError(f'Se esperaba una entrada por tarea ({set.M}), se recibieron {len(X)}')
    uppers, lowers = [], []
    for solve, slack in set.candidates:
        mean_sum, base_sum = 0.0, 0.0
        for task, x in enumerate(X):
            q = solve.phi(x)[None, :]
            mean_sum += float(solve.means(task, q)[0])
            base_sum += float(solve.bonus_base(task, q)[0])
        radius = float(slack_bonus(slack, base_sum))
        uppers.append(mean_sum + radius)
        lowers.append(mean_sum - radius)
    spread = max(uppers) - min(lowers)
    return float(min(max(spread, 0.0), 2.0 * set.M * set.value_cap))
