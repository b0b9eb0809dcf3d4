from dataclasses import dataclass
from typing import Any, Hashable, List, Optional, Sequence, Tuple
import numpy as np
from models.environment import BanditInstance
from models.function_class import FeatureMap, MultitaskHistory
from services.bandit.gfucb import GFUCBState
from services.core.confidence import ConfidenceSet
from services.core.erm import erm_fit
from utils.exceptions import DataError, ParameterError
from utils.helpers import rng_stream
from utils.logger import get_logger

logger = get_logger(__name__)

HeldoutPoint = Tuple[int, Any, float]


@dataclass(frozen=True)
class KernelMatrix:
    '''C(i, j) = ⟨T_i, T_j⟩ con T_i el vector plantilla (media de features) de la categoría i'''

    C: np.ndarray
    templates: np.ndarray
    categories: Tuple[Hashable, ...]

    def diagonal_dominance(self) -> float:
        '''Media de la diagonal menos media fuera de la diagonal'''
        n = self.C.shape[0]
        if n < 2:
            return float(self.C[0, 0])
        off = self.C[~np.eye(n, dtype=bool)]
        return float(np.diag(self.C).mean() - off.mean())


def _group_by_category(phi: FeatureMap, dataset: Sequence[Tuple[Any, Hashable]],
                       categories: Optional[Sequence[Hashable]]):
    if not dataset:
        raise DataError('El conjunto de datos está vacío')
    labels = tuple(categories) if categories is not None else tuple(sorted({c for _, c in dataset}))
    groups = {label: [] for label in labels}
    for x, label in dataset:
        if label not in groups:
            raise DataError(f'Categoría no declarada: {label!r}')
        groups[label].append(x)
    empty = [label for label, xs in groups.items() if not xs]
    if empty:
        raise DataError(f'Categorías sin muestras: {empty}')
    return labels, [phi.batch(groups[label]) for label in labels]


def kernel_matrix(phi: FeatureMap, dataset: Sequence[Tuple[Any, Hashable]],
                  categories: Optional[Sequence[Hashable]] = None) -> KernelMatrix:
    '''Matriz de correlación entre categorías en forma de plantillas'''
    labels, blocks = _group_by_category(phi, dataset, categories)
    templates = np.vstack([block.mean(axis=0) for block in blocks])
    C = templates @ templates.T
    return KernelMatrix(0.5 * (C + C.T), templates, labels)


def correlation_double_sum(phi: FeatureMap, dataset: Sequence[Tuple[Any, Hashable]],
                           categories: Optional[Sequence[Hashable]] = None) -> np.ndarray:
    '''C(i, j) = 1/(n_i n_j) Σ_{x∈i} Σ_{x'∈j} ⟨φ(x), φ(x')⟩'''
    labels, blocks = _group_by_category(phi, dataset, categories)
    n = len(labels)
    C = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            C[i, j] = (blocks[i] @ blocks[j].T).sum() / (blocks[i].shape[0] * blocks[j].shape[0])
    return C


def make_heldout(inst: BanditInstance, n: int, seed: int) -> List[HeldoutPoint]:
    '''Puntos (tarea, entrada, valor verdadero) de contextos nuevos'''
    rng = rng_stream(seed, 'heldout')
    points = []
    for _ in range(n):
        task = int(rng.integers(inst.M))
        inputs = inst.context_sampler(rng, task)
        x = inputs[int(rng.integers(len(inputs)))]
        points.append((task, x, inst.mean_reward(task, x)))
    return points


def bonus_vs_error(state: GFUCBState, heldout: Sequence[HeldoutPoint],
                   beta: Optional[float] = None) -> List[Tuple[float, float]]:
    '''Por punto: (|f̂(x) − y|, valor optimista − f̂(x))'''
    cset = state.confidence_set(beta)
    pairs = []
    for task, x, y in heldout:
        prediction = state.center.predict(task, x)
        bonus = max(cset.optimistic_value(task, x) - prediction, 0.0)
        pairs.append((abs(prediction - y), bonus))
    return pairs


def fraction_covered(pairs: Sequence[Tuple[float, float]]) -> float:
    '''Fracción de puntos con bonus ≥ |error|'''
    if not pairs:
        raise DataError('No hay pares (error, bonus)')
    return float(np.mean([bonus >= error for error, bonus in pairs]))


def bonus_shrinkage(inst: BanditInstance, sizes: Sequence[int], heldout: Sequence[HeldoutPoint],
                    seed: int, beta: float = 1.0, ridge: float = 1e-6) -> List[Tuple[int, float, float]]:
    '''
    Bonus medio sobre heldout según el número de muestras de entrenamiento por tarea.

    Las muestras son acciones uniformes en contextos nuevos; los prefijos son
    anidados, así que cada tamaño extiende los datos del anterior.
    '''
    if not sizes or any(n < 1 for n in sizes):
        raise ParameterError('Los tamaños deben ser >= 1')
    if beta < 0:
        raise ParameterError('beta debe ser >= 0')
    history = MultitaskHistory(inst.M)
    curve = []
    n_seen = 0
    for n in sorted(sizes):
        for step in range(n_seen, n):
            for task in range(inst.M):
                rng = rng_stream(seed, task, step, 'shrinkage')
                draw = inst.draw_context(rng, task)
                action = int(rng.integers(len(draw.inputs)))
                history.append(task, draw.inputs[action], float(draw.means[action]) + inst.sample_noise(rng))
        n_seen = n
        center = erm_fit(history, inst.feature_class, ridge)
        cset = ConfidenceSet(center, beta, history, inst.feature_class, ridge)
        bonuses = np.array([
            max(cset.optimistic_value(task, x) - center.predict(task, x), 0.0)
            for task, x, _ in heldout
        ])
        curve.append((n, float(bonuses.mean()), float(bonuses.std())))
        logger.debug(f'Bonus medio con {n} muestras por tarea: {bonuses.mean():.4g}')
    return curve
