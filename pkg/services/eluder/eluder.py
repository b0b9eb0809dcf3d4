'''
Dimensión eluder de clases finitas sobre dominios finitos.

La búsqueda exhaustiva recorre todos los subconjuntos del dominio (DFS con
memoria por máscara de bits) y evalúa en paralelo todos los umbrales ε' que
pueden cambiar el estado de independencia. La versión greedy da una cota
inferior barata.
'''
import itertools
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Hashable, List, Optional, Sequence, Tuple
import numpy as np
from config.settings import settings
from models.function_class import FeatureClass
from utils.exceptions import EluderSizeError, ParameterError
from utils.helpers import rng_stream
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class ScalarClass:
    '''Clase finita de funciones escalares tabulada sobre un dominio finito'''

    values: np.ndarray
    domain: Tuple[Hashable, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        domain = tuple(self.domain)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise ParameterError('La clase necesita al menos una función y un punto')
        if values.shape[1] != len(domain):
            raise ParameterError(
                f'{values.shape[1]} columnas de valores para un dominio de {len(domain)} puntos'
            )
        if not np.all(np.isfinite(values)):
            raise ParameterError('Cada función debe estar definida en todo el dominio')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'domain', domain)

    @classmethod
    def from_functions(cls, functions: Sequence[Callable[[Any], float]],
                       domain: Sequence[Hashable]) -> 'ScalarClass':
        return cls(np.array([[f(x) for x in domain] for f in functions]), tuple(domain))

    @property
    def n_functions(self) -> int:
        return self.values.shape[0]

    def index_of(self, point: Hashable) -> int:
        try:
            return self.domain.index(point)
        except ValueError:
            raise ParameterError(f'{point!r} no pertenece al dominio')

    def pair_differences(self) -> np.ndarray:
        '''f(x) − f̃(x) para cada par no ordenado f ≠ f̃, forma (pares, puntos)'''
        n = self.n_functions
        if n < 2:
            return np.zeros((0, self.values.shape[1]))
        rows, cols = np.triu_indices(n, k=1)
        return self.values[rows] - self.values[cols]


def is_eps_dependent(x: Hashable, X: Sequence[Hashable], cls: ScalarClass, eps: float) -> bool:
    '''
    x es ε-dependiente de X si todo par con ‖f − f̃‖_X ≤ ε cumple |f(x) − f̃(x)| ≤ ε.

    X es una secuencia: los puntos repetidos cuentan tantas veces como aparecen.
    '''
    if eps <= 0:
        raise ParameterError('eps debe ser positivo')
    diffs = cls.pair_differences()
    if diffs.shape[0] == 0:
        return True
    columns = [cls.index_of(p) for p in X]
    norms = np.sqrt((diffs[:, columns] ** 2).sum(axis=1)) if columns else np.zeros(diffs.shape[0])
    gaps = np.abs(diffs[:, cls.index_of(x)])
    return not bool(np.any((norms <= eps) & (gaps > eps)))


def _check_domain_size(cls: ScalarClass, max_domain: Optional[int]):
    limit = settings.ELUDER_MAX_DOMAIN if max_domain is None else max_domain
    if len(cls.domain) > limit:
        raise EluderSizeError(
            f'Dominio de {len(cls.domain)} puntos excede el límite exhaustivo ({limit})'
        )


def eluder_dimension_exhaustive(cls: ScalarClass, eps: float,
                                max_domain: Optional[int] = None) -> int:
    '''
    dim_E(F, ε): secuencia más larga de puntos ε'-independientes de sus
    predecesores para algún ε' ≥ ε.

    Para una clase finita basta evaluar ε' como límite por la izquierda de cada
    brecha alcanzable g > ε: un punto es independiente en ese umbral si algún par
    cumple ‖f − f̃‖_X < g ≤ |f(x) − f̃(x)|.
    '''
    if eps <= 0:
        raise ParameterError('eps debe ser positivo')
    _check_domain_size(cls, max_domain)
    diffs = cls.pair_differences()
    if diffs.shape[0] == 0:
        return 0
    abs_diffs = np.abs(diffs)
    sq_diffs = diffs ** 2
    thresholds = np.unique(abs_diffs[abs_diffs > eps])
    if thresholds.size == 0:
        return 0

    n_points = len(cls.domain)
    # reach[x, par, g]: |Δ_par(x)| ≥ g
    reach = abs_diffs.T[:, :, None] >= thresholds[None, None, :]
    memo: Dict[int, np.ndarray] = {}

    def longest(mask: int) -> np.ndarray:
        cached = memo.get(mask)
        if cached is not None:
            return cached
        chosen = [p for p in range(n_points) if mask >> p & 1]
        norms = np.sqrt(sq_diffs[:, chosen].sum(axis=1))
        close = norms[:, None] < thresholds[None, :]
        best = np.zeros(thresholds.size, dtype=int)
        for point in range(n_points):
            if mask >> point & 1:
                continue
            independent = (close & reach[point]).any(axis=0)
            if not independent.any():
                continue
            extended = 1 + longest(mask | (1 << point))
            best = np.maximum(best, np.where(independent, extended, 0))
        memo[mask] = best
        return best

    dimension = int(longest(0).max())
    logger.debug(f'dim_E exhaustiva: eps={eps} -> {dimension} ({len(memo)} estados)')
    return dimension


def eluder_dimension_greedy(cls: ScalarClass, eps: float) -> int:
    '''Extiende la secuencia con el primer punto ε-independiente en orden de dominio'''
    if eps <= 0:
        raise ParameterError('eps debe ser positivo')
    sequence: List[Hashable] = []
    while True:
        nxt = next(
            (x for x in cls.domain if not is_eps_dependent(x, sequence, cls, eps)),
            None
        )
        if nxt is None:
            return len(sequence)
        sequence.append(nxt)


def scalarize_multihead(feature_class: FeatureClass, head_grid: Sequence[np.ndarray],
                        domain_tuples: Sequence[Tuple[Any, ...]],
                        value_cap: float = 1.0) -> ScalarClass:
    '''
    Reduce F^{⊗M} a una clase escalar g(X) = Σ_i clamp(φ(x_i)ᵀw_i).

    head_grid es una lista de matrices k x M; la clase resultante tiene
    |Φ|·|head_grid| funciones sobre los puntos X de domain_tuples.
    '''
    rows = []
    for phi in feature_class:
        per_task = [
            phi.batch([point[task] for point in domain_tuples])
            for task in range(len(domain_tuples[0]))
        ]
        for heads in head_grid:
            heads = np.asarray(heads, dtype=float)
            total = np.zeros(len(domain_tuples))
            for task, features in enumerate(per_task):
                total += np.clip(features @ heads[:, task], -value_cap, value_cap)
            rows.append(total)
    labels = tuple(range(len(domain_tuples)))
    return ScalarClass(np.vstack(rows), labels)


def discretized_linear_class(d: int, step: float = 0.25, radius: float = 1.0) -> ScalarClass:
    '''{θᵀx : θ en una rejilla de paso step dentro de la bola} sobre la base canónica'''
    ticks = np.arange(-radius, radius + step / 2, step)
    thetas = [
        np.array(theta) for theta in itertools.product(ticks, repeat=d)
        if np.linalg.norm(theta) <= radius + 1e-12
    ]
    domain = tuple(f'e{i + 1}' for i in range(d))
    return ScalarClass(np.vstack(thetas), domain)


def random_scalar_class(n_functions: int, n_points: int, seed: int,
                        levels: Optional[int] = None) -> ScalarClass:
    '''Clase aleatoria con valores en [0, 1]; levels discretiza los valores'''
    rng = rng_stream(seed, 'scalar_class')
    values = rng.uniform(0.0, 1.0, size=(n_functions, n_points))
    if levels:
        values = np.round(values * (levels - 1)) / (levels - 1)
    return ScalarClass(values, tuple(range(n_points)))


def width_count_bound(M: int, beta: float, eps: float, dimension: int) -> float:
    '''(4Mβ/ε² + 1)·dim_E: máximo de pasos con anchura mayor que ε'''
    if eps <= 0:
        raise ParameterError('eps debe ser positivo')
    if math.isinf(beta):
        return math.inf
    return (4.0 * M * beta / eps ** 2 + 1.0) * dimension
