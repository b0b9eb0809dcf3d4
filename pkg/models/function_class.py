import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple
import numpy as np
from utils.exceptions import DimensionError, ParameterError


@dataclass(frozen=True, eq=False)
class FeatureMap:
    '''Miembro de la clase de representaciones: entrada -> vector real de dimensión k'''

    id: int
    eval: Callable[[Any], np.ndarray]
    dim_k: int
    name: str = ''

    def __call__(self, x: Any) -> np.ndarray:
        vector = np.asarray(self.eval(x), dtype=float)
        if vector.shape != (self.dim_k,):
            raise DimensionError(
                f'phi {self.id} devolvió forma {vector.shape}, se esperaba ({self.dim_k},)'
            )
        return vector

    def batch(self, inputs: Sequence[Any]) -> np.ndarray:
        '''Evalúa una secuencia de entradas, devuelve matriz n x k'''
        if len(inputs) == 0:
            return np.zeros((0, self.dim_k))
        return np.vstack([self(x) for x in inputs])

    def max_norm(self, domain: Sequence[Any]) -> float:
        if len(domain) == 0:
            return 0.0
        return float(np.linalg.norm(self.batch(domain), axis=1).max())


def tabular_feature_map(id: int, table: np.ndarray, name: str = '') -> FeatureMap:
    '''FeatureMap sobre pares (s, a) respaldado por una tabla S x A x k'''
    table = np.array(table, dtype=float)
    table.setflags(write=False)
    if table.ndim != 3:
        raise DimensionError('La tabla de features debe tener forma (S, A, k)')

    def _eval(x):
        s, a = x
        return table[s, a]

    return FeatureMap(id=id, eval=_eval, dim_k=table.shape[2], name=name or f'tabular_{id}')


@dataclass(frozen=True, eq=False)
class FeatureClass:
    '''Clase finita y ordenada de representaciones Phi'''

    members: Tuple[FeatureMap, ...]
    true_index: Optional[int] = None

    def __post_init__(self):
        members = tuple(self.members)
        object.__setattr__(self, 'members', members)
        if not members:
            raise ParameterError('La clase de representaciones no puede estar vacía')
        dims = {m.dim_k for m in members}
        if len(dims) != 1:
            raise DimensionError(f'Todos los miembros deben compartir k, se encontró {sorted(dims)}')
        for position, member in enumerate(members):
            if member.id != position:
                raise ParameterError(f'El miembro en la posición {position} tiene id {member.id}')
        if self.true_index is not None and not 0 <= self.true_index < len(members):
            raise ParameterError(f'true_index {self.true_index} fuera de rango')

    @property
    def dim_k(self) -> int:
        return self.members[0].dim_k

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, index: int) -> FeatureMap:
        return self.members[index]

    def __iter__(self) -> Iterator[FeatureMap]:
        return iter(self.members)

    def log_cover(self, alpha: float) -> float:
        '''ln N(Phi, alpha): una clase finita se cubre a sí misma'''
        if alpha < 0:
            raise ParameterError('alpha debe ser no negativo')
        return math.log(len(self.members))

    def check_domain(self, domain: Sequence[Any], tol: float = 1e-12) -> bool:
        '''Verifica ||phi(x)|| <= 1 sobre un dominio finito (o una muestra)'''
        return all(member.max_norm(domain) <= 1.0 + tol for member in self.members)


@dataclass(frozen=True, eq=False)
class MultiheadFunction:
    '''Función de F^{xM}: un índice de representación compartido y una matriz de cabezas k x M'''

    feature_class: FeatureClass
    phi_index: int
    heads: np.ndarray
    value_cap: float = 1.0

    def __post_init__(self):
        if not 0 <= self.phi_index < len(self.feature_class):
            raise ParameterError(
                f'phi_index {self.phi_index} fuera de rango [0, {len(self.feature_class)})'
            )
        heads = np.array(self.heads, dtype=float)
        if heads.ndim != 2 or heads.shape[0] != self.feature_class.dim_k:
            raise DimensionError(
                f'heads debe ser k x M con k={self.feature_class.dim_k}, se recibió {heads.shape}'
            )
        heads.setflags(write=False)
        object.__setattr__(self, 'heads', heads)

    @classmethod
    def zeros(cls, feature_class: FeatureClass, M: int, phi_index: int = 0,
              value_cap: float = 1.0) -> 'MultiheadFunction':
        return cls(feature_class, phi_index, np.zeros((feature_class.dim_k, M)), value_cap)

    @property
    def M(self) -> int:
        return self.heads.shape[1]

    @property
    def phi(self) -> FeatureMap:
        return self.feature_class[self.phi_index]

    def raw_from_features(self, task: int, features: np.ndarray) -> np.ndarray:
        return features @ self.heads[:, task]

    def predict_from_features(self, task: int, features: np.ndarray) -> np.ndarray:
        return np.clip(self.raw_from_features(task, features), -self.value_cap, self.value_cap)

    def predict(self, task: int, x: Any) -> float:
        return float(self.predict_from_features(task, self.phi(x)[None, :])[0])

    def predict_batch(self, task: int, inputs: Sequence[Any]) -> np.ndarray:
        return self.predict_from_features(task, self.phi.batch(inputs))


class _FeatureBlock:
    '''Matriz de features de una tarea, extendida perezosamente'''

    __slots__ = ('rows', 'count')

    def __init__(self, dim_k: int):
        self.rows = np.zeros((0, dim_k))
        self.count = 0


class MultitaskHistory:
    '''
    Historial E_t: por tarea, secuencia de (entrada, recompensa).

    Solo admite append. Las matrices de features por representación se
    calculan una vez por muestra y quedan en caché.
    '''

    def __init__(self, M: int):
        if M < 1:
            raise ParameterError('M debe ser >= 1')
        self._M = M
        self._inputs: List[List[Any]] = [[] for _ in range(M)]
        self._rewards: List[List[float]] = [[] for _ in range(M)]
        self._cache: Dict[FeatureMap, List[_FeatureBlock]] = {}

    @property
    def M(self) -> int:
        return self._M

    def len(self, task: int) -> int:
        self._check_task(task)
        return len(self._inputs[task])

    def __len__(self) -> int:
        return sum(len(inputs) for inputs in self._inputs)

    def _check_task(self, task: int):
        if not 0 <= task < self._M:
            raise DimensionError(f'Tarea {task} fuera de rango [0, {self._M})')

    def append(self, task: int, x: Any, reward: float):
        self._check_task(task)
        self._inputs[task].append(x)
        self._rewards[task].append(float(reward))

    def inputs(self, task: int) -> List[Any]:
        self._check_task(task)
        return list(self._inputs[task])

    def rewards(self, task: int) -> np.ndarray:
        self._check_task(task)
        return np.asarray(self._rewards[task], dtype=float)

    def features(self, phi: FeatureMap, task: int) -> np.ndarray:
        '''Matriz n_i x k de phi evaluada sobre las entradas de la tarea'''
        self._check_task(task)
        blocks = self._cache.get(phi)
        if blocks is None:
            blocks = [_FeatureBlock(phi.dim_k) for _ in range(self._M)]
            self._cache[phi] = blocks
        block = blocks[task]
        pending = self._inputs[task][block.count:]
        if pending:
            block.rows = np.vstack([block.rows, phi.batch(pending)])
            block.count = len(self._inputs[task])
        return block.rows
