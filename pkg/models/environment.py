import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
from models.function_class import FeatureClass, FeatureMap, MultiheadFunction
from utils.exceptions import ConstructionError, DimensionError, ParameterError

NOISE_KINDS = ('gaussian', 'uniform')
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ContextDraw:
    '''Contexto de una tarea: una entrada por acción y su recompensa media verdadera'''

    inputs: Tuple[Any, ...]
    means: np.ndarray

    @property
    def best_action(self) -> int:
        return int(np.argmax(self.means))

    @property
    def best_mean(self) -> float:
        return float(np.max(self.means))

    def regret(self, action: int) -> float:
        return self.best_mean - float(self.means[action])


def sample_noise(rng: np.random.Generator, sigma: float, kind: str) -> float:
    if sigma == 0:
        return 0.0
    if kind == 'uniform':
        return float(rng.uniform(-sigma, sigma))
    return float(rng.normal(0.0, sigma))


@dataclass(frozen=True, eq=False)
class BanditInstance:
    '''
    Bandido contextual multitarea con verdad conocida.

    context_sampler(rng, task) devuelve la lista de entradas del contexto (una
    por acción). La recompensa media es reward_fn(task, x) si se define, si no
    la predicción de la función verdadera.
    '''

    M: int
    feature_class: FeatureClass
    truth: MultiheadFunction
    context_sampler: Callable[[np.random.Generator, int], Sequence[Any]]
    noise_sigma: float = 0.01
    noise_kind: str = 'gaussian'
    reward_fn: Optional[Callable[[int, Any], float]] = None
    task_ids: Tuple[int, ...] = ()
    name: str = 'bandit'
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.M < 1:
            raise ParameterError('M debe ser >= 1')
        if self.truth.M != self.M:
            raise DimensionError(f'La verdad tiene {self.truth.M} cabezas, se esperaban {self.M}')
        if self.truth.feature_class is not self.feature_class:
            raise ConstructionError('La verdad debe pertenecer a la clase de la instancia')
        if not 0 <= self.noise_sigma <= 1:
            raise ParameterError(f'noise_sigma debe estar en [0, 1], se recibió {self.noise_sigma}')
        if self.noise_kind not in NOISE_KINDS:
            raise ParameterError(f'Tipo de ruido desconocido: {self.noise_kind}')
        head_norms = np.linalg.norm(self.truth.heads, axis=0)
        if np.any(head_norms > math.sqrt(self.feature_class.dim_k) + 1e-9):
            raise ConstructionError('Las cabezas verdaderas deben cumplir ‖θ_i‖ ≤ √k')
        if not self.task_ids:
            object.__setattr__(self, 'task_ids', tuple(range(self.M)))
        elif len(self.task_ids) != self.M:
            raise DimensionError('task_ids debe tener una entrada por tarea')

    @property
    def true_index(self) -> Optional[int]:
        return self.feature_class.true_index

    def mean_reward(self, task: int, x: Any) -> float:
        if self.reward_fn is not None:
            return float(self.reward_fn(task, x))
        return self.truth.predict(task, x)

    def draw_context(self, rng: np.random.Generator, task: int) -> ContextDraw:
        inputs = tuple(self.context_sampler(rng, task))
        return self.context_from_inputs(task, inputs)

    def context_from_inputs(self, task: int, inputs: Sequence[Any]) -> ContextDraw:
        if len(inputs) == 0:
            raise ParameterError('El contexto no tiene acciones')
        means = np.array([self.mean_reward(task, x) for x in inputs])
        if np.any(np.abs(means) > 1 + 1e-12):
            raise ConstructionError('Las recompensas medias deben estar en [-1, 1]')
        return ContextDraw(tuple(inputs), means)

    def sample_noise(self, rng: np.random.Generator) -> float:
        return sample_noise(rng, self.noise_sigma, self.noise_kind)


@dataclass(frozen=True, eq=False)
class MDPInstance:
    '''
    MDP episódico multitarea tabular con clase de features sobre (s, a).

    transitions: (M, H, S, A, S), rewards: (M, H, S, A), initial: (M, S).
    '''

    n_states: int
    n_actions: int
    H: int
    transitions: np.ndarray
    rewards: np.ndarray
    initial: np.ndarray
    feature_class: FeatureClass
    noise_sigma: float = 0.0
    head_bound: Optional[float] = None
    name: str = 'mdp'
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        M = self.initial.shape[0]
        S, A, H = self.n_states, self.n_actions, self.H
        if self.transitions.shape != (M, H, S, A, S):
            raise DimensionError(f'transitions debe tener forma {(M, H, S, A, S)}')
        if self.rewards.shape != (M, H, S, A):
            raise DimensionError(f'rewards debe tener forma {(M, H, S, A)}')
        if self.initial.shape != (M, S):
            raise DimensionError(f'initial debe tener forma {(M, S)}')
        if np.any(self.transitions < 0) or np.any(np.abs(self.transitions.sum(axis=-1) - 1) > ROW_SUM_TOL):
            raise ConstructionError('Las filas de transición deben ser distribuciones')
        if np.any(np.abs(self.initial.sum(axis=-1) - 1) > ROW_SUM_TOL):
            raise ConstructionError('La distribución inicial debe sumar 1')
        if not 0 <= self.noise_sigma <= 1:
            raise ParameterError('noise_sigma debe estar en [0, 1]')
        if self.head_bound is None:
            object.__setattr__(self, 'head_bound', math.sqrt(self.feature_class.dim_k))
        for array in (self.transitions, self.rewards, self.initial):
            array.setflags(write=False)

    @property
    def M(self) -> int:
        return self.initial.shape[0]

    @property
    def true_index(self) -> Optional[int]:
        return self.feature_class.true_index

    def inputs_for_state(self, state: int) -> List[Tuple[int, int]]:
        return [(int(state), a) for a in range(self.n_actions)]

    @cached_property
    def all_inputs(self) -> List[Tuple[int, int]]:
        return [(s, a) for s in range(self.n_states) for a in range(self.n_actions)]

    @cached_property
    def optimal_q(self) -> np.ndarray:
        '''Q* exacta por iteración de valor hacia atrás, forma (M, H, S, A)'''
        q = np.zeros((self.M, self.H, self.n_states, self.n_actions))
        v_next = np.zeros((self.M, self.n_states))
        for h in reversed(range(self.H)):
            q[:, h] = self.rewards[:, h] + np.einsum('isaj,ij->isa', self.transitions[:, h], v_next)
            v_next = q[:, h].max(axis=-1)
        q.setflags(write=False)
        return q

    @cached_property
    def optimal_v(self) -> np.ndarray:
        '''V* de forma (M, H, S)'''
        v = self.optimal_q.max(axis=-1)
        v.setflags(write=False)
        return v

    def sample_noise(self, rng: np.random.Generator) -> float:
        return sample_noise(rng, self.noise_sigma, 'uniform')


@dataclass(frozen=True, eq=False)
class TransferTask:
    '''Tarea nueva cuya verdad es la mezcla Σ λ_i f^{(i)} de las tareas de entrenamiento'''

    source: BanditInstance
    mixture: np.ndarray
    bound: float = 1.0
    frozen_phi: Optional[FeatureMap] = None
    context_task: int = 0

    def __post_init__(self):
        mixture = np.array(self.mixture, dtype=float)
        if mixture.shape != (self.source.M,):
            raise DimensionError(f'La mezcla debe tener {self.source.M} componentes')
        if np.abs(mixture).sum() > self.bound + 1e-12:
            raise ParameterError(
                f'Σ|λ| = {np.abs(mixture).sum():.4g} excede la cota {self.bound}'
            )
        mixture.setflags(write=False)
        object.__setattr__(self, 'mixture', mixture)

    def mean_reward(self, x: Any) -> float:
        value = sum(
            weight * self.source.mean_reward(task, x)
            for task, weight in enumerate(self.mixture) if weight != 0
        )
        return float(np.clip(value, -1.0, 1.0))

    def with_representation(self, phi: FeatureMap) -> 'TransferTask':
        return dataclasses.replace(self, frozen_phi=phi)

    def draw_context(self, rng: np.random.Generator) -> ContextDraw:
        inputs = tuple(self.source.context_sampler(rng, self.context_task))
        return ContextDraw(inputs, np.array([self.mean_reward(x) for x in inputs]))

    def sample_noise(self, rng: np.random.Generator) -> float:
        return self.source.sample_noise(rng)
