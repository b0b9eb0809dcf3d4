'''
Transferencia de representación: se congela el φ aprendido por GFUCB y se
resuelve una tarea nueva (mezcla de las tareas de entrenamiento) con LinUCB.
'''
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Tuple
import numpy as np
from models.environment import BanditInstance, TransferTask
from models.function_class import FeatureMap
from models.trace import RegretTrace
from services.bandit.gfucb import GFUCBState
from services.core.beta import linucb_radius
from utils.exceptions import DataError, ParameterError
from utils.helpers import rng_stream
from utils.logger import get_logger

logger = get_logger(__name__)


def sherman_morrison_update(a_inv: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    '''(A + uvᵀ)⁻¹ a partir de A⁻¹'''
    a_inv_u = a_inv @ u
    v_a_inv = v @ a_inv
    return a_inv - np.outer(a_inv_u, v_a_inv) / (1.0 + v @ a_inv_u)


@dataclass
class LinUCBState:
    '''Regresión ridge en línea: V = λI + Σ φφᵀ, b = Σ φ·r'''

    V: np.ndarray
    V_inv: np.ndarray
    b: np.ndarray
    lambda_reg: float
    step: int = 0
    _features: List[np.ndarray] = field(default_factory=list, repr=False)

    @classmethod
    def initial(cls, k: int, lambda_reg: float = 1.0) -> 'LinUCBState':
        if lambda_reg <= 0:
            raise ParameterError('lambda_reg debe ser positivo')
        return cls(lambda_reg * np.eye(k), np.eye(k) / lambda_reg, np.zeros(k), lambda_reg)

    @property
    def theta(self) -> np.ndarray:
        return self.V_inv @ self.b

    def update(self, features: np.ndarray, reward: float):
        self.V = self.V + np.outer(features, features)
        self.V_inv = sherman_morrison_update(self.V_inv, features, features)
        self.b = self.b + reward * features
        self.step += 1
        self._features.append(np.array(features, dtype=float))

    def recompute_gram(self) -> np.ndarray:
        '''V desde cero: λI + Σ φφᵀ'''
        k = self.b.shape[0]
        gram = self.lambda_reg * np.eye(k)
        for features in self._features:
            gram += np.outer(features, features)
        return gram

    def bonus_base(self, features: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(np.einsum('ak,kl,al->a', features, self.V_inv, features), 0.0))


def extract_representation(state: GFUCBState) -> Tuple[FeatureMap, np.ndarray]:
    '''φ̂_T y cabezas Ŵ_T del ERM final de la fase de preentrenamiento'''
    if state is None or state.center is None:
        raise DataError('No hay estado de preentrenamiento')
    return state.center.phi, np.array(state.center.heads)


def synthesize_target_task(inst: BanditInstance, mixture: Sequence[float],
                           bound: float = 1.0) -> TransferTask:
    '''Tarea objetivo f^{(M+1)} = Σ λ_i f^{(i)} con el muestreador de contextos de inst'''
    return TransferTask(source=inst, mixture=np.asarray(mixture, dtype=float), bound=bound)


def random_mixture(M: int, seed: int, index: int, bound: float = 1.0) -> np.ndarray:
    '''Mezcla aleatoria con Σ|λ| = bound'''
    rng = rng_stream(seed, 'mixture', index)
    weights = rng.uniform(-1.0, 1.0, size=M)
    return bound * weights / np.abs(weights).sum()


def linucb_transfer_run(task: TransferTask, t: int, lambda_reg: float = 1.0, delta: float = 0.1,
                        seed: int = 0, phi: Optional[FeatureMap] = None,
                        ucb_scale: float = 1.0) -> RegretTrace:
    '''
    LinUCB sobre la representación congelada.

    Primero juega la acción 0 del contexto inicial (paso s = 0, fuera del
    regret) y luego t pasos con bonus ucb_scale·β_s·√(φᵀV⁻¹φ).
    '''
    if t < 1:
        raise ParameterError('t debe ser >= 1')
    if ucb_scale < 0:
        raise ParameterError('ucb_scale debe ser no negativo')
    phi = phi or task.frozen_phi
    if phi is None:
        raise ParameterError('La tarea no tiene representación congelada')
    k = phi.dim_k
    state = LinUCBState.initial(k, lambda_reg)
    trace = RegretTrace(M=1, kind='transfer')

    draw = task.draw_context(rng_stream(seed, 0, 0, 'context'))
    reward = float(draw.means[0]) + task.sample_noise(rng_stream(seed, 0, 0, 'noise'))
    state.update(phi(draw.inputs[0]), reward)

    for s in range(1, t + 1):
        draw = task.draw_context(rng_stream(seed, 0, s, 'context'))
        features = phi.batch(draw.inputs)
        radius = linucb_radius(s, k, lambda_reg, delta)
        bonus = ucb_scale * radius * state.bonus_base(features)
        action = int(np.argmax(features @ state.theta + bonus))
        reward = float(draw.means[action]) + task.sample_noise(rng_stream(seed, 0, s, 'noise'))
        trace.add(s, 0, action, reward, draw.regret(action), radius, 2.0 * float(bonus[action]))
        state.update(features[action], reward)

    trace.final_state = state
    logger.debug(f'LinUCB transferencia ({phi.name}): regret={trace.total_regret():.4f}')
    return trace


def mixture_prediction_error(state: GFUCBState, task: TransferTask,
                             test_inputs: Sequence[Any]) -> float:
    '''max_x |Σ λ_i f̂^{(i)}(x) − f^{(M+1)}(x)| sobre las entradas de prueba'''
    if len(test_inputs) == 0:
        raise DataError('Se requieren entradas de prueba')
    center = state.center
    features = center.phi.batch(test_inputs)
    predictions = np.vstack([
        center.predict_from_features(i, features) for i in range(center.M)
    ])
    mixed = task.mixture @ predictions
    truth = np.array([task.mean_reward(x) for x in test_inputs])
    return float(np.abs(mixed - truth).max())
