import math
from typing import List, Optional, Sequence, Tuple
import numpy as np
from models.function_class import FeatureClass, MultiheadFunction, MultitaskHistory
from utils.exceptions import DimensionError, ParameterError
from utils.logger import get_logger

logger = get_logger(__name__)

# Tolerancia relativa para empates de pérdida entre candidatos
LOSS_TIE_RTOL = 1e-12


def regularized_gram(features: np.ndarray, ridge: float) -> np.ndarray:
    k = features.shape[1]
    return features.T @ features + ridge * np.eye(k)


def ridge_solve(features: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    '''Mínimos cuadrados con regularización ridge: (XᵀX + λI)⁻¹ Xᵀy'''
    return np.linalg.solve(regularized_gram(features, ridge), features.T @ targets)


def project_to_ball(heads: np.ndarray, radius: float) -> np.ndarray:
    '''Escala radialmente cada columna con norma mayor que radius'''
    norms = np.linalg.norm(heads, axis=0)
    scale = np.ones_like(norms)
    over = norms > radius
    scale[over] = radius / norms[over]
    return heads * scale


def _task_targets(history: MultitaskHistory, targets: Optional[Sequence[np.ndarray]],
                  task: int) -> np.ndarray:
    if targets is None:
        return history.rewards(task)
    y = np.asarray(targets[task], dtype=float)
    if y.shape != (history.len(task),):
        raise DimensionError(
            f'Objetivos de la tarea {task}: {y.shape}, se esperaba ({history.len(task)},)'
        )
    return y


def fit_multihead(history: MultitaskHistory, cls: FeatureClass, ridge: float,
                  head_bound: Optional[float] = None,
                  targets: Optional[Sequence[np.ndarray]] = None,
                  value_cap: float = 1.0) -> Tuple[MultiheadFunction, np.ndarray]:
    '''
    Ajuste multicabeza por enumeración de la clase.

    Para cada phi resuelve un ridge por tarea, proyecta las cabezas a la bola
    de radio head_bound y evalúa la pérdida cuadrática total. Devuelve la
    función de menor pérdida (empates: menor índice) y el vector de pérdidas.

    Args:
        history: Historial multitarea (entradas por tarea)
        cls: Clase finita de representaciones
        ridge: Regularización de la matriz de Gram (> 0)
        head_bound: Radio de las cabezas, por defecto √k
        targets: Objetivos por tarea; si es None se usan las recompensas del historial
        value_cap: Cota de las predicciones de la función devuelta
    '''
    if ridge <= 0:
        raise ParameterError(f'ridge debe ser positivo, se recibió {ridge}')
    M, k = history.M, cls.dim_k
    if targets is not None and len(targets) != M:
        raise DimensionError(f'Se esperaban objetivos para {M} tareas, se recibieron {len(targets)}')
    bound = math.sqrt(k) if head_bound is None else float(head_bound)

    if len(history) == 0:
        return MultiheadFunction.zeros(cls, M, 0, value_cap), np.zeros(len(cls))

    losses: List[float] = []
    candidate_heads: List[np.ndarray] = []
    for phi in cls:
        heads = np.zeros((k, M))
        blocks = []
        for task in range(M):
            features = history.features(phi, task)
            if features.shape[0] == 0:
                continue
            y = _task_targets(history, targets, task)
            heads[:, task] = ridge_solve(features, y, ridge)
            blocks.append((task, features, y))
        heads = project_to_ball(heads, bound)
        loss = 0.0
        for task, features, y in blocks:
            residual = features @ heads[:, task] - y
            loss += float(residual @ residual)
        losses.append(loss)
        candidate_heads.append(heads)

    losses_array = np.asarray(losses)
    best_loss = losses_array.min()
    tolerance = LOSS_TIE_RTOL * max(1.0, abs(best_loss))
    best_index = int(np.flatnonzero(losses_array <= best_loss + tolerance)[0])
    logger.debug(f'ERM: phi={best_index} pérdida={best_loss:.6g} candidatos={len(cls)}')
    return (
        MultiheadFunction(cls, best_index, candidate_heads[best_index], value_cap),
        losses_array
    )


def erm_fit(h: MultitaskHistory, cls: FeatureClass, ridge: float) -> MultiheadFunction:
    '''Minimizador empírico sobre F^{⊗M} con cabezas en la bola √k'''
    return fit_multihead(h, cls, ridge)[0]


def total_loss(f: MultiheadFunction, history: MultitaskHistory,
               targets: Optional[Sequence[np.ndarray]] = None) -> float:
    '''Pérdida cuadrática total de las predicciones lineales (sin recorte)'''
    if f.M != history.M:
        raise DimensionError(f'La función tiene {f.M} cabezas y el historial {history.M} tareas')
    loss = 0.0
    for task in range(history.M):
        features = history.features(f.phi, task)
        if features.shape[0] == 0:
            continue
        residual = f.raw_from_features(task, features) - _task_targets(history, targets, task)
        loss += float(residual @ residual)
    return loss


def empirical_sq_distance(f: MultiheadFunction, g: MultiheadFunction,
                          h: MultitaskHistory) -> float:
    '''‖f − g‖²_{2,E}: suma de diferencias cuadráticas de predicción sobre el historial'''
    if f.M != h.M or g.M != h.M:
        raise DimensionError(
            f'Número de tareas incompatible: f={f.M}, g={g.M}, historial={h.M}'
        )
    distance = 0.0
    for task in range(h.M):
        if h.len(task) == 0:
            continue
        diff = (
            f.predict_from_features(task, h.features(f.phi, task))
            - g.predict_from_features(task, h.features(g.phi, task))
        )
        distance += float(diff @ diff)
    return distance
