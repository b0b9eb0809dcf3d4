import math
from typing import Any, List, Optional, Sequence, Tuple
import numpy as np
from models.environment import BanditInstance, MDPInstance
from models.function_class import FeatureClass, FeatureMap, MultiheadFunction
from services.core.erm import project_to_ball
from utils.exceptions import ConstructionError, ParameterError
from utils.helpers import rng_stream
from utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_LATENT_NOISE = 0.01


def permute_and_merge(n_labels: int, rng: np.random.Generator) -> np.ndarray:
    '''Reetiquetado aleatorio que además fusiona un par de etiquetas'''
    mapping = rng.permutation(n_labels)
    keep, merged = rng.choice(n_labels, size=2, replace=False)
    mapping[merged] = mapping[keep]
    return mapping


def _one_hot(index: int, size: int) -> np.ndarray:
    vector = np.zeros(size)
    vector[index] = 1.0
    return vector


def _category_decoder(prototypes: np.ndarray, mapping: np.ndarray, id: int, name: str) -> FeatureMap:
    n_categories = prototypes.shape[0]

    def _eval(x):
        distances = ((prototypes - np.asarray(x, dtype=float)) ** 2).sum(axis=1)
        return _one_hot(int(mapping[int(np.argmin(distances))]), n_categories)

    return FeatureMap(id=id, eval=_eval, dim_k=n_categories, name=name)


def make_latent_category_bandit(categories: int = 10, K: int = 5, M: int = 1,
                                k: Optional[int] = None, seed: int = 0,
                                perturbation: float = 0.1,
                                noise_sigma: float = DEFAULT_LATENT_NOISE,
                                n_decoys: int = 4, obs_dim: Optional[int] = None,
                                task_ids: Optional[Sequence[int]] = None) -> BanditInstance:
    '''
    Bandido de categorías latentes.

    Cada acción es una observación = prototipo de su categoría + ruido gaussiano.
    La recompensa de la tarea i es σ_i(categoría) con σ_i: categorías -> [0, 1].
    La clase contiene el decodificador de prototipo más cercano verdadero y
    n_decoys decodificadores con etiquetas permutadas y fusionadas.
    '''
    k = categories if k is None else k
    if categories < 2 or K < 2:
        raise ParameterError('Se requieren categories >= 2 y K >= 2')
    if k != categories:
        raise ParameterError(f'La codificación one-hot exige k = categories ({k} != {categories})')
    if perturbation < 0 or n_decoys < 0:
        raise ParameterError('perturbation y n_decoys deben ser no negativos')
    task_ids = tuple(range(M)) if task_ids is None else tuple(int(i) for i in task_ids)
    if len(task_ids) != M:
        raise ParameterError('task_ids debe tener M entradas')
    obs_dim = categories if obs_dim is None else obs_dim
    if obs_dim < 1:
        raise ParameterError('obs_dim debe ser >= 1')

    if obs_dim == categories:
        prototypes = np.eye(categories)
    else:
        raw = rng_stream(seed, 'prototypes').standard_normal((categories, obs_dim))
        prototypes = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    prototypes.setflags(write=False)

    true_index = int(rng_stream(seed, 'true_index').integers(n_decoys + 1))
    decoy_rng = rng_stream(seed, 'decoys')
    members = []
    for position in range(n_decoys + 1):
        if position == true_index:
            mapping, name = np.arange(categories), 'decoder_true'
        else:
            mapping, name = permute_and_merge(categories, decoy_rng), f'decoder_decoy_{position}'
        members.append(_category_decoder(prototypes, mapping, position, name))
    cls = FeatureClass(tuple(members), true_index=true_index)

    sigma = np.vstack([
        rng_stream(seed, 'sigma', task_id).uniform(0.0, 1.0, size=categories)
        for task_id in task_ids
    ])
    truth = MultiheadFunction(cls, true_index, sigma.T)

    def sampler(rng: np.random.Generator, task: int) -> List[np.ndarray]:
        labels = rng.choice(categories, size=K, replace=K > categories)
        observations = prototypes[labels] + perturbation * rng.standard_normal((K, obs_dim))
        observations.setflags(write=False)
        return list(observations)

    logger.debug(
        f'Bandido latente: categorías={categories} K={K} M={M} '
        f'decoys={n_decoys} phi*={true_index}'
    )
    return BanditInstance(
        M=M, feature_class=cls, truth=truth, context_sampler=sampler,
        noise_sigma=noise_sigma, task_ids=task_ids, name='latent_category',
        metadata={'prototypes': prototypes, 'sigma': sigma, 'categories': categories, 'K': K},
    )


def category_of(inst: BanditInstance, x: Any) -> int:
    prototypes = inst.metadata['prototypes']
    return int(np.argmin(((prototypes - np.asarray(x, dtype=float)) ** 2).sum(axis=1)))


def latent_category_dataset(inst: BanditInstance, n_per_category: int, seed: int,
                            perturbation: float = 0.1) -> List[Tuple[np.ndarray, int]]:
    '''Entradas etiquetadas por categoría (n_per_category por categoría)'''
    if 'prototypes' not in inst.metadata:
        raise ParameterError('La instancia no es de categorías latentes')
    prototypes = inst.metadata['prototypes']
    rng = rng_stream(seed, 'dataset')
    dataset = []
    for category in range(prototypes.shape[0]):
        for _ in range(n_per_category):
            x = prototypes[category] + perturbation * rng.standard_normal(prototypes.shape[1])
            dataset.append((x, category))
    return dataset


def make_linear_rep_bandit(pool: np.ndarray, matrices: Sequence[np.ndarray], true_index: int,
                           M: int, seed: int = 0, K: int = 5, noise_sigma: float = 0.05,
                           normalize: bool = True) -> BanditInstance:
    '''
    Bandido con representación lineal φ_B(x) = Bx sobre un pool finito.

    Las entradas son índices del pool. Con normalize, cada B se escala para que
    ‖Bx‖ ≤ 1 en todo el pool; sin normalizar, una violación es un error.
    '''
    pool = np.asarray(pool, dtype=float)
    if pool.ndim != 2 or pool.shape[0] == 0:
        raise ConstructionError('El pool debe ser una matriz n x p no vacía')
    if not matrices:
        raise ConstructionError('La clase de matrices está vacía')
    if not 0 <= true_index < len(matrices):
        raise ConstructionError(f'La matriz verdadera {true_index} no está en la clase')
    if K < 1:
        raise ParameterError('K debe ser >= 1')

    members = []
    for position, matrix in enumerate(matrices):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != pool.shape[1]:
            raise ConstructionError(f'La matriz {position} no es k x p con p={pool.shape[1]}')
        table = pool @ matrix.T
        max_norm = float(np.linalg.norm(table, axis=1).max())
        if normalize:
            table = table / max(1.0, max_norm)
        elif max_norm > 1 + 1e-12:
            raise ConstructionError(f'‖φ(x)‖ = {max_norm:.4g} > 1 para la matriz {position}')
        table.setflags(write=False)
        members.append(FeatureMap(
            id=position, eval=lambda i, _table=table: _table[int(i)],
            dim_k=table.shape[1], name=f'linear_{position}'
        ))
    cls = FeatureClass(tuple(members), true_index=true_index)

    k = cls.dim_k
    raw = rng_stream(seed, 'heads').standard_normal((k, M))
    heads = raw / np.linalg.norm(raw, axis=0, keepdims=True)
    truth = MultiheadFunction(cls, true_index, heads)
    n_pool = pool.shape[0]

    def sampler(rng: np.random.Generator, task: int) -> List[int]:
        return [int(i) for i in rng.choice(n_pool, size=K, replace=K > n_pool)]

    return BanditInstance(
        M=M, feature_class=cls, truth=truth, context_sampler=sampler,
        noise_sigma=noise_sigma, name='linear_rep', metadata={'pool': pool, 'K': K},
    )


def random_linear_rep_class(p: int, k: int, n_members: int, pool_size: int,
                            seed: int) -> Tuple[np.ndarray, List[np.ndarray]]:
    '''Pool en la bola unidad y n_members matrices k x p aleatorias'''
    rng = rng_stream(seed, 'linear_rep')
    pool = rng.standard_normal((pool_size, p))
    pool /= np.maximum(np.linalg.norm(pool, axis=1, keepdims=True), 1.0)
    matrices = [rng.standard_normal((k, p)) / math.sqrt(p) for _ in range(n_members)]
    return pool, matrices


def bandit_from_mdp(inst: MDPInstance) -> BanditInstance:
    '''Bandido inducido por un MDP de horizonte 1 (mismos flujos aleatorios)'''
    if inst.H != 1:
        raise ParameterError(f'Solo un MDP de horizonte 1 induce un bandido (H={inst.H})')
    if inst.true_index is None:
        raise ConstructionError('El MDP no declara su representación verdadera')
    cls = inst.feature_class
    features = cls[inst.true_index].batch(inst.all_inputs)
    rewards = inst.rewards[:, 0].reshape(inst.M, -1)
    heads = np.linalg.lstsq(features, rewards.T, rcond=None)[0]
    truth = MultiheadFunction(cls, inst.true_index, project_to_ball(heads, math.sqrt(cls.dim_k)))
    table = inst.rewards[:, 0]

    def sampler(rng: np.random.Generator, task: int):
        state = rng.choice(inst.n_states, p=inst.initial[task])
        return inst.inputs_for_state(state)

    return BanditInstance(
        M=inst.M, feature_class=cls, truth=truth, context_sampler=sampler,
        noise_sigma=inst.noise_sigma, noise_kind='uniform',
        reward_fn=lambda task, x: float(table[task, x[0], x[1]]),
        name=f'{inst.name}_h1',
    )
