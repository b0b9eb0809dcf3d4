'''
Entornos MDP multitarea: laberinto en rejilla y MDP lineal aleatorio.

Ambos construyen MDPInstance con transiciones y recompensas tabulares y una
clase de features sobre pares (s, a) que incluye la representación verdadera.
'''
from collections import deque
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence, Tuple
import numpy as np
from models.environment import MDPInstance
from models.function_class import FeatureClass, tabular_feature_map
from services.bandit.environments import permute_and_merge
from utils.exceptions import ConstructionError, ParameterError
from utils.helpers import rng_stream
from utils.logger import get_logger

logger = get_logger(__name__)

Cell = Tuple[int, int]

MAZE_SIZE = 4
MAZE_HORIZON = 20
STEP_REWARD = -0.01
LAVA_REWARD = -0.1
EXIT_REWARD = 1.0
MAX_LAVA = 2

# arriba, abajo, izquierda, derecha
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class MazeLayout:
    '''Variante de laberinto de una tarea'''

    start: Cell
    exit: Cell
    lava: Tuple[Cell, ...] = ()
    walls: FrozenSet[Tuple[Cell, Cell]] = field(default_factory=frozenset)

    def blocked(self, a: Cell, b: Cell) -> bool:
        return (a, b) in self.walls or (b, a) in self.walls


def _inside(cell: Cell, size: int) -> bool:
    return 0 <= cell[0] < size and 0 <= cell[1] < size


def _move(layout: MazeLayout, cell: Cell, action: int, size: int) -> Cell:
    if cell == layout.exit:
        return cell
    target = (cell[0] + MOVES[action][0], cell[1] + MOVES[action][1])
    if not _inside(target, size) or layout.blocked(cell, target):
        return cell
    return target


def _validate_layout(layout: MazeLayout, size: int):
    cells = [layout.start, layout.exit, *layout.lava]
    if any(not _inside(cell, size) for cell in cells):
        raise ConstructionError(f'Celda fuera de la rejilla {size}x{size}: {layout}')
    if len(layout.lava) > MAX_LAVA:
        raise ConstructionError(f'Como máximo {MAX_LAVA} celdas de lava')
    if layout.exit in layout.lava:
        raise ConstructionError('La salida no puede ser lava')

    seen = {layout.start}
    queue = deque([layout.start])
    while queue:
        cell = queue.popleft()
        for action in range(len(MOVES)):
            nxt = _move(layout, cell, action, size)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if layout.exit not in seen:
        raise ConstructionError(f'Salida {layout.exit} inalcanzable desde {layout.start}')


def _tabular_one_hot(n_states: int, n_actions: int, mapping: Optional[np.ndarray] = None) -> np.ndarray:
    k = n_states * n_actions
    labels = np.arange(k) if mapping is None else mapping
    table = np.zeros((n_states, n_actions, k))
    for s in range(n_states):
        for a in range(n_actions):
            table[s, a, labels[s * n_actions + a]] = 1.0
    return table


def tabular_class(n_states: int, n_actions: int, n_decoys: int, seed: int) -> FeatureClass:
    '''One-hot verdadero sobre (s, a) más decoys permutados y fusionados'''
    k = n_states * n_actions
    true_index = int(rng_stream(seed, 'true_index').integers(n_decoys + 1))
    decoy_rng = rng_stream(seed, 'decoys')
    members = []
    for position in range(n_decoys + 1):
        if position == true_index:
            table, name = _tabular_one_hot(n_states, n_actions), 'tabular_true'
        else:
            table = _tabular_one_hot(n_states, n_actions, permute_and_merge(k, decoy_rng))
            name = f'tabular_decoy_{position}'
        members.append(tabular_feature_map(position, table, name))
    return FeatureClass(tuple(members), true_index=true_index)


def make_grid_maze(layouts: Sequence[MazeLayout], noise_sigma: float = 0.0, n_decoys: int = 3,
                   seed: int = 0, H: int = MAZE_HORIZON, size: int = MAZE_SIZE) -> MDPInstance:
    '''
    Laberinto en rejilla 4x4, una variante por tarea.

    Moverse cuesta −0.01, entrar en lava −0.1 y llegar a la salida da +1
    (−0.01 del paso incluido); la salida es absorbente con recompensa 0.
    Un movimiento bloqueado por pared o borde deja la posición igual.
    '''
    if not layouts:
        raise ParameterError('Se requiere al menos una variante de laberinto')
    for layout in layouts:
        _validate_layout(layout, size)

    M, S, A = len(layouts), size * size, len(MOVES)
    transitions = np.zeros((M, H, S, A, S))
    rewards = np.zeros((M, H, S, A))
    initial = np.zeros((M, S))
    for task, layout in enumerate(layouts):
        initial[task, layout.start[0] * size + layout.start[1]] = 1.0
        for s in range(S):
            cell = divmod(s, size)
            for a in range(A):
                nxt = _move(layout, cell, a, size)
                transitions[task, :, s, a, nxt[0] * size + nxt[1]] = 1.0
                if cell == layout.exit:
                    reward = 0.0
                elif nxt == layout.exit:
                    reward = EXIT_REWARD + STEP_REWARD
                elif nxt in layout.lava:
                    reward = LAVA_REWARD
                else:
                    reward = STEP_REWARD
                rewards[task, :, s, a] = reward

    logger.debug(f'Laberinto: M={M} H={H} decoys={n_decoys}')
    return MDPInstance(
        n_states=S, n_actions=A, H=H, transitions=transitions, rewards=rewards,
        initial=initial, feature_class=tabular_class(S, A, n_decoys, seed),
        noise_sigma=noise_sigma, name='grid_maze', metadata={'layouts': tuple(layouts), 'size': size},
    )


def random_maze_layouts(M: int, seed: int, size: int = MAZE_SIZE) -> List[MazeLayout]:
    '''Variantes con salida en la esquina inferior derecha, inicio y lava aleatorios'''
    exit_cell = (size - 1, size - 1)
    cells = [(r, c) for r in range(size) for c in range(size) if (r, c) != exit_cell]
    layouts = []
    for task in range(M):
        rng = rng_stream(seed, 'maze', task)
        start = cells[int(rng.integers(len(cells)))]
        free = [cell for cell in cells if cell != start]
        n_lava = int(rng.integers(MAX_LAVA + 1))
        picks = rng.choice(len(free), size=n_lava, replace=False)
        lava = tuple(sorted(free[int(i)] for i in picks))
        layouts.append(MazeLayout(start=start, exit=exit_cell, lava=lava))
    return layouts


def steps_to_exit(layout: MazeLayout, size: int = MAZE_SIZE) -> int:
    '''Distancia BFS del inicio a la salida'''
    distance = {layout.start: 0}
    queue = deque([layout.start])
    while queue:
        cell = queue.popleft()
        if cell == layout.exit:
            return distance[cell]
        for action in range(len(MOVES)):
            nxt = _move(layout, cell, action, size)
            if nxt not in distance:
                distance[nxt] = distance[cell] + 1
                queue.append(nxt)
    raise ConstructionError('Salida inalcanzable')


def make_random_linear_mdp(k: int, n_states: int, n_actions: int, H: int, M: int, seed: int = 0,
                           noise_sigma: float = 0.0, n_decoys: int = 3) -> MDPInstance:
    '''
    MDP lineal con φ*(s, a) en el símplex de k factores latentes.

    P_h(·|s,a) = Σ_j φ*_j(s,a) μ_{h,j}(·) y r_h = φ*ᵀθ_h con θ_h ∈ [0, 1/H]^k,
    así que Q ∈ [0, 1] y el error de Bellman inherente de la clase verdadera es 0.
    '''
    if k > n_states * n_actions:
        raise ParameterError(f'k={k} excede |S||A|={n_states * n_actions}')
    if min(k, n_states, n_actions, H, M) < 1:
        raise ParameterError('k, |S|, |A|, H y M deben ser >= 1')

    def simplex_table(rng) -> np.ndarray:
        return rng.dirichlet(np.ones(k), size=n_states * n_actions).reshape(n_states, n_actions, k)

    phi_star = simplex_table(rng_stream(seed, 'phi_star'))
    flat = phi_star.reshape(-1, k)
    transitions = np.zeros((M, H, n_states, n_actions, n_states))
    rewards = np.zeros((M, H, n_states, n_actions))
    for task in range(M):
        rng = rng_stream(seed, 'task', task)
        for h in range(H):
            mu = rng.dirichlet(np.ones(n_states), size=k)
            kernel = flat @ mu
            kernel /= kernel.sum(axis=1, keepdims=True)
            transitions[task, h] = kernel.reshape(n_states, n_actions, n_states)
            theta = rng.uniform(0.0, 1.0 / H, size=k)
            rewards[task, h] = (flat @ theta).reshape(n_states, n_actions)
    initial = np.full((M, n_states), 1.0 / n_states)

    true_index = int(rng_stream(seed, 'true_index').integers(n_decoys + 1))
    decoy_rng = rng_stream(seed, 'decoys')
    members = []
    for position in range(n_decoys + 1):
        table = phi_star if position == true_index else simplex_table(decoy_rng)
        name = 'simplex_true' if position == true_index else f'simplex_decoy_{position}'
        members.append(tabular_feature_map(position, table, name))
    cls = FeatureClass(tuple(members), true_index=true_index)

    return MDPInstance(
        n_states=n_states, n_actions=n_actions, H=H, transitions=transitions,
        rewards=rewards, initial=initial, feature_class=cls, noise_sigma=noise_sigma,
        name='random_linear_mdp',
    )
