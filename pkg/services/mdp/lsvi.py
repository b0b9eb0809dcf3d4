import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union
import numpy as np
from config.settings import settings
from models.environment import MDPInstance
from models.function_class import FeatureClass, FeatureMap, MultiheadFunction, MultitaskHistory
from models.trace import EpisodeLog, RegretTrace, Transition
from services.core.beta import THEORY, BetaMode, beta_mdp, resolve_alpha
from services.core.confidence import ConfidenceSet, Strategy, optimistic_policy
from services.core.erm import fit_multihead
from utils.exceptions import ParameterError
from utils.helpers import rng_stream
from utils.logger import get_logger

logger = get_logger(__name__)

TARGET_LOW, TARGET_HIGH = -1.0, 2.0
VALUE_TOL = 1e-9


@dataclass(frozen=True)
class LSVIConfig:
    '''Parámetros de una corrida LSVI multitarea'''

    delta: float = 0.1
    alpha: Union[float, str] = 'auto'
    ridge: float = field(default_factory=lambda: settings.RIDGE)
    strategy: Strategy = Strategy.DECOUPLED
    beta_mode: BetaMode = THEORY
    ibe: float = 0.0
    head_bound: Optional[float] = None


@dataclass
class MDPRunState:
    episode_log: EpisodeLog
    histories: List[MultitaskHistory]
    centers: List[MultiheadFunction]
    # política del último episodio, forma (H, M, S)
    last_policy: np.ndarray


def level_history(data: EpisodeLog, h: int) -> MultitaskHistory:
    history = MultitaskHistory(data.M)
    for task in range(data.M):
        for transition in data.transitions(h, task):
            history.append(task, (transition.state, transition.action), transition.reward)
    return history


def lsvi_fit_level(h: int, data: EpisodeLog, V_next: Optional[np.ndarray], cls: FeatureClass,
                   ridge: float, D: float, value_cap: float = 1.0,
                   history: Optional[MultitaskHistory] = None) -> MultiheadFunction:
    '''
    Ajuste de Q_h: regresión por phi de r + V_{h+1}(s') sobre φ(s, a).

    Los objetivos se recortan a [−1, 2]. history, si se pasa, debe contener las
    transiciones del nivel h en el mismo orden que data (reutiliza su caché).
    '''
    if V_next is not None:
        V_next = np.asarray(V_next, dtype=float)
        if V_next.ndim != 2 or V_next.shape[0] != data.M:
            raise ParameterError('V_next debe tener forma (M, S)')
        if np.any(V_next < -VALUE_TOL) or np.any(V_next > 1 + VALUE_TOL):
            raise ParameterError('V_next debe estar en [0, 1]')
    history = history if history is not None else level_history(data, h)
    targets = []
    for task in range(data.M):
        transitions = data.transitions(h, task)
        rewards = np.array([tr.reward for tr in transitions], dtype=float)
        if V_next is not None and transitions:
            rewards = rewards + V_next[task, [tr.next_state for tr in transitions]]
        targets.append(np.clip(rewards, TARGET_LOW, TARGET_HIGH))
    return fit_multihead(history, cls, ridge, head_bound=D, targets=targets, value_cap=value_cap)[0]


def induced_values(f: MultiheadFunction, inst: MDPInstance,
                   all_features: Dict[FeatureMap, np.ndarray]) -> np.ndarray:
    '''V_h(s) = clamp(max_a f(s, a), 0, 1), forma (M, S)'''
    features = all_features.get(f.phi)
    if features is None:
        features = f.phi.batch(inst.all_inputs)
        all_features[f.phi] = features
    values = np.zeros((inst.M, inst.n_states))
    for task in range(inst.M):
        q = f.predict_from_features(task, features).reshape(inst.n_states, inst.n_actions)
        values[task] = np.clip(q.max(axis=1), 0.0, 1.0)
    return values


def policy_values(inst: MDPInstance, policy: np.ndarray) -> np.ndarray:
    '''
    V^π exacta por inducción hacia atrás, forma (M, H, S).

    policy tiene forma (H, M, S): acción de cada tarea en cada estado y nivel.
    '''
    policy = np.asarray(policy, dtype=int)
    M, H, S = inst.M, inst.H, inst.n_states
    if policy.shape != (H, M, S):
        raise ParameterError(f'policy debe tener forma {(H, M, S)}, se recibió {policy.shape}')
    if np.any(policy < 0) or np.any(policy >= inst.n_actions):
        raise ParameterError('policy contiene acciones fuera de rango')
    states = np.arange(S)
    values = np.zeros((M, H, S))
    v_next = np.zeros((M, S))
    for h in reversed(range(H)):
        for task in range(M):
            actions = policy[h, task]
            reward = inst.rewards[task, h, states, actions]
            moves = inst.transitions[task, h, states, actions]
            values[task, h] = reward + moves @ v_next[task]
        v_next = values[:, h]
    return values


def reachable_next(inst: MDPInstance, task: int, h: int, states, actions: np.ndarray) -> List[int]:
    '''Estados con probabilidad positiva en h + 1 desde states siguiendo actions'''
    states = np.asarray(list(states), dtype=int)
    mass = inst.transitions[task, h, states, actions[states]].sum(axis=0)
    return np.flatnonzero(mass > 0).tolist()


def mtlsvi_run(inst: MDPInstance, T: int, cfg: Optional[LSVIConfig] = None,
               seed: int = 0) -> RegretTrace:
    '''
    LSVI multitarea con conjuntos de confianza funcionales por nivel.

    Cada episodio recalcula el pase hacia atrás completo h = H..1 y luego actúa
    de forma optimista hacia adelante. En cada nivel se fija la acción optimista
    de cada tarea en todos los estados (con las demás tareas en su estado
    actual); el regret del episodio es V*_1(s_1) − V^π_1(s_1) de esa política,
    evaluada de forma exacta. Solo se evalúan los estados alcanzables desde s_1
    bajo la propia política; los demás no afectan a V^π_1(s_1).
    '''
    if T < 1:
        raise ParameterError('T debe ser >= 1')
    cfg = cfg or LSVIConfig()
    cls = inst.feature_class
    M, H, k = inst.M, inst.H, cls.dim_k
    D = inst.head_bound if cfg.head_bound is None else cfg.head_bound
    alpha = resolve_alpha(cfg.alpha, k, M, T)
    log_cover = cls.log_cover(alpha)
    v_star = inst.optimal_v
    state_inputs = [inst.inputs_for_state(s) for s in range(inst.n_states)]

    log = EpisodeLog(M, H)
    histories = [MultitaskHistory(M) for _ in range(H)]
    all_features: Dict[FeatureMap, np.ndarray] = {}
    trace = RegretTrace(M=M, kind='mdp')
    centers: List[MultiheadFunction] = []
    policy = np.zeros((H, M, inst.n_states), dtype=int)
    logger.info(f'🧭 MTLSVI {inst.name}: M={M} H={H} |S|={inst.n_states} |Φ|={len(cls)} T={T}')

    for t in range(1, T + 1):
        centers = [None] * H
        V_next = None
        for h in reversed(range(H)):
            centers[h] = lsvi_fit_level(h, log, V_next, cls, cfg.ridge, D, history=histories[h])
            V_next = induced_values(centers[h], inst, all_features)
        beta = beta_mdp(M, k, t, log_cover, cfg.delta, cfg.ibe, cfg.beta_mode)

        states = [
            int(rng_stream(seed, task, t, 'context').choice(inst.n_states, p=inst.initial[task]))
            for task in range(M)
        ]
        starts = list(states)
        noise_rngs = [rng_stream(seed, task, t, 'noise') for task in range(M)]
        move_rngs = [rng_stream(seed, task, t, 'transition') for task in range(M)]
        returns, first_actions = np.zeros(M), [0] * M
        policy = np.zeros((H, M, inst.n_states), dtype=int)
        reachable = [[s] for s in starts]

        for h in range(H):
            cset = ConfidenceSet(centers[h], beta, histories[h], cls, cfg.ridge)
            policy[h] = optimistic_policy(cset, state_inputs, states, cfg.strategy, all_features, reachable)
            reachable = [reachable_next(inst, task, h, reachable[task], policy[h, task]) for task in range(M)]
            for task in range(M):
                s = states[task]
                action = int(policy[h, task, s])
                reward = float(inst.rewards[task, h, s, action]) + inst.sample_noise(noise_rngs[task])
                s_next = int(move_rngs[task].choice(inst.n_states, p=inst.transitions[task, h, s, action]))
                returns[task] += reward
                if h == 0:
                    first_actions[task] = action
                log.add(h, task, Transition(s, action, reward, s_next))
                histories[h].append(task, (s, action), reward)
                states[task] = s_next

        v_pi = policy_values(inst, policy)
        tasks = np.arange(M)
        gaps = np.maximum(v_star[tasks, 0, starts] - v_pi[tasks, 0, starts], 0.0)
        log.close_episode(gaps)
        for task in range(M):
            trace.add(t, task, first_actions[task], returns[task], gaps[task], beta)
        if t % 50 == 0:
            logger.debug(f'  episodio {t}: regret acumulado={trace.total_regret():.4f}')

    trace.final_state = MDPRunState(log, histories, centers, policy)
    logger.info(f'✅ MTLSVI terminado: regret total={trace.total_regret():.4f}')
    return trace


def _random_heads(rng: np.random.Generator, k: int, M: int, D: float) -> np.ndarray:
    directions = rng.standard_normal((k, M))
    directions /= np.maximum(np.linalg.norm(directions, axis=0, keepdims=True), 1e-300)
    radii = D * rng.uniform(0.0, 1.0, size=M) ** (1.0 / k)
    return directions * radii


def ibe_estimate(inst: MDPInstance, cls: Optional[FeatureClass] = None, n_samples: int = 16,
                 seed: int = 0) -> float:
    '''
    Estimación Monte Carlo del error de Bellman inherente multitarea.

    Para cada muestra y nivel toma un Q_{h+1} aleatorio de la clase (phi y
    cabezas en la bola D), calcula su imagen de Bellman exacta y el mejor ajuste
    por mínimos cuadrados de cada phi; el error es el residuo sup sobre (s, a).
    Devuelve el máximo acumulado, así que no decrece con n_samples. Es una
    cota inferior del sup con un sesgo al alza por usar LS en lugar de Chebyshev.
    '''
    if n_samples < 1:
        raise ParameterError('n_samples debe ser >= 1')
    cls = inst.feature_class if cls is None else cls
    M, H, S, A = inst.M, inst.H, inst.n_states, inst.n_actions
    D = inst.head_bound
    features = [phi.batch(inst.all_inputs) for phi in cls]

    running = 0.0
    for sample in range(n_samples):
        rng = rng_stream(seed, 'ibe', sample)
        for h in range(H):
            j = int(rng.integers(len(cls)))
            heads = _random_heads(rng, cls.dim_k, M, D)
            if h < H - 1:
                q_next = np.clip(features[j] @ heads, -1.0, 1.0).reshape(S, A, M)
                v_next = np.clip(q_next.max(axis=1), 0.0, 1.0).T
            else:
                v_next = np.zeros((M, S))
            image = (
                inst.rewards[:, h]
                + np.einsum('isaj,ij->isa', inst.transitions[:, h], v_next)
            ).reshape(M, -1)
            best = math.inf
            for X in features:
                solution = np.linalg.lstsq(X, image.T, rcond=None)[0]
                error = float(np.abs(X @ solution - image.T).max())
                best = min(best, error)
            running = max(running, best)
    logger.debug(f'IBE estimado con {n_samples} muestras: {running:.3g}')
    return running
