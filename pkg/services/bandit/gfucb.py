import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Union
import numpy as np
from config.settings import settings
from models.environment import BanditInstance
from models.function_class import MultiheadFunction, MultitaskHistory
from models.trace import RegretTrace
from services.core.beta import THEORY, BetaMode, beta_bandit, resolve_alpha
from services.core.confidence import (
    ConfidenceSet, Strategy, confidence_contains, optimistic_select, width
)
from services.core.erm import erm_fit
from utils.exceptions import ParameterError
from utils.helpers import rng_stream
from utils.logger import get_logger

logger = get_logger(__name__)

EPSILON_SCHEDULES = ('constant', 'inverse', 'inverse_sqrt')

ScriptedContexts = Callable[[int, int], Sequence[Any]]


@dataclass(frozen=True)
class GFUCBConfig:
    '''Parámetros de una corrida GFUCB'''

    delta: float = 0.1
    alpha: Union[float, str] = 'auto'
    ridge: float = field(default_factory=lambda: settings.RIDGE)
    strategy: Strategy = Strategy.DECOUPLED
    beta_mode: BetaMode = THEORY
    track_width: bool = True
    track_containment: bool = True


@dataclass
class GFUCBState:
    '''Estado final de una corrida: historial y ERM sobre todos los datos'''

    instance: BanditInstance
    history: MultitaskHistory
    center: MultiheadFunction
    beta: float
    config: GFUCBConfig

    def confidence_set(self, beta: Optional[float] = None) -> ConfidenceSet:
        return ConfidenceSet(
            self.center, self.beta if beta is None else beta, self.history,
            self.instance.feature_class, self.config.ridge,
        )


def _draw_contexts(inst: BanditInstance, seed: int, t: int,
                   scripted: Optional[ScriptedContexts]):
    if scripted is not None:
        return [inst.context_from_inputs(task, scripted(t, task)) for task in range(inst.M)]
    return [inst.draw_context(rng_stream(seed, task, t, 'context'), task) for task in range(inst.M)]


def gfucb_run(inst: BanditInstance, T: int, cfg: Optional[GFUCBConfig] = None, seed: int = 0,
              scripted_contexts: Optional[ScriptedContexts] = None) -> RegretTrace:
    '''
    UCB funcional generalizado multitarea.

    Cada paso: ERM sobre el historial, conjunto de confianza con radio β_t,
    selección optimista conjunta y registro de recompensa y regret exacto.
    scripted_contexts(t, tarea) permite imponer los contextos (p. ej. adversariales).
    '''
    if T < 1:
        raise ParameterError('T debe ser >= 1')
    cfg = cfg or GFUCBConfig()
    cls = inst.feature_class
    M, k = inst.M, cls.dim_k
    alpha = resolve_alpha(cfg.alpha, k, M, T)
    log_cover = cls.log_cover(alpha)
    history = MultitaskHistory(M)
    trace = RegretTrace(M=M, kind='bandit')
    logger.info(f'🎯 GFUCB {inst.name}: M={M} k={k} |Φ|={len(cls)} T={T} estrategia={cfg.strategy}')

    beta = 0.0
    for t in range(1, T + 1):
        draws = _draw_contexts(inst, seed, t, scripted_contexts)
        center = erm_fit(history, cls, cfg.ridge)
        beta = beta_bandit(M, k, t, log_cover, alpha, cfg.delta, cfg.beta_mode)
        cset = ConfidenceSet(center, beta, history, cls, cfg.ridge)
        choice = optimistic_select(cset, [d.inputs for d in draws], cfg.strategy)
        chosen = [draws[task].inputs[a] for task, a in enumerate(choice.actions)]

        contained = confidence_contains(inst.truth, cset) if cfg.track_containment else None
        step_width = width(cset, chosen) if cfg.track_width else math.nan

        rewards = []
        for task, action in enumerate(choice.actions):
            noise = inst.sample_noise(rng_stream(seed, task, t, 'noise'))
            reward = float(draws[task].means[action]) + noise
            rewards.append(reward)
            trace.add(t, task, action, reward, draws[task].regret(action), beta, step_width, contained)
        for task, reward in enumerate(rewards):
            history.append(task, chosen[task], reward)

        if t % 100 == 0:
            logger.debug(f'  t={t} regret acumulado={trace.total_regret():.4f} β={beta:.4g}')

    final_center = erm_fit(history, cls, cfg.ridge)
    trace.final_state = GFUCBState(inst, history, final_center, beta, cfg)
    logger.info(
        f'✅ GFUCB terminado: regret total={trace.total_regret():.4f} '
        f'phi final={final_center.phi_index} (verdadero={inst.true_index})'
    )
    return trace


def epsilon_at(epsilon: float, schedule: str, t: int) -> float:
    if schedule == 'constant':
        return min(1.0, epsilon)
    if schedule == 'inverse':
        return min(1.0, epsilon / t)
    if schedule == 'inverse_sqrt':
        return min(1.0, epsilon / math.sqrt(t))
    raise ParameterError(f'Calendario de epsilon desconocido: {schedule}')


def eps_greedy_run(inst: BanditInstance, T: int, epsilon: float = 0.1, schedule: str = 'constant',
                   seed: int = 0, ridge: Optional[float] = None,
                   scripted_contexts: Optional[ScriptedContexts] = None) -> RegretTrace:
    '''ε-greedy con ERM independiente por tarea (sin representación compartida)'''
    if T < 1:
        raise ParameterError('T debe ser >= 1')
    if not 0 <= epsilon <= 1:
        raise ParameterError('epsilon debe estar en [0, 1]')
    epsilon_at(epsilon, schedule, 1)
    ridge = settings.RIDGE if ridge is None else ridge
    cls = inst.feature_class
    histories = [MultitaskHistory(1) for _ in range(inst.M)]
    trace = RegretTrace(M=inst.M, kind='bandit')
    logger.info(f'🎲 ε-greedy {inst.name}: M={inst.M} T={T} ε={epsilon} ({schedule})')

    for t in range(1, T + 1):
        draws = _draw_contexts(inst, seed, t, scripted_contexts)
        eps_t = epsilon_at(epsilon, schedule, t)
        for task, draw in enumerate(draws):
            explore_rng = rng_stream(seed, task, t, 'explore')
            if explore_rng.random() < eps_t:
                action = int(explore_rng.integers(len(draw.inputs)))
            else:
                fit = erm_fit(histories[task], cls, ridge)
                action = int(np.argmax(fit.predict_batch(0, draw.inputs)))
            noise = inst.sample_noise(rng_stream(seed, task, t, 'noise'))
            reward = float(draw.means[action]) + noise
            trace.add(t, task, action, reward, draw.regret(action), math.nan)
            histories[task].append(0, draw.inputs[action], reward)

    logger.info(f'✅ ε-greedy terminado: regret total={trace.total_regret():.4f}')
    return trace
