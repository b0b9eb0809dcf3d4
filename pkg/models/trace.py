import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional
import numpy as np
import pandas as pd
from utils.exceptions import DataError

TRACE_COLUMNS = [
    'run_id', 't', 'task', 'action', 'reward', 'inst_regret',
    'cum_regret', 'beta', 'width', 'contained',
]

REGRET_TOL = 1e-9


@dataclass(frozen=True)
class StepRecord:
    '''Registro de un paso (o episodio) de una tarea'''

    t: int
    task: int
    action: int
    reward: float
    inst_regret: float
    cum_regret: float
    beta: float
    width: float = math.nan
    contained: Optional[bool] = None


@dataclass
class RegretTrace:
    '''
    Traza de regret de una corrida.

    kind distingue bandido ('bandit'), MDP ('mdp', t = episodio, reward =
    retorno del episodio) y transferencia ('transfer').
    '''

    M: int
    kind: str = 'bandit'
    records: List[StepRecord] = field(default_factory=list)
    final_state: Any = field(default=None, repr=False)
    _cumulative: Dict[int, float] = field(default_factory=dict, init=False, repr=False)

    def add(self, t: int, task: int, action: int, reward: float, inst_regret: float,
            beta: float, width: float = math.nan, contained: Optional[bool] = None) -> StepRecord:
        if inst_regret < -REGRET_TOL:
            raise DataError(f'Regret instantáneo negativo en t={t}, tarea={task}: {inst_regret}')
        previous = self._cumulative.get(task, 0.0)
        record = StepRecord(
            t=t, task=task, action=int(action), reward=float(reward),
            inst_regret=float(inst_regret), cum_regret=previous + float(inst_regret),
            beta=float(beta), width=float(width), contained=contained,
        )
        self._cumulative[task] = record.cum_regret
        self.records.append(record)
        return record

    @property
    def T(self) -> int:
        return max((r.t for r in self.records), default=0)

    def to_frame(self, run_id: int = 0) -> pd.DataFrame:
        frame = pd.DataFrame(
            [(run_id, r.t, r.task, r.action, r.reward, r.inst_regret, r.cum_regret,
              r.beta, r.width, r.contained) for r in self.records],
            columns=TRACE_COLUMNS,
        )
        return frame

    def regret_matrix(self) -> np.ndarray:
        '''Regret instantáneo por (paso, tarea), forma (T, M)'''
        steps = sorted({r.t for r in self.records})
        position = {t: n for n, t in enumerate(steps)}
        matrix = np.zeros((len(steps), self.M))
        for r in self.records:
            matrix[position[r.t], r.task] = r.inst_regret
        return matrix

    def cumulative_regret(self) -> np.ndarray:
        '''Regret acumulado sumado sobre tareas, por paso'''
        return np.cumsum(self.regret_matrix().sum(axis=1))

    def total_regret(self) -> float:
        return float(self.regret_matrix().sum())

    def per_task_regret(self) -> float:
        return self.total_regret() / self.M

    def step_values(self, attribute: str) -> np.ndarray:
        '''Valor por paso de un campo compartido entre tareas (beta, contained)'''
        values = {}
        for r in self.records:
            values.setdefault(r.t, getattr(r, attribute))
        return np.array([values[t] for t in sorted(values)])

    def step_widths(self) -> np.ndarray:
        return self.step_values('width')

    def all_contained(self) -> bool:
        flags = [r.contained for r in self.records]
        if any(flag is None for flag in flags):
            raise DataError('La traza no registró pertenencia al conjunto de confianza')
        return all(flags)


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int


class EpisodeLog:
    '''Transiciones por nivel y tarea, más la brecha de valor por episodio y tarea'''

    def __init__(self, M: int, H: int):
        self.M = M
        self.H = H
        self._levels: List[List[List[Transition]]] = [[[] for _ in range(M)] for _ in range(H)]
        self._gaps: List[np.ndarray] = []

    def add(self, h: int, task: int, transition: Transition):
        self._levels[h][task].append(transition)

    def transitions(self, h: int, task: int) -> List[Transition]:
        return self._levels[h][task]

    def close_episode(self, gaps: np.ndarray):
        self._gaps.append(np.asarray(gaps, dtype=float).copy())
        self.check_complete()

    @property
    def n_episodes(self) -> int:
        return len(self._gaps)

    @property
    def value_gaps(self) -> np.ndarray:
        '''Brechas V₁* − V₁^π realizadas, forma (episodios, M)'''
        if not self._gaps:
            return np.zeros((0, self.M))
        return np.vstack(self._gaps)

    def check_complete(self):
        for h in range(self.H):
            for task in range(self.M):
                if len(self._levels[h][task]) != self.n_episodes:
                    raise DataError(
                        f'Nivel {h}, tarea {task}: {len(self._levels[h][task])} transiciones '
                        f'para {self.n_episodes} episodios'
                    )
