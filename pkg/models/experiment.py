import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from config.settings import settings
from services.core.beta import TUNED_BANDIT_DEFAULTS, TUNED_MDP_DEFAULTS, BetaMode, resolve_alpha
from utils.exceptions import ConfigError
from utils.helpers import load_yaml_file

ENVS_BY_KIND = {
    'bandit': ('latent_category', 'linear_rep', 'random_linear_mdp'),
    'mdp': ('grid_maze', 'random_linear_mdp'),
    'transfer': ('latent_category', 'linear_rep'),
    'eluder': ('random_class', 'linear_class'),
    'diagnostics': ('latent_category',),
}

NON_SWEEPABLE = {'kind', 'sweep', 'output_dir', 'workers', 'svg', 'xlsx', 'n_seeds'}


class BetaModeConfig(BaseModel):
    '''Modo del radio: theory, tuned (a·ln(b·t + c)) o fixed (valor, admite inf)'''

    model_config = ConfigDict(extra='forbid')

    mode: Literal['theory', 'tuned', 'fixed'] = 'theory'
    a: Optional[float] = None
    b: Optional[float] = None
    c: Optional[float] = None
    value: Optional[float] = None

    @model_validator(mode='after')
    def _check_fixed(self):
        if self.mode == 'fixed' and (self.value is None or math.isnan(self.value) or self.value < 0):
            raise ValueError('beta_mode fixed requiere value >= 0')
        return self

    def to_beta_mode(self, kind: str = 'bandit') -> BetaMode:
        if self.mode == 'fixed':
            return BetaMode.fixed(self.value)
        if self.mode == 'tuned':
            defaults = TUNED_MDP_DEFAULTS if kind == 'mdp' else TUNED_BANDIT_DEFAULTS
            a = defaults[0] if self.a is None else self.a
            b = defaults[1] if self.b is None else self.b
            c = defaults[2] if self.c is None else self.c
            return BetaMode.tuned(a, b, c)
        return BetaMode.theory()


class ExperimentConfig(BaseModel):
    '''Configuración de un experimento, leída de YAML. Las claves desconocidas son error.'''

    model_config = ConfigDict(extra='forbid')

    kind: Literal['bandit', 'mdp', 'transfer', 'eluder', 'diagnostics']
    env: Optional[str] = None
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0)

    # Horizonte
    T: int = Field(default=100, ge=1, description='Pasos (bandido) o episodios (MDP) o preentrenamiento')
    t: int = Field(default=300, ge=1, description='Pasos de LinUCB en transferencia')
    M: int = Field(default=1, ge=1)
    k: Optional[int] = Field(default=None, ge=1)

    # Algoritmo
    delta: float = Field(default=0.1, gt=0, le=1)
    alpha: Union[float, Literal['auto']] = 'auto'
    ridge: float = Field(default=settings.RIDGE, gt=0)
    strategy: Literal['decoupled', 'sweep', 'exact'] = 'decoupled'
    beta_mode: BetaModeConfig = Field(default_factory=BetaModeConfig)

    # Entorno
    noise_sigma: Optional[float] = Field(default=None, ge=0, le=1)
    categories: int = Field(default=10, ge=2)
    actions: int = Field(default=5, ge=2)
    perturbation: float = Field(default=0.1, ge=0)
    obs_dim: Optional[int] = Field(default=None, ge=1)
    n_decoys: int = Field(default=4, ge=0)
    pool_size: int = Field(default=20, ge=1)
    task_pool: Optional[int] = Field(default=None, ge=1)
    H: int = Field(default=5, ge=1)
    n_states: int = Field(default=6, ge=1)
    n_actions: int = Field(default=3, ge=1)
    maze_variants: Optional[int] = Field(default=None, ge=1, description='Variantes de laberinto distintas')
    ibe: float = Field(default=0.0, ge=0)

    # Línea base ε-greedy
    baseline: bool = False
    epsilon: float = Field(default=0.1, ge=0, le=1)
    epsilon_schedule: Literal['constant', 'inverse', 'inverse_sqrt'] = 'constant'

    # Transferencia
    mixture: Optional[List[float]] = None
    n_targets: int = Field(default=3, ge=1)
    mixture_bound: float = Field(default=1.0, gt=0)
    pretrain_T: Optional[int] = Field(default=None, ge=1)
    lambda_reg: float = Field(default=1.0, gt=0)
    ucb_scale: float = Field(default=1.0, ge=0)

    # Eluder
    eps_values: List[float] = Field(default_factory=lambda: [0.25, 0.5])
    n_functions: int = Field(default=8, ge=1)
    domain_size: int = Field(default=8, ge=1)

    # Diagnósticos
    heldout: int = Field(default=100, ge=1)
    train_sizes: List[int] = Field(default_factory=lambda: [10, 100, 1000])
    diag_beta: Optional[float] = Field(default=None, ge=0)

    # Harness
    n_seeds: int = Field(default=settings.DEFAULT_N_SEEDS, ge=1)
    sweep: Dict[str, List[Any]] = Field(default_factory=dict)
    workers: int = Field(default=settings.DEFAULT_WORKERS, ge=1)
    svg: bool = True
    xlsx: bool = False
    output_dir: Optional[Path] = None
    track_width: bool = True
    track_containment: bool = True

    @field_validator('alpha')
    @classmethod
    def _check_alpha(cls, value):
        if not isinstance(value, str) and value < 0:
            raise ValueError('alpha debe ser >= 0 o "auto"')
        return value

    @field_validator('eps_values')
    @classmethod
    def _check_eps(cls, value):
        if not value or any(eps <= 0 for eps in value):
            raise ValueError('eps_values debe contener valores positivos')
        return value

    @field_validator('train_sizes')
    @classmethod
    def _check_sizes(cls, value):
        if not value or any(n < 1 for n in value):
            raise ValueError('train_sizes debe contener enteros >= 1')
        return value

    @model_validator(mode='after')
    def _check_consistency(self):
        allowed = ENVS_BY_KIND[self.kind]
        if self.env is None:
            self.env = allowed[0]
        elif self.env not in allowed:
            raise ValueError(f'env={self.env!r} no es válido para kind={self.kind!r} ({allowed})')
        unknown = set(self.sweep) - (set(type(self).model_fields) - NON_SWEEPABLE)
        if unknown:
            raise ValueError(f'Claves de barrido inválidas: {sorted(unknown)}')
        for key, values in self.sweep.items():
            if not isinstance(values, list) or not values:
                raise ValueError(f'El barrido de {key} debe ser una lista no vacía')
        if self.task_pool is not None and self.task_pool % self.M != 0:
            raise ValueError(f'task_pool={self.task_pool} no es divisible por M={self.M}')
        if self.mixture is not None and len(self.mixture) != self.M:
            raise ValueError(f'mixture debe tener M={self.M} componentes')
        return self

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> 'ExperimentConfig':
        return cls.from_dict(load_yaml_file(path))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f'Configuración inválida: {e}')

    def with_overrides(self, **overrides) -> 'ExperimentConfig':
        '''Copia revalidada con campos reemplazados (los None se ignoran)'''
        data = self.model_dump()
        data.update({key: value for key, value in overrides.items() if value is not None})
        return type(self).from_dict(data)

    @property
    def dim_k(self) -> int:
        if self.k is not None:
            return self.k
        if self.env == 'latent_category':
            return self.categories
        return 3

    def resolved_alpha(self) -> float:
        return resolve_alpha(self.alpha, self.dim_k, self.M, self.T)

    def resolved_beta_mode(self) -> BetaMode:
        return self.beta_mode.to_beta_mode(self.kind)

    def resolved_noise(self) -> float:
        if self.noise_sigma is not None:
            return self.noise_sigma
        return {'latent_category': 0.01, 'linear_rep': 0.05}.get(self.env, 0.0)
