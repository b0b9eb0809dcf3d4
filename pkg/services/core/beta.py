'''
Radios de los conjuntos de confianza.

- beta_bandit: término de anchura del conjunto funcional multitarea
- beta_mdp: radio por nivel de LSVI multitarea con error de Bellman inherente
- linucb_radius: radio elipsoidal de LinUCB en la fase de transferencia

Cada radio admite tres modos: teórico, ajustado a·ln(b·t + c) y fijo.
'''
import math
from dataclasses import dataclass
from typing import Optional, Union
from utils.exceptions import ParameterError

TUNED_BANDIT_DEFAULTS = (0.4, 0.5, 2.0)
TUNED_MDP_DEFAULTS = (0.1, 0.5, 2.0)


@dataclass(frozen=True)
class BetaMode:
    '''Modo de cálculo del radio: theory | tuned | fixed'''

    kind: str = 'theory'
    a: Optional[float] = None
    b: Optional[float] = None
    c: Optional[float] = None
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ('theory', 'tuned', 'fixed'):
            raise ParameterError(f'Modo de beta desconocido: {self.kind}')
        if self.kind == 'fixed':
            if self.value is None or math.isnan(self.value) or self.value < 0:
                raise ParameterError('El modo fixed requiere un valor >= 0 (puede ser inf)')

    @classmethod
    def theory(cls) -> 'BetaMode':
        return cls('theory')

    @classmethod
    def tuned(cls, a: float, b: float, c: float) -> 'BetaMode':
        return cls('tuned', a=a, b=b, c=c)

    @classmethod
    def fixed(cls, value: float) -> 'BetaMode':
        return cls('fixed', value=float(value))

    def tuned_value(self, t: int, defaults=TUNED_BANDIT_DEFAULTS) -> float:
        a = defaults[0] if self.a is None else self.a
        b = defaults[1] if self.b is None else self.b
        c = defaults[2] if self.c is None else self.c
        argument = b * t + c
        if argument <= 0:
            raise ParameterError(f'b·t + c debe ser positivo, se obtuvo {argument}')
        return max(a * math.log(argument), 0.0)


THEORY = BetaMode.theory()


def resolve_alpha(alpha: Union[float, str], k: int, M: int, T: int) -> float:
    '''"auto" equivale a 1/(kMT)'''
    if isinstance(alpha, str):
        if alpha != 'auto':
            raise ParameterError(f'alpha debe ser numérico o "auto", se recibió {alpha!r}')
        return 1.0 / (k * M * T)
    if alpha < 0:
        raise ParameterError('alpha debe ser no negativo')
    return float(alpha)


def _check_common(M: int, k: int, t: int, log_cover: float, delta: float):
    if M < 1 or k < 1 or t < 1:
        raise ParameterError(f'M, k y t deben ser >= 1 (M={M}, k={k}, t={t})')
    if not 0 < delta <= 1:
        raise ParameterError(f'delta debe estar en (0, 1], se recibió {delta}')
    if log_cover < 0:
        raise ParameterError('log_cover debe ser no negativo')


def beta_bandit(M: int, k: int, t: int, log_cover: float, alpha: float, delta: float,
                mode: BetaMode = THEORY) -> float:
    '''β_t = 12Mk + 12(ln N − ln δ) + 8α·√(Mtk(Mt + ln(2Mt²/δ)))'''
    _check_common(M, k, t, log_cover, delta)
    if alpha < 0:
        raise ParameterError('alpha debe ser no negativo')
    if mode.kind == 'fixed':
        return mode.value
    if mode.kind == 'tuned':
        return mode.tuned_value(t, TUNED_BANDIT_DEFAULTS)

    Mt = M * t
    return (
        12.0 * M * k
        + 12.0 * (log_cover - math.log(delta))
        + 8.0 * alpha * math.sqrt(Mt * k * (Mt + math.log(2.0 * M * t * t / delta)))
    )


def beta_mdp(M: int, k: int, T: int, log_cover: float, delta: float, ibe: float = 0.0,
             mode: BetaMode = THEORY) -> float:
    '''β = (B₁ + √(MT)·I + √B₂)² con B₁ = √(2Mk + ln(N/δ)) + 1 y B₂ = 2√(MT + ln(2MT²/δ))'''
    _check_common(M, k, T, log_cover, delta)
    if ibe < 0:
        raise ParameterError('El error de Bellman inherente debe ser no negativo')
    if mode.kind == 'fixed':
        return mode.value
    if mode.kind == 'tuned':
        return mode.tuned_value(T, TUNED_MDP_DEFAULTS)

    MT = M * T
    b1 = math.sqrt(2.0 * M * k + log_cover - math.log(delta)) + 1.0
    b2 = 2.0 * math.sqrt(MT + math.log(2.0 * M * T * T / delta))
    return (b1 + math.sqrt(MT) * ibe + math.sqrt(b2)) ** 2


def linucb_radius(s: int, k: int, lambda_reg: float, delta: float) -> float:
    '''β_s = √(λk) + √(2 ln(1/δ) + k ln(1 + s/(kλ)))'''
    if s < 0 or k < 1:
        raise ParameterError(f's debe ser >= 0 y k >= 1 (s={s}, k={k})')
    if lambda_reg <= 0:
        raise ParameterError('lambda_reg debe ser positivo')
    if not 0 < delta <= 1:
        raise ParameterError(f'delta debe estar en (0, 1], se recibió {delta}')
    return (
        math.sqrt(lambda_reg * k)
        + math.sqrt(2.0 * math.log(1.0 / delta) + k * math.log(1.0 + s / (k * lambda_reg)))
    )
