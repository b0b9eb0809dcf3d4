import signal
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional
import click
from config.settings import settings
from models.experiment import ExperimentConfig
from services.harness.runner import EjecutorExperimentos
from utils.exceptions import ConfigError, LabError
from utils.helpers import format_duration, shorten_path
from utils.logger import get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2


class OrquestadorPrincipal:
    '''Orquestador del laboratorio: carga la configuración, ejecuta y reporta'''

    def __init__(self, config_path: Path, seed: Optional[int] = None, out: Optional[Path] = None,
                 workers: Optional[int] = None, svg: Optional[bool] = None,
                 expected_kind: Optional[str] = None):
        self.config_path = self._resolver_config(Path(config_path))
        self.overrides = {'seed': seed, 'output_dir': out, 'workers': workers, 'svg': svg}
        self.expected_kind = expected_kind
        self.cfg: Optional[ExperimentConfig] = None

    @staticmethod
    def _resolver_config(path: Path) -> Path:
        '''Un nombre sin ruta se busca también en config/experiments/'''
        if path.exists() or path.parent != Path('.'):
            return path
        candidate = settings.EXPERIMENTS_DIR / path.with_suffix('.yaml').name
        return candidate if candidate.exists() else path

    def inicializar_sistema(self):
        '''Verifica directorios y valida la configuración antes de ejecutar nada'''
        self._print_banner()
        settings.ensure_directories()
        self.cfg = ExperimentConfig.from_yaml(self.config_path).with_overrides(**self.overrides)
        if self.expected_kind and self.cfg.kind != self.expected_kind:
            raise ConfigError(
                f'El subcomando requiere kind={self.expected_kind}, la configuración declara {self.cfg.kind}'
            )
        logger.info(f'✅ Configuración válida: {self.config_path.name} (kind={self.cfg.kind}, env={self.cfg.env})')

    def _print_banner(self):
        logger.info('╔' + '═' * 68 + '╗')
        logger.info('║' + '  🧪 LABORATORIO DE REPRESENTACIONES MULTITAREA'.ljust(67) + '║')
        logger.info('╚' + '═' * 68 + '╝')

    def ejecutar(self, modo: str = 'run', n_runs: int = 0):
        '''Ejecuta el experimento en el modo pedido y resume los artefactos'''
        inicio = datetime.now()
        ejecutor = EjecutorExperimentos(self.cfg)
        if modo == 'containment':
            artifacts = ejecutor.ejecutar_pertenencia(n_runs)
        else:
            artifacts = ejecutor.ejecutar(sweep=modo == 'sweep')

        duracion = (datetime.now() - inicio).total_seconds()
        logger.info('╔' + '═' * 68 + '╗')
        logger.info('║' + '  ✅ EXPERIMENTO COMPLETADO'.ljust(67) + '║')
        logger.info('║' + f' Duración: {format_duration(duracion)}'.ljust(68) + '║')
        logger.info('║' + f' Salida: {shorten_path(artifacts.output_dir)}'.ljust(68) + '║')
        logger.info('╚' + '═' * 68 + '╝')
        for name, path in sorted(artifacts.files.items()):
            logger.info(f'  📄 {name} -> {path}')
        return artifacts

    def detener(self):
        logger.info('👋 Laboratorio detenido')


def signal_handler(signum, frame):
    '''Manejador de señales para shutdown limpio'''
    logger.info('⚠️  Señal de interrupción recibida')
    sys.exit(EXIT_ERROR)


def _ejecutar(config_path, seed, out, workers, svg, modo='run', expected_kind=None, n_runs=0):
    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)
    orquestador = None
    code = EXIT_OK
    try:
        orquestador = OrquestadorPrincipal(config_path, seed, out, workers, svg, expected_kind)
        orquestador.inicializar_sistema()
        artifacts = orquestador.ejecutar(modo, n_runs)
        if modo == 'containment':
            click.echo(f"frequency={artifacts.metrics['frequency']:.6g}")
    except ConfigError as e:
        logger.error(f'❌ Configuración inválida: {e}')
        click.echo(f'Error de configuración: {e}', err=True)
        code = EXIT_CONFIG
    except (LabError, OSError) as e:
        logger.error(f'❌ Error en la ejecución: {e}', exc_info=True)
        click.echo(f'Error: {e}', err=True)
        code = EXIT_ERROR
    except Exception as e:
        logger.error(f'❌ Error fatal: {e}', exc_info=True)
        click.echo(f'Error fatal: {e}', err=True)
        code = EXIT_ERROR
    finally:
        if orquestador:
            orquestador.detener()
    sys.exit(code)


def _common_options(function):
    options = [
        click.option('--config', 'config_path', required=True,
                     type=click.Path(path_type=Path), help='Archivo YAML del experimento'),
        click.option('--seed', type=int, default=None, help='Sobrescribe la semilla'),
        click.option('--out', type=click.Path(path_type=Path), default=None, help='Directorio de salida'),
        click.option('--workers', type=click.IntRange(min=1), default=None, help='Procesos en paralelo'),
        click.option('--svg/--no-svg', default=None, help='Genera plot.svg'),
    ]
    for option in reversed(options):
        function = option(function)
    return function


@click.group()
def cli():
    '''Laboratorio de aprendizaje de representaciones multitarea'''


@cli.command()
@_common_options
def run(config_path, seed, out, workers, svg):
    '''Una corrida del experimento configurado'''
    _ejecutar(config_path, seed, out, workers, svg)


@cli.command()
@_common_options
def sweep(config_path, seed, out, workers, svg):
    '''Rejilla de barrido x n_seeds semillas'''
    _ejecutar(config_path, seed, out, workers, svg, modo='sweep')


@cli.command()
@_common_options
@click.option('--runs', 'n_runs', type=click.IntRange(min=1), default=200, show_default=True,
              help='Corridas Monte Carlo')
def containment(config_path, seed, out, workers, svg, n_runs):
    '''Frecuencia con la que la verdad queda dentro de todos los conjuntos de confianza'''
    _ejecutar(config_path, seed, out, workers, svg, modo='containment',
              expected_kind='bandit', n_runs=n_runs)


@cli.command()
@_common_options
def eluder(config_path, seed, out, workers, svg):
    '''Dimensión eluder exhaustiva y greedy por ε'''
    _ejecutar(config_path, seed, out, workers, svg, expected_kind='eluder')


@cli.command()
@_common_options
def diagnostics(config_path, seed, out, workers, svg):
    '''Bonus frente a error, matriz de plantillas y reducción del bonus'''
    _ejecutar(config_path, seed, out, workers, svg, expected_kind='diagnostics')


if __name__ == '__main__':
    cli()
