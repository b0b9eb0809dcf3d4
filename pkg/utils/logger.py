import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from config.settings import settings

# El archivo conserva el proceso: los barridos con workers > 1 escriben desde varios
FILE_FORMAT = '%(asctime)s [%(processName)s] %(levelname)-8s %(name)s: %(message)s'
CONSOLE_FORMAT = '%(asctime)s %(levelname)-8s %(message)s'
QUIET_LIBRARIES = ('matplotlib', 'fontTools', 'PIL', 'openpyxl')


def _level() -> int:
    return getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)


def setup_logger():
    '''
    Configura el logger raíz una sola vez por proceso.

    Consola en stderr con formato corto, así stdout queda libre para la salida
    de los subcomandos; archivo rotativo con el formato completo.
    '''
    root_logger = logging.getLogger()
    if any(getattr(h, '_lab_handler', False) for h in root_logger.handlers):
        return

    log_file = Path(settings.LOG_FILE)
    log_file.parent.mkdir(parents=True, exist_ok=True)
    level = _level()

    file_handler = RotatingFileHandler(log_file, maxBytes=5 * 1024 * 1024, backupCount=3, encoding='utf-8')
    file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%H:%M:%S'))

    for handler in (file_handler, console_handler):
        handler.setLevel(level)
        handler._lab_handler = True
        root_logger.addHandler(handler)
    root_logger.setLevel(level)

    for name in QUIET_LIBRARIES:
        logging.getLogger(name).setLevel(logging.WARNING)


def get_logger(name: str) -> logging.Logger:
    '''Obtiene un logger con el nombre especificado'''
    return logging.getLogger(name)


setup_logger()
