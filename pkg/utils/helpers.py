import zlib
from pathlib import Path
from typing import Any, Dict, Union
import numpy as np
import yaml
from utils.exceptions import ConfigError

def stream_key(key: Union[int, str]) -> int:
    '''Convierte una etiqueta de flujo aleatorio en un entero estable'''
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f'Clave de flujo negativa: {key}')
        return int(key)
    # crc32 es estable entre procesos, hash() no lo es
    return zlib.crc32(str(key).encode('utf-8'))

def rng_stream(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    '''
    Generador independiente para una combinación (semilla, claves...).

    Cada (run, tarea, paso, propósito) obtiene su propio flujo a partir de
    SeedSequence, así que el orden de consumo entre tareas o procesos no
    altera los resultados.
    '''
    sequence = np.random.SeedSequence(
        entropy=int(seed),
        spawn_key=tuple(stream_key(k) for k in keys)
    )
    return np.random.default_rng(sequence)

def derive_seed(seed: int, *keys: Union[int, str]) -> int:
    '''Semilla entera derivada, útil para construir instancias'''
    sequence = np.random.SeedSequence(
        entropy=int(seed),
        spawn_key=tuple(stream_key(k) for k in keys)
    )
    return int(sequence.generate_state(1, dtype=np.uint32)[0])

def load_yaml_file(path: Union[str, Path]) -> Dict[str, Any]:
    '''Lee un archivo YAML de configuración y valida que sea un mapeo'''
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f'No existe el archivo de configuración: {path}')
    except yaml.YAMLError as e:
        raise ConfigError(f'YAML inválido en {path}: {e}')

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f'{path} debe contener un mapeo clave-valor')
    return data

def shorten_path(path: Union[str, Path], width: int = 56) -> str:
    '''Ruta que cabe en width caracteres; conserva el final, que identifica la corrida'''
    text = str(path)
    if len(text) <= width:
        return text
    return '…' + text[-(width - 1):]

def format_duration(seconds: float) -> str:
    '''Formatea una duración en segundos a texto legible'''
    if seconds < 60:
        return f'{seconds:.2f} s'
    minutes, secs = divmod(seconds, 60)
    return f'{int(minutes)} min {secs:.1f} s'
