'''Errores del laboratorio. Todos heredan de ValueError para que el código llamador
pueda capturarlos de forma genérica.'''


class LabError(ValueError):
    '''Error base del laboratorio'''


class DimensionError(LabError):
    '''Número de tareas o dimensión de features incompatibles'''


class ParameterError(LabError):
    '''Parámetro fuera de rango (delta, beta, mezcla, ...)'''


class EluderSizeError(LabError):
    '''El dominio excede el límite de la búsqueda exhaustiva'''


class ConstructionError(LabError):
    '''Instancia de entorno imposible de construir'''


class DataError(LabError):
    '''Datos de entrada vacíos o inconsistentes'''


class ConfigError(LabError):
    '''Archivo de configuración inválido'''
