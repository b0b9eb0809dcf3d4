from pathlib import Path
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field

# Obtener ruta base del proyecto
BASE_DIR = Path(__file__).resolve().parent.parent

class Settings(BaseSettings):
    '''Configuración centralizada usando Pydantic Settings'''

    model_config = SettingsConfigDict(
        env_file='.env',
        env_file_encoding='utf-8',
        case_sensitive=True,
        extra='ignore'
    )

    # Paths
    BASE_DIR: Path = BASE_DIR
    LOGS_DIR: Path = BASE_DIR / 'logs'
    RESULTS_DIR: Path = BASE_DIR / 'results'
    EXPERIMENTS_DIR: Path = BASE_DIR / 'config' / 'experiments'

    # Logging
    LOG_LEVEL: str = Field(default='INFO', description='Nivel de logging')
    LOG_FILE: str = Field(
        default=str(BASE_DIR / 'logs' / 'app.log'),
        description='Archivo de log'
    )

    # Experimentos
    DEFAULT_SEED: int = Field(default=0, ge=0, description='Semilla por defecto')
    DEFAULT_N_SEEDS: int = Field(default=20, ge=1, description='Semillas por punto de barrido')
    DEFAULT_WORKERS: int = Field(default=1, ge=1, description='Procesos para barridos')

    # Numérico
    RIDGE: float = Field(default=1e-6, gt=0, description='Regularización de todas las matrices de Gram')
    FEASIBILITY_TOL: float = Field(default=1e-9, ge=0, description='Holgura para factibilidad de candidatos phi')
    ELUDER_MAX_DOMAIN: int = Field(default=12, ge=1, description='Tamaño máximo de dominio para la búsqueda exhaustiva')
    CSV_FLOAT_FORMAT: str = Field(default='%.12g', description='Formato de flotantes en CSV')

    def ensure_directories(self):
        '''Asegura que los directorios necesarios existan'''
        for directory in [self.LOGS_DIR, self.RESULTS_DIR]:
            directory.mkdir(parents=True, exist_ok=True)


# Singleton de configuración
settings = Settings()
settings.ensure_directories()
