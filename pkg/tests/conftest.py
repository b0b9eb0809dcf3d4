from typing import Sequence
import numpy as np
import pytest
from models.function_class import FeatureClass, FeatureMap, MultitaskHistory
from services.bandit.environments import make_latent_category_bandit


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: experimentos de escala reducida que tardan más')


def table_map(id: int, table: np.ndarray, name: str = '') -> FeatureMap:
    '''FeatureMap sobre entradas enteras: x -> table[x]'''
    table = np.asarray(table, dtype=float)
    return FeatureMap(id=id, eval=lambda x, _t=table: _t[int(x)], dim_k=table.shape[1], name=name)


@pytest.fixture
def make_class():
    '''Construye una FeatureClass a partir de tablas (una por miembro)'''

    def _build(tables: Sequence[np.ndarray], true_index: int = 0) -> FeatureClass:
        return FeatureClass(
            tuple(table_map(i, table, f'm{i}') for i, table in enumerate(tables)),
            true_index=true_index,
        )

    return _build


@pytest.fixture
def scalar_class(make_class):
    '''Clase k = 1 con φ(x) = valores[x]'''
    return make_class([np.array([[0.5], [1.0], [0.25], [0.75]])])


@pytest.fixture
def latent_instance():
    return make_latent_category_bandit(categories=4, K=3, M=2, seed=3, n_decoys=2, noise_sigma=0.01)


@pytest.fixture
def played_history(latent_instance):
    '''Historial con acciones uniformes sobre 30 contextos por tarea'''
    rng = np.random.default_rng(11)
    history = MultitaskHistory(latent_instance.M)
    for _ in range(30):
        for task in range(latent_instance.M):
            draw = latent_instance.draw_context(rng, task)
            action = int(rng.integers(len(draw.inputs)))
            history.append(task, draw.inputs[action], draw.means[action] + latent_instance.sample_noise(rng))
    return history
