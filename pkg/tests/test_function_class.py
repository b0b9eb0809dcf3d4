import math
import numpy as np
import pytest
from models.function_class import (
    FeatureClass, FeatureMap, MultiheadFunction, MultitaskHistory, tabular_feature_map,
)
from utils.exceptions import DimensionError, ParameterError


class TestFeatureMap:

    def test_wrong_shape_raises(self):
        phi = FeatureMap(id=0, eval=lambda x: np.zeros(3), dim_k=2)
        with pytest.raises(DimensionError):
            phi(0)

    def test_batch_of_empty_sequence(self):
        phi = FeatureMap(id=0, eval=lambda x: np.ones(2), dim_k=2)
        assert phi.batch([]).shape == (0, 2)

    def test_tabular_map_reads_table(self):
        table = np.arange(12, dtype=float).reshape(2, 3, 2)
        phi = tabular_feature_map(0, table)
        np.testing.assert_array_equal(phi((1, 2)), [10.0, 11.0])


class TestFeatureClass:

    def test_ids_must_match_positions(self):
        members = (FeatureMap(id=1, eval=lambda x: np.ones(1), dim_k=1),)
        with pytest.raises(ParameterError):
            FeatureClass(members)

    def test_dimensions_must_agree(self):
        members = (
            FeatureMap(id=0, eval=lambda x: np.ones(1), dim_k=1),
            FeatureMap(id=1, eval=lambda x: np.ones(2), dim_k=2),
        )
        with pytest.raises(DimensionError):
            FeatureClass(members)

    def test_log_cover_of_finite_class(self, make_class):
        cls = make_class([np.eye(3)] * 5)
        assert cls.log_cover(0.01) == pytest.approx(math.log(5))

    def test_check_domain(self, make_class):
        cls = make_class([np.eye(3), 2 * np.eye(3)])
        assert not cls.check_domain([0, 1, 2])
        assert make_class([np.eye(3)]).check_domain([0, 1, 2])


class TestMultiheadFunction:

    def test_predictions_are_clipped(self, make_class):
        cls = make_class([np.eye(2)])
        f = MultiheadFunction(cls, 0, np.array([[3.0, -0.5], [0.2, -4.0]]))
        assert f.predict(0, 0) == 1.0
        assert f.predict(1, 1) == -1.0
        assert f.predict(1, 0) == pytest.approx(-0.5)

    def test_heads_are_read_only(self, make_class):
        f = MultiheadFunction.zeros(make_class([np.eye(2)]), M=3)
        assert f.M == 3
        with pytest.raises(ValueError):
            f.heads[0, 0] = 1.0

    def test_bad_heads_shape(self, make_class):
        with pytest.raises(DimensionError):
            MultiheadFunction(make_class([np.eye(2)]), 0, np.zeros((3, 1)))


class TestMultitaskHistory:

    def test_lengths_and_task_bounds(self):
        history = MultitaskHistory(2)
        history.append(0, 1, 0.5)
        history.append(1, 2, -0.5)
        history.append(1, 0, 0.1)
        assert len(history) == 3
        assert history.len(1) == 2
        with pytest.raises(DimensionError):
            history.append(2, 0, 0.0)

    def test_feature_cache_extends_with_new_samples(self, make_class):
        phi = make_class([np.eye(3)])[0]
        history = MultitaskHistory(1)
        history.append(0, 0, 1.0)
        assert history.features(phi, 0).shape == (1, 3)
        history.append(0, 2, 0.0)
        np.testing.assert_array_equal(history.features(phi, 0), [[1, 0, 0], [0, 0, 1]])
        np.testing.assert_array_equal(history.rewards(0), [1.0, 0.0])
