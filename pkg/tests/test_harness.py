import math
import numpy as np
import pandas as pd
import pytest
import yaml
from click.testing import CliRunner
from main import EXIT_CONFIG, cli
from models.experiment import ExperimentConfig
from models.trace import TRACE_COLUMNS, RegretTrace
from services.harness.runner import (
    RunOutcome, containment_monte_carlo, regret_slope, run_experiment, run_sweep, slope_extras,
    summarize, task_groups, trace_regret_slope,
)
from utils.exceptions import ConfigError, DataError, ParameterError
from utils.helpers import shorten_path

TINY_BANDIT = {
    'kind': 'bandit', 'env': 'latent_category', 'T': 10, 'M': 1,
    'categories': 4, 'actions': 3, 'n_decoys': 2,
}


@pytest.fixture
def write_config(tmp_path):
    def _write(data, name='experiment.yaml'):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data), encoding='utf-8')
        return path
    return _write


class TestExperimentConfig:

    def test_unknown_key_is_an_error(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**TINY_BANDIT, 'horizon': 5})

    def test_env_must_fit_kind(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({'kind': 'mdp', 'env': 'latent_category'})

    def test_default_env_and_alpha(self):
        cfg = ExperimentConfig.from_dict({'kind': 'mdp', 'T': 10, 'M': 2, 'k': 3})
        assert cfg.env == 'grid_maze'
        assert cfg.resolved_alpha() == pytest.approx(1 / 60)

    def test_sweep_keys_are_validated(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**TINY_BANDIT, 'sweep': {'workers': [1, 2]}})

    def test_task_pool_divisibility(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**TINY_BANDIT, 'M': 3, 'task_pool': 10})
        assert task_groups(10, 5) == [(0, 1, 2, 3, 4), (5, 6, 7, 8, 9)]
        assert task_groups(None, 5) == [None]

    def test_tuned_defaults_depend_on_kind(self):
        bandit = ExperimentConfig.from_dict({**TINY_BANDIT, 'beta_mode': {'mode': 'tuned'}})
        mdp = ExperimentConfig.from_dict({'kind': 'mdp', 'beta_mode': {'mode': 'tuned'}})
        assert bandit.resolved_beta_mode().a == 0.4
        assert mdp.resolved_beta_mode().a == 0.1


class TestRunCommand:

    def test_trace_row_count_and_schema(self, write_config, tmp_path):
        out = tmp_path / 'out'
        result = CliRunner().invoke(cli, ['run', '--config', str(write_config(TINY_BANDIT)),
                                          '--out', str(out), '--no-svg'])
        assert result.exit_code == 0, result.output
        trace = pd.read_csv(out / 'trace.csv')
        assert list(trace.columns) == TRACE_COLUMNS
        assert len(trace) == 10
        assert (out / 'summary.csv').exists()
        assert not (out / 'plot.svg').exists()

    def test_identical_runs_are_byte_identical(self, write_config, tmp_path):
        config = str(write_config(TINY_BANDIT))
        for name in ('a', 'b'):
            result = CliRunner().invoke(cli, ['run', '--config', config, '--out', str(tmp_path / name),
                                              '--seed', '3', '--no-svg'])
            assert result.exit_code == 0, result.output
        for filename in ('trace.csv', 'summary.csv'):
            assert (tmp_path / 'a' / filename).read_bytes() == (tmp_path / 'b' / filename).read_bytes()

    def test_invalid_config_exit_code(self, write_config, tmp_path):
        path = write_config({**TINY_BANDIT, 'unknown_key': 1})
        result = CliRunner().invoke(cli, ['run', '--config', str(path), '--out', str(tmp_path / 'x')])
        assert result.exit_code == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        result = CliRunner().invoke(cli, ['run', '--config', str(tmp_path / 'nope.yaml')])
        assert result.exit_code == EXIT_CONFIG

    def test_subcommand_kind_mismatch(self, write_config, tmp_path):
        result = CliRunner().invoke(cli, ['eluder', '--config', str(write_config(TINY_BANDIT)),
                                          '--out', str(tmp_path / 'x')])
        assert result.exit_code == EXIT_CONFIG

    def test_baseline_writes_second_trace(self, tmp_path):
        cfg = ExperimentConfig.from_dict({**TINY_BANDIT, 'baseline': True, 'svg': False})
        artifacts = run_experiment(cfg, tmp_path)
        assert 'trace_eps_greedy.csv' in artifacts.files
        assert set(artifacts.summary['algorithm']) == {'gfucb', 'eps_greedy'}

    def test_svg_is_written(self, tmp_path):
        artifacts = run_experiment(ExperimentConfig.from_dict(TINY_BANDIT), tmp_path)
        assert artifacts.files['plot.svg'].read_text(encoding='utf-8').lstrip().startswith('<?xml')


class TestSweep:

    def test_one_summary_row_per_task_count(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            **TINY_BANDIT, 'T': 5, 'n_seeds': 2, 'svg': False, 'sweep': {'M': [1, 2, 3]},
        })
        artifacts = run_sweep(cfg, tmp_path)
        summary = pd.read_csv(tmp_path / 'summary.csv')
        assert summary['M'].tolist() == [1, 2, 3]
        assert (summary['n_seeds'] == 2).all()
        runs = pd.read_csv(artifacts.files['runs.csv'])
        assert len(runs) == 6
        trace = pd.read_csv(tmp_path / 'trace.csv')
        assert len(trace) == 5 * (1 + 2 + 3) * 2

    def test_task_pool_groups(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            **TINY_BANDIT, 'T': 4, 'M': 2, 'task_pool': 4, 'svg': False,
        })
        trace = pd.read_csv(run_experiment(cfg, tmp_path).files['trace.csv'])
        assert sorted(trace['task'].unique()) == [0, 1, 2, 3]
        assert len(trace) == 4 * 4


class TestContainment:

    def test_infinite_radius(self):
        cfg = ExperimentConfig.from_dict({**TINY_BANDIT, 'T': 5, 'beta_mode': {'mode': 'fixed', 'value': math.inf}})
        assert containment_monte_carlo(cfg, 3) == 1.0

    def test_zero_radius_with_noise(self):
        cfg = ExperimentConfig.from_dict({
            **TINY_BANDIT, 'T': 5, 'noise_sigma': 0.1, 'beta_mode': {'mode': 'fixed', 'value': 0.0},
        })
        assert containment_monte_carlo(cfg, 3) == 0.0

    def test_cli_prints_frequency(self, write_config, tmp_path):
        data = {**TINY_BANDIT, 'T': 3, 'beta_mode': {'mode': 'fixed', 'value': math.inf}}
        result = CliRunner().invoke(cli, ['containment', '--config', str(write_config(data)),
                                          '--runs', '2', '--out', str(tmp_path / 'c')])
        assert result.exit_code == 0, result.output
        assert 'frequency=1' in result.output

    def test_requires_bandit(self):
        with pytest.raises(ConfigError):
            containment_monte_carlo(ExperimentConfig.from_dict({'kind': 'mdp'}), 2)
        with pytest.raises(ParameterError):
            containment_monte_carlo(ExperimentConfig.from_dict(TINY_BANDIT), 0)

    @pytest.mark.slow
    def test_theory_radius_holds_with_high_probability(self):
        cfg = ExperimentConfig.from_dict({
            **TINY_BANDIT, 'T': 100, 'M': 2, 'delta': 0.1, 'track_width': False,
        })
        assert containment_monte_carlo(cfg, 200) >= 0.8


class TestOtherExperiments:

    def test_mdp_run(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            'kind': 'mdp', 'env': 'random_linear_mdp', 'T': 4, 'M': 2, 'k': 2, 'H': 2,
            'n_states': 3, 'n_actions': 2, 'svg': False,
        })
        trace = pd.read_csv(run_experiment(cfg, tmp_path).files['trace.csv'])
        assert len(trace) == 4 * 2

    def test_transfer_run(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            **TINY_BANDIT, 'kind': 'transfer', 'M': 2, 'T': 8, 't': 6, 'n_targets': 2, 'svg': False,
        })
        artifacts = run_experiment(cfg, tmp_path)
        assert len(pd.read_csv(artifacts.files['trace.csv'])) == 2 * 6
        assert len(pd.read_csv(artifacts.files['trace_decoy.csv'])) == 2 * 6
        assert set(artifacts.summary['algorithm']) == {'pretrained', 'decoy'}

    def test_eluder_run(self, write_config, tmp_path):
        data = {'kind': 'eluder', 'env': 'random_class', 'n_functions': 5, 'domain_size': 5,
                'eps_values': [0.2, 0.5]}
        result = CliRunner().invoke(cli, ['eluder', '--config', str(write_config(data)),
                                          '--out', str(tmp_path / 'e'), '--no-svg'])
        assert result.exit_code == 0, result.output
        summary = pd.read_csv(tmp_path / 'e' / 'summary.csv')
        assert summary['eps'].tolist() == [0.2, 0.5]
        assert (summary['greedy'] <= summary['exhaustive']).all()

    def test_diagnostics_run(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            'kind': 'diagnostics', 'T': 10, 'M': 2, 'categories': 4, 'actions': 3, 'n_decoys': 2,
            'heldout': 20, 'train_sizes': [5, 20], 'svg': False, 'xlsx': True,
        })
        artifacts = run_experiment(cfg, tmp_path)
        for name in ('kernel.csv', 'bonus_error.csv', 'bonus_shrinkage.csv', 'summary.xlsx'):
            assert artifacts.files[name].exists()
        kernel = pd.read_csv(artifacts.files['kernel.csv'])
        assert len(kernel) == 2 * 4 * 4


class TestRegretSlope:

    def test_square_root_growth(self):
        horizons = np.array([10, 100, 1000])
        assert regret_slope(horizons, 2 * np.sqrt(horizons)) == pytest.approx(0.5)

    def test_requires_positive_pairs(self):
        with pytest.raises(DataError):
            regret_slope([10], [1.0])
        with pytest.raises(DataError):
            regret_slope([10, 100], [0.0, 1.0])


def square_root_trace(T: int) -> RegretTrace:
    '''Traza de una tarea con regret acumulado √t'''
    trace = RegretTrace(M=1, kind='bandit')
    for t in range(1, T + 1):
        trace.add(t, 0, 0, 0.0, math.sqrt(t) - math.sqrt(t - 1), 1.0)
    return trace


class TestTraceSlope:

    def test_square_root_trace(self):
        assert trace_regret_slope(square_root_trace(1000), 10) == pytest.approx(0.5, abs=1e-6)

    def test_extras_need_horizon_and_regret(self):
        assert slope_extras([square_root_trace(10)], 10) == {}
        flat = RegretTrace(M=1, kind='bandit')
        for t in range(1, 41):
            flat.add(t, 0, 0, 0.0, 0.0, 1.0)
        assert slope_extras([flat], 40) == {}
        extras = slope_extras([square_root_trace(400), square_root_trace(400)], 400)
        assert extras['regret_slope'] == pytest.approx(0.5, abs=1e-6)

    def test_summary_column(self):
        trace = square_root_trace(200)
        outcome = RunOutcome({}, 'gfucb', 0, 0, trace.to_frame(), trace.total_regret(),
                             slope_extras([trace], 200))
        summary = summarize([outcome], [])
        assert summary.loc[0, 'median_regret_slope'] == pytest.approx(0.5, abs=1e-6)


TRANSFER_LATENT = {
    'kind': 'transfer', 'env': 'latent_category', 'categories': 10, 'actions': 5,
    'svg': False, 'track_width': False,
}


class TestScaledExperiments:

    @pytest.mark.slow
    def test_pretrained_representation_beats_decoy(self, tmp_path):
        cfg = ExperimentConfig.from_dict({**TRANSFER_LATENT, 'M': 10, 'T': 350, 't': 300, 'n_seeds': 20})
        summary = run_sweep(cfg, tmp_path).summary.set_index('algorithm')
        assert summary.loc['pretrained', 'median_final_regret'] < summary.loc['decoy', 'median_final_regret']

    @pytest.mark.slow
    def test_mixture_error_shrinks_with_pretraining(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            **TRANSFER_LATENT, 'categories': 4, 'actions': 3, 'n_decoys': 2, 'M': 4,
            'noise_sigma': 0.0, 'mixture': [0.25] * 4, 't': 5, 'n_targets': 2, 'n_seeds': 3,
            'beta_mode': {'mode': 'tuned'}, 'sweep': {'pretrain_T': [50, 100, 350]},
        })
        summary = run_sweep(cfg, tmp_path).summary
        errors = (summary[summary['algorithm'] == 'pretrained']
                  .sort_values('pretrain_T')['median_mixture_error'].to_numpy())
        assert len(errors) == 3
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))

    @pytest.mark.slow
    def test_bonus_covers_heldout_errors(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            'kind': 'diagnostics', 'T': 200, 'M': 2, 'categories': 4, 'actions': 3, 'n_decoys': 2,
            'heldout': 200, 'train_sizes': [5, 20], 'svg': False, 'track_width': False,
        })
        assert run_experiment(cfg, tmp_path).summary.loc[0, 'fraction_covered'] >= 0.8


def test_shorten_path_keeps_the_tail(tmp_path):
    assert shorten_path('results/run') == 'results/run'
    long_path = tmp_path / ('x' * 80) / 'bandit_latent_category_seed0'
    short = shorten_path(long_path)
    assert len(short) == 56
    assert short.startswith('…') and short.endswith('bandit_latent_category_seed0')
