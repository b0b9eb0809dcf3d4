'''
Orquestación de experimentos: construcción de instancias desde la configuración,
corridas individuales, barridos con varias semillas (opcionalmente en paralelo),
Monte Carlo de pertenencia y emisión de CSV / SVG / Excel.
'''
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple
import numpy as np
import pandas as pd
from tqdm import tqdm
from config.settings import settings
from models.environment import BanditInstance, MDPInstance
from models.experiment import ExperimentConfig
from models.trace import RegretTrace
from services.bandit.environments import (
    bandit_from_mdp, latent_category_dataset, make_latent_category_bandit,
    make_linear_rep_bandit, random_linear_rep_class,
)
from services.bandit.gfucb import GFUCBConfig, eps_greedy_run, gfucb_run
from services.core.confidence import Strategy
from services.diagnostics.diagnostics import (
    bonus_shrinkage, bonus_vs_error, fraction_covered, kernel_matrix, make_heldout,
)
from services.eluder.eluder import (
    discretized_linear_class, eluder_dimension_exhaustive, eluder_dimension_greedy,
    random_scalar_class,
)
from services.mdp.environments import make_grid_maze, make_random_linear_mdp, random_maze_layouts
from services.mdp.lsvi import LSVIConfig, mtlsvi_run
from services.report.generator import ExperimentReportGenerator
from services.transfer.linucb import (
    extract_representation, linucb_transfer_run, mixture_prediction_error, random_mixture,
    synthesize_target_task,
)
from utils.exceptions import ConfigError, DataError, ParameterError
from utils.helpers import derive_seed, rng_stream
from utils.logger import get_logger

logger = get_logger(__name__)

SLOPE_MIN_T = 20


@dataclass
class RunOutcome:
    '''Resultado de una corrida de un algoritmo para una semilla'''

    key: Dict[str, Any]
    algorithm: str
    seed: int
    run_id: int
    frame: pd.DataFrame = field(repr=False)
    final_regret: float
    extras: Dict[str, float] = field(default_factory=dict)

    def regret_curve(self) -> Tuple[np.ndarray, np.ndarray]:
        '''Regret acumulado medio por tarea frente a t'''
        per_step = self.frame.groupby('t')['inst_regret'].sum().sort_index()
        n_tasks = self.frame['task'].nunique()
        return per_step.index.to_numpy(), per_step.cumsum().to_numpy() / max(n_tasks, 1)


@dataclass
class ExperimentArtifacts:
    output_dir: Path
    files: Dict[str, Path] = field(default_factory=dict)
    summary: Optional[pd.DataFrame] = None
    metrics: Dict[str, Any] = field(default_factory=dict)


# Construcción de instancias

def task_groups(task_pool: Optional[int], M: int) -> List[Optional[Tuple[int, ...]]]:
    '''Divide un pool de tareas en task_pool/M grupos consecutivos de M tareas'''
    if task_pool is None:
        return [None]
    if task_pool % M != 0:
        raise ParameterError(f'task_pool={task_pool} no es divisible por M={M}')
    return [tuple(range(g * M, (g + 1) * M)) for g in range(task_pool // M)]


def build_bandit_instance(cfg: ExperimentConfig, seed: int,
                          task_ids: Optional[Sequence[int]] = None) -> BanditInstance:
    if cfg.env == 'latent_category':
        return make_latent_category_bandit(
            categories=cfg.categories, K=cfg.actions, M=cfg.M, k=cfg.k, seed=seed,
            perturbation=cfg.perturbation, noise_sigma=cfg.resolved_noise(),
            n_decoys=cfg.n_decoys, obs_dim=cfg.obs_dim, task_ids=task_ids,
        )
    if cfg.env == 'linear_rep':
        p = cfg.obs_dim or cfg.dim_k
        pool, matrices = random_linear_rep_class(p, cfg.dim_k, cfg.n_decoys + 1, cfg.pool_size, seed)
        true_index = int(rng_stream(seed, 'true_index').integers(len(matrices)))
        return make_linear_rep_bandit(
            pool, matrices, true_index, cfg.M, seed=seed, K=cfg.actions,
            noise_sigma=cfg.resolved_noise(),
        )
    if cfg.env == 'random_linear_mdp':
        return bandit_from_mdp(make_random_linear_mdp(
            cfg.dim_k, cfg.n_states, cfg.n_actions, 1, cfg.M, seed=seed,
            noise_sigma=cfg.resolved_noise(), n_decoys=cfg.n_decoys,
        ))
    raise ConfigError(f'Entorno de bandido desconocido: {cfg.env}')


def build_mdp_instance(cfg: ExperimentConfig, seed: int) -> MDPInstance:
    if cfg.env == 'grid_maze':
        n_variants = cfg.maze_variants or cfg.M
        variants = random_maze_layouts(n_variants, seed)
        layouts = [variants[task % n_variants] for task in range(cfg.M)]
        return make_grid_maze(layouts, noise_sigma=cfg.resolved_noise(), n_decoys=cfg.n_decoys, seed=seed)
    if cfg.env == 'random_linear_mdp':
        return make_random_linear_mdp(
            cfg.dim_k, cfg.n_states, cfg.n_actions, cfg.H, cfg.M, seed=seed,
            noise_sigma=cfg.resolved_noise(), n_decoys=cfg.n_decoys,
        )
    raise ConfigError(f'Entorno MDP desconocido: {cfg.env}')


def gfucb_config(cfg: ExperimentConfig, track_containment: Optional[bool] = None) -> GFUCBConfig:
    return GFUCBConfig(
        delta=cfg.delta, alpha=cfg.alpha, ridge=cfg.ridge, strategy=Strategy(cfg.strategy),
        beta_mode=cfg.resolved_beta_mode(), track_width=cfg.track_width,
        track_containment=cfg.track_containment if track_containment is None else track_containment,
    )


def lsvi_config(cfg: ExperimentConfig) -> LSVIConfig:
    return LSVIConfig(
        delta=cfg.delta, alpha=cfg.alpha, ridge=cfg.ridge, strategy=Strategy(cfg.strategy),
        beta_mode=cfg.resolved_beta_mode(), ibe=cfg.ibe,
    )


# Corridas

def _grouped_frames(traces: Sequence[RegretTrace], run_id: int, M: int) -> pd.DataFrame:
    frames = []
    for group, trace in enumerate(traces):
        frame = trace.to_frame(run_id)
        frame['task'] = frame['task'] + group * M
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def _run_bandit(cfg: ExperimentConfig, seed: int, run_id: int, key: Dict[str, Any]) -> List[RunOutcome]:
    groups = task_groups(cfg.task_pool, cfg.M)
    instances = [build_bandit_instance(cfg, seed, task_ids) for task_ids in groups]
    algorithms = {'gfucb': lambda inst: gfucb_run(inst, cfg.T, gfucb_config(cfg), seed)}
    if cfg.baseline:
        algorithms['eps_greedy'] = lambda inst: eps_greedy_run(
            inst, cfg.T, cfg.epsilon, cfg.epsilon_schedule, seed, cfg.ridge
        )
    outcomes = []
    for name, runner in algorithms.items():
        traces = [runner(inst) for inst in instances]
        n_tasks = cfg.M * len(groups)
        extras = slope_extras(traces, cfg.T)
        if name == 'gfucb' and cfg.track_containment:
            extras['contained'] = float(all(trace.all_contained() for trace in traces))
        outcomes.append(RunOutcome(
            key, name, seed, run_id, _grouped_frames(traces, run_id, cfg.M),
            sum(trace.total_regret() for trace in traces) / n_tasks, extras,
        ))
    return outcomes


def _run_mdp(cfg: ExperimentConfig, seed: int, run_id: int, key: Dict[str, Any]) -> List[RunOutcome]:
    inst = build_mdp_instance(cfg, seed)
    trace = mtlsvi_run(inst, cfg.T, lsvi_config(cfg), seed)
    return [RunOutcome(key, 'mtlsvi', seed, run_id, trace.to_frame(run_id), trace.per_task_regret(),
                       slope_extras([trace], cfg.T))]


def _run_transfer(cfg: ExperimentConfig, seed: int, run_id: int, key: Dict[str, Any]) -> List[RunOutcome]:
    inst = build_bandit_instance(cfg, seed)
    pretrain = gfucb_run(inst, cfg.pretrain_T or cfg.T, gfucb_config(cfg, track_containment=False), seed)
    state = pretrain.final_state
    learned_phi, _ = extract_representation(state)
    cls = inst.feature_class
    others = [member for member in cls if member is not learned_phi]
    decoy_phi = others[int(rng_stream(seed, 'decoy_phi').integers(len(others)))] if others else learned_phi

    test_inputs = [x for task in range(inst.M)
                   for x in inst.context_sampler(rng_stream(seed, 'transfer_test', task), task)]
    traces: Dict[str, List[RegretTrace]] = {'pretrained': [], 'decoy': []}
    errors = []
    for target in range(cfg.n_targets):
        mixture = cfg.mixture if cfg.mixture is not None else random_mixture(inst.M, seed, target, cfg.mixture_bound)
        task = synthesize_target_task(inst, mixture, cfg.mixture_bound).with_representation(learned_phi)
        target_seed = derive_seed(seed, 'target', target)
        for label, phi in (('pretrained', learned_phi), ('decoy', decoy_phi)):
            traces[label].append(linucb_transfer_run(
                task, cfg.t, cfg.lambda_reg, cfg.delta, target_seed, phi=phi, ucb_scale=cfg.ucb_scale,
            ))
        errors.append(mixture_prediction_error(state, task, test_inputs))

    outcomes = []
    for label, target_traces in traces.items():
        extras = {'mixture_error': float(np.max(errors))}
        if label == 'pretrained':
            extras['phi_matches_truth'] = float(learned_phi.id == inst.true_index)
        outcomes.append(RunOutcome(
            key, label, seed, run_id, _grouped_frames(target_traces, run_id, 1),
            float(np.mean([trace.total_regret() for trace in target_traces])), extras,
        ))
    return outcomes


_RUNNERS = {'bandit': _run_bandit, 'mdp': _run_mdp, 'transfer': _run_transfer}


def execute_run(cfg_data: Dict[str, Any], run_id: int, seed: int,
                key: Dict[str, Any]) -> List[RunOutcome]:
    '''Una corrida completa; recibe la configuración serializada para poder ejecutarse en otro proceso'''
    cfg = ExperimentConfig.model_validate(cfg_data)
    runner = _RUNNERS.get(cfg.kind)
    if runner is None:
        raise ConfigError(f'kind={cfg.kind} no produce trazas de regret')
    return runner(cfg, seed, run_id, key)


def _execute_job(job) -> List[RunOutcome]:
    return execute_run(*job)


def _containment_job(job) -> bool:
    cfg_data, seed = job
    cfg = ExperimentConfig.model_validate(cfg_data)
    groups = task_groups(cfg.task_pool, cfg.M)
    return all(
        gfucb_run(build_bandit_instance(cfg, seed, task_ids), cfg.T,
                  gfucb_config(cfg, track_containment=True), seed).all_contained()
        for task_ids in groups
    )


def map_jobs(function, jobs: Sequence, workers: int, desc: str) -> List:
    '''Ejecuta trabajos en orden; con workers > 1 usa un pool de procesos'''
    if workers <= 1 or len(jobs) <= 1:
        return [function(job) for job in tqdm(jobs, desc=desc, leave=False)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(tqdm(pool.map(function, jobs), total=len(jobs), desc=desc, leave=False))


# Resúmenes

def summarize(outcomes: Sequence[RunOutcome], key_names: Sequence[str]) -> pd.DataFrame:
    '''Una fila por (clave de barrido, algoritmo): medianas y extremos por semilla'''
    groups: Dict[Tuple, List[RunOutcome]] = {}
    for outcome in outcomes:
        group_key = tuple(outcome.key[name] for name in key_names) + (outcome.algorithm,)
        groups.setdefault(group_key, []).append(outcome)

    rows = []
    for group_key in sorted(groups, key=lambda g: tuple(str(v) if not isinstance(v, (int, float)) else v for v in g)):
        members = sorted(groups[group_key], key=lambda o: o.run_id)
        finals = np.array([o.final_regret for o in members])
        row = dict(zip(key_names, group_key[:-1]))
        row.update({
            'algorithm': group_key[-1],
            'n_seeds': len(members),
            'median_final_regret': float(np.median(finals)),
            'mean_final_regret': float(finals.mean()),
            'std_final_regret': float(finals.std()),
        })
        for extra in sorted({name for o in members for name in o.extras}):
            values = [o.extras[extra] for o in members if extra in o.extras]
            row[f'median_{extra}'] = float(np.median(values))
        row['seeds'] = ';'.join(str(o.seed) for o in members)
        row['final_regrets'] = ';'.join(settings.CSV_FLOAT_FORMAT % v for v in finals)
        rows.append(row)
    return pd.DataFrame(rows)


def mean_curves(outcomes: Sequence[RunOutcome], key_names: Sequence[str]) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    grouped: Dict[str, List[Tuple[np.ndarray, np.ndarray]]] = {}
    for outcome in outcomes:
        label = ', '.join([f'{k}={outcome.key[k]}' for k in key_names] + [outcome.algorithm])
        grouped.setdefault(label, []).append(outcome.regret_curve())
    curves = {}
    for label, members in grouped.items():
        x = members[0][0]
        curves[label] = (x, np.mean([y for _, y in members], axis=0))
    return curves


def regret_slope(horizons: Sequence[float], regrets: Sequence[float]) -> float:
    '''Pendiente por mínimos cuadrados de log Reg frente a log T'''
    horizons, regrets = np.asarray(horizons, dtype=float), np.asarray(regrets, dtype=float)
    if horizons.size < 2 or horizons.size != regrets.size:
        raise DataError('Se requieren al menos dos pares (T, Reg)')
    if np.any(horizons <= 0) or np.any(regrets <= 0):
        raise DataError('T y Reg deben ser positivos para el ajuste log-log')
    slope, _ = np.polyfit(np.log(horizons), np.log(regrets), 1)
    return float(slope)


def trace_regret_slope(trace: RegretTrace, t_min: int, n_points: int = 10) -> float:
    '''Pendiente log-log del regret acumulado de una traza entre t_min y su final'''
    cumulative = trace.cumulative_regret()
    horizons = np.unique(np.geomspace(t_min, len(cumulative), n_points).astype(int))
    return regret_slope(horizons, cumulative[horizons - 1])


def slope_extras(traces: Sequence[RegretTrace], T: int) -> Dict[str, float]:
    '''Pendiente log-log media entre T/10 y T; vacía si T es corto o el regret es nulo'''
    if T < SLOPE_MIN_T:
        return {}
    try:
        slopes = [trace_regret_slope(trace, max(1, T // 10)) for trace in traces]
    except DataError:
        return {}
    return {'regret_slope': float(np.mean(slopes))}


def containment_monte_carlo(cfg: ExperimentConfig, n_runs: int, workers: int = 1) -> float:
    '''Fracción de corridas en las que la verdad pertenece a F_t para todo t'''
    if n_runs < 1:
        raise ParameterError('n_runs debe ser >= 1')
    if cfg.kind != 'bandit':
        raise ConfigError('El Monte Carlo de pertenencia requiere kind=bandit')
    data = cfg.model_dump()
    jobs = [(data, derive_seed(cfg.seed, run)) for run in range(n_runs)]
    flags = map_jobs(_containment_job, jobs, workers, 'pertenencia')
    return float(np.mean(flags))


class EjecutorExperimentos:
    '''Ejecuta un experimento configurado y escribe sus artefactos'''

    def __init__(self, cfg: ExperimentConfig, output_dir: Optional[Path] = None):
        self.cfg = cfg
        self.output_dir = Path(output_dir or cfg.output_dir or default_output_dir(cfg))
        self.report = ExperimentReportGenerator(self.output_dir)

    def ejecutar(self, sweep: bool = False) -> ExperimentArtifacts:
        '''Despacha según kind; sweep recorre la rejilla con n_seeds semillas'''
        if self.cfg.kind == 'eluder':
            return self.ejecutar_eluder()
        if self.cfg.kind == 'diagnostics':
            return self.ejecutar_diagnosticos()
        return self._ejecutar_corridas(sweep)

    def _jobs(self, sweep: bool):
        data = self.cfg.model_dump()
        if not sweep:
            return [], [(data, 0, self.cfg.seed, {})]
        key_names = sorted(self.cfg.sweep)
        points = list(itertools.product(*(self.cfg.sweep[name] for name in key_names))) or [()]
        jobs = []
        for point in points:
            key = dict(zip(key_names, point))
            point_data = ExperimentConfig.from_dict({**data, **key, 'sweep': {}}).model_dump()
            for rep in range(self.cfg.n_seeds):
                jobs.append((point_data, len(jobs), derive_seed(self.cfg.seed, rep), key))
        return key_names, jobs

    def _ejecutar_corridas(self, sweep: bool) -> ExperimentArtifacts:
        key_names, jobs = self._jobs(sweep)
        logger.info(f'🧪 {len(jobs)} corridas ({self.cfg.kind}/{self.cfg.env}), workers={self.cfg.workers}')
        outcomes = [o for batch in map_jobs(_execute_job, jobs, self.cfg.workers, 'corridas') for o in batch]

        artifacts = ExperimentArtifacts(self.output_dir)
        primary = outcomes[0].algorithm
        for algorithm in dict.fromkeys(o.algorithm for o in outcomes):
            frame = pd.concat([o.frame for o in outcomes if o.algorithm == algorithm], ignore_index=True)
            filename = 'trace.csv' if algorithm == primary else f'trace_{algorithm}.csv'
            artifacts.files[filename] = self.report.guardar_csv(frame, filename)
        if sweep:
            runs = pd.DataFrame([
                {'run_id': job[1], 'seed': job[2], **job[3]} for job in jobs
            ])
            artifacts.files['runs.csv'] = self.report.guardar_csv(runs, 'runs.csv')

        artifacts.summary = summarize(outcomes, key_names)
        artifacts.files['summary.csv'] = self.report.guardar_csv(artifacts.summary, 'summary.csv')
        artifacts.metrics = {
            'kind': self.cfg.kind, 'env': self.cfg.env, 'runs': len(jobs),
            'median_final_regret': float(np.median([o.final_regret for o in outcomes if o.algorithm == primary])),
        }
        self._graficos(artifacts, mean_curves(outcomes, key_names),
                       'Regret acumulado medio por tarea', 't', 'Reg(t) / M')
        return artifacts

    def ejecutar_eluder(self) -> ExperimentArtifacts:
        cfg = self.cfg
        if cfg.env == 'linear_class':
            cls = discretized_linear_class(cfg.k or 3)
        else:
            cls = random_scalar_class(cfg.n_functions, cfg.domain_size, cfg.seed)
        rows = []
        for eps in sorted(cfg.eps_values):
            rows.append({
                'eps': eps,
                'exhaustive': eluder_dimension_exhaustive(cls, eps),
                'greedy': eluder_dimension_greedy(cls, eps),
                'n_functions': cls.n_functions,
                'domain_size': len(cls.domain),
            })
            logger.info(f'  ε={eps}: dim_E={rows[-1]["exhaustive"]} (greedy {rows[-1]["greedy"]})')
        summary = pd.DataFrame(rows)
        artifacts = ExperimentArtifacts(self.output_dir, summary=summary)
        artifacts.files['summary.csv'] = self.report.guardar_csv(summary, 'summary.csv')
        artifacts.metrics = {'env': cfg.env, 'max_dim': int(summary['exhaustive'].max())}
        eps = summary['eps'].to_numpy()
        self._graficos(artifacts, {
            'exhaustive': (eps, summary['exhaustive'].to_numpy()),
            'greedy': (eps, summary['greedy'].to_numpy()),
        }, 'Dimensión eluder', 'ε', 'dim_E')
        return artifacts

    def ejecutar_diagnosticos(self) -> ExperimentArtifacts:
        cfg = self.cfg
        inst = build_bandit_instance(cfg, cfg.seed)
        trace = gfucb_run(inst, cfg.T, gfucb_config(cfg, track_containment=False), cfg.seed)
        state = trace.final_state
        heldout = make_heldout(inst, cfg.heldout, cfg.seed)
        beta = state.beta if cfg.diag_beta is None else cfg.diag_beta

        pairs = bonus_vs_error(state, heldout, beta)
        dataset = latent_category_dataset(inst, 10, cfg.seed, cfg.perturbation)
        kernels = {
            'learned': kernel_matrix(state.center.phi, dataset),
            'true': kernel_matrix(inst.feature_class[inst.true_index], dataset),
        }
        curve = bonus_shrinkage(inst, cfg.train_sizes, heldout, cfg.seed, beta, cfg.ridge)

        artifacts = ExperimentArtifacts(self.output_dir)
        artifacts.files['bonus_error.csv'] = self.report.guardar_csv(pd.DataFrame([
            {'task': task, 'error': error, 'bonus': bonus}
            for (task, _, _), (error, bonus) in zip(heldout, pairs)
        ]), 'bonus_error.csv')
        artifacts.files['kernel.csv'] = self.report.guardar_csv(pd.DataFrame([
            {'representation': name, 'i': i, 'j': j, 'value': km.C[i, j]}
            for name, km in kernels.items()
            for i in range(km.C.shape[0]) for j in range(km.C.shape[1])
        ]), 'kernel.csv')
        artifacts.files['bonus_shrinkage.csv'] = self.report.guardar_csv(
            pd.DataFrame(curve, columns=['n', 'mean_bonus', 'std_bonus']), 'bonus_shrinkage.csv'
        )
        summary = pd.DataFrame([{
            'seed': cfg.seed, 'T': cfg.T, 'M': cfg.M, 'beta': beta,
            'learned_phi': state.center.phi_index, 'true_phi': inst.true_index,
            'fraction_covered': fraction_covered(pairs),
            'dominance_learned': kernels['learned'].diagonal_dominance(),
            'dominance_true': kernels['true'].diagonal_dominance(),
            'shrinkage_first': curve[0][1], 'shrinkage_last': curve[-1][1],
        }])
        artifacts.summary = summary
        artifacts.files['summary.csv'] = self.report.guardar_csv(summary, 'summary.csv')
        artifacts.metrics = summary.iloc[0].to_dict()
        sizes = np.array([n for n, _, _ in curve], dtype=float)
        self._graficos(artifacts, {'mean_bonus': (sizes, np.array([m for _, m, _ in curve]))},
                       'Bonus medio sobre heldout', 'muestras por tarea', 'bonus', log_scale=True)
        return artifacts

    def ejecutar_pertenencia(self, n_runs: int) -> ExperimentArtifacts:
        frequency = containment_monte_carlo(self.cfg, n_runs, self.cfg.workers)
        summary = pd.DataFrame([{
            'n_runs': n_runs, 'M': self.cfg.M, 'T': self.cfg.T, 'delta': self.cfg.delta,
            'beta_mode': self.cfg.beta_mode.mode, 'frequency': frequency,
        }])
        artifacts = ExperimentArtifacts(self.output_dir, summary=summary, metrics={'frequency': frequency})
        artifacts.files['summary.csv'] = self.report.guardar_csv(summary, 'summary.csv')
        if self.cfg.xlsx:
            artifacts.files['summary.xlsx'] = self.report.generar_excel(summary, artifacts.metrics)
        return artifacts

    def _graficos(self, artifacts: ExperimentArtifacts, curves, title: str, xlabel: str,
                  ylabel: str, log_scale: bool = False):
        if self.cfg.svg:
            artifacts.files['plot.svg'] = self.report.generar_svg(
                curves, 'plot.svg', title, xlabel, ylabel, log_scale
            )
        if self.cfg.xlsx:
            artifacts.files['summary.xlsx'] = self.report.generar_excel(artifacts.summary, artifacts.metrics)


def default_output_dir(cfg: ExperimentConfig) -> Path:
    return settings.RESULTS_DIR / f'{cfg.kind}_{cfg.env}_seed{cfg.seed}'


def run_experiment(cfg: ExperimentConfig, output_dir: Optional[Path] = None) -> ExperimentArtifacts:
    '''Corrida única (o el experimento eluder / diagnóstico) con sus artefactos'''
    return EjecutorExperimentos(cfg, output_dir).ejecutar(sweep=False)


def run_sweep(cfg: ExperimentConfig, output_dir: Optional[Path] = None) -> ExperimentArtifacts:
    '''Rejilla de barrido x n_seeds semillas'''
    return EjecutorExperimentos(cfg, output_dir).ejecutar(sweep=True)
