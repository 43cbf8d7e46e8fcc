import csv
import json
import logging
import math
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from flask import has_app_context
from tqdm import tqdm

from config import Config
from core.compander_service import CompanderService
from core.distortion_service import DistortionService
from core.exceptions import DomainError, QCSError
from core.plevel_service import PLevelService
from core.sensing_service import SensingService
from core.solver_service import SolverService
from models.experiment import (
    TRIAL_COLUMNS,
    ExperimentKind,
    ExperimentSpec,
    GGDNoiseSpec,
    RadiusMode,
    SparseSignalSpec,
    TrialRecord,
)
from models.quantizer import INF, Exponent, GaussianSource, PLevelTable, QuantizerModel, exponent_to_str
from models.reconstruction import SolverConfig, WeightedConstraint

logger = logging.getLogger(__name__)

# 40 bins of width 0.1 on [-2, 2]; +/- 1/2 fall on edges
HIST_EDGES = np.linspace(-2.0, 2.0, 41)

# Substream keys
KEY_SIGNAL, KEY_MATRIX, KEY_NOISE, KEY_SCALES, KEY_SOURCE = range(5)

SUMMARY_COLUMNS = {
    ExperimentKind.EPS_VALIDATE: ['B', 'p', 'ratio', 'stderr', 'trials'],
    ExperimentKind.QCS_SWEEP: ['variant', 'M', 'oversampling', 'p', 'trials', 'failures',
                               'snr_mean', 'snr_stderr', 'qc_rate_mean', 'iterations_mean'],
    ExperimentKind.GGD_STAB: ['M', 'oversampling', 'trials', 'failures', 'snr_stabilized',
                              'snr_unstabilized', 'gain_db', 'predicted_gain_db', 'prediction_bound_db'],
    ExperimentKind.QC_HIST: ['M', 'p', 'bin_left', 'bin_right', 'count', 'violation_fraction'],
    ExperimentKind.UNIFORM_COMPARE: ['M', 'oversampling', 'p', 'trials', 'failures',
                                     'snr_nonuniform', 'snr_uniform', 'gain_db'],
}


def snr_db(x, x_est) -> float:
    """Reconstruction SNR 20 log10(||x|| / ||x - x_est||)"""
    x = np.asarray(x, dtype=float)
    err = float(np.linalg.norm(x - np.asarray(x_est, dtype=float)))
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(float(np.linalg.norm(x)) / err)


def predicted_stabilization_gain_db(sigma0: float, delta0: float) -> float:
    """
    Expected gain of w_i = 1/sigma_i over w = 1 for sigma_i ~ U[sigma0 - delta0, sigma0 + delta0]

    10 log10(E[sigma^2] E[sigma^-2]); 2.43 dB at delta0 = 0.6 sigma0.
    """
    if not 0 <= delta0 < sigma0:
        raise DomainError(f"Need 0 <= delta0 < sigma0, got delta0={delta0}, sigma0={sigma0}")
    return 10.0 * math.log10((sigma0 ** 2 + delta0 ** 2 / 3.0) / ((sigma0 - delta0) * (sigma0 + delta0)))


def qc_residuals(z_est, bins, q: QuantizerModel) -> np.ndarray:
    """alpha^-1 (G(z_est) - G(y)) with G(y) taken at the centre (k - 1/2) alpha of the observed bin"""
    g = np.asarray(CompanderService.compress(z_est, q.source))
    return (g - (np.asarray(bins) - 0.5) * q.alpha) / q.alpha


def uniform_radius(M: int, step: float, p: Exponent) -> float:
    """eps^p = M (alpha'/2)^p / (p+1) for uniform error on [-alpha'/2, alpha'/2]"""
    if math.isinf(p):
        return step / 2.0
    return M ** (1.0 / p) * (step / 2.0) / (p + 1.0) ** (1.0 / p)


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else math.nan


def _stderr(values) -> float:
    values = list(values)
    n = len(values)
    if n < 2:
        return 0.0 if n == 1 else math.nan
    m = _mean(values)
    var = math.fsum((v - m) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


@dataclass
class TrialTask:
    """Everything one worker needs for one (trial, M) cell"""
    kind: ExperimentKind
    trial: int
    M: int
    N: int
    K: int
    B: int
    master_seed: int
    p_list: List[Exponent]
    radius_mode: RadiusMode
    solver: SolverConfig
    quantizer: Optional[QuantizerModel] = None
    tables: Dict = field(default_factory=dict)
    uniform: bool = False
    sigma0: float = 0.1
    delta0: float = 0.06


@dataclass
class TrialOutcome:
    records: List[TrialRecord]
    histograms: Dict = field(default_factory=dict)
    violations: Dict = field(default_factory=dict)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: List[TrialRecord]
    summary: List[Dict]
    extra: Dict = field(default_factory=dict)
    paths: Dict = field(default_factory=dict)

    @property
    def failures(self) -> int:
        return sum(1 for r in self.records if r.failed)


def _solve(y_center, phi, p, weights, radius, cfg):
    constraint = WeightedConstraint(p=p, weights=weights, radius=radius, center=y_center)
    return SolverService.gbpdn_solve(y_center, phi, constraint, cfg)


def _reconstruct(task: TrialTask, record: TrialRecord, x, phi, y_center, weights, radius,
                 consistent=None) -> Optional[np.ndarray]:
    """
    Solve one variant and fill in the record

    Returns:
        Phi x* for a successful solve, None otherwise
    """
    record.radius = radius
    record.weight_norm = float(np.linalg.norm(weights))
    start = time.perf_counter()
    z_est = None
    try:
        report = _solve(y_center, phi, record.p, weights, radius, task.solver)
        record.iterations = report.iterations
        record.fidelity_residual = report.fidelity_residual
        record.converged = report.converged
        record.failed = report.diverged
        record.snr_db = snr_db(x, report.estimate)
        z_est = phi @ report.estimate
        if consistent is not None:
            record.qc_rate = float(np.mean(consistent(z_est)))
    except QCSError as e:
        logger.warning(f"Trial {task.trial} M={task.M} p={record.p} failed: {e}")
        record.failed = True
    record.wallclock_ms = 1000.0 * (time.perf_counter() - start)
    return None if record.failed else z_est


def run_trial(task: TrialTask) -> TrialOutcome:
    """Worker entry point: build the trial's signal and matrix, solve every variant"""
    x_seed = SensingService.derive_seed(task.master_seed, KEY_SIGNAL, task.trial)
    phi_seed = SensingService.derive_seed(task.master_seed, KEY_MATRIX, task.trial, task.M)
    x = SensingService.sparse_signal(SparseSignalSpec(N=task.N, K=task.K, seed=x_seed))
    phi = SensingService.gaussian_matrix(task.M, task.N, phi_seed)
    z = phi @ x
    outcome = TrialOutcome(records=[])

    if task.kind is ExperimentKind.GGD_STAB:
        scales = SensingService.heteroscedastic_scales(
            task.M, task.sigma0, task.delta0,
            SensingService.derive_seed(task.master_seed, KEY_SCALES, task.trial, task.M))
        noise = SensingService.ggd_noise(GGDNoiseSpec(
            shape_p=2.0, scales=SensingService.ggd_scale_for_std(scales, 2.0),
            seed=SensingService.derive_seed(task.master_seed, KEY_NOISE, task.trial, task.M)))
        y = z + noise
        for variant, weights in (('stabilized', 1.0 / scales), ('unstabilized', np.ones(task.M))):
            # oracle radius from the realized noise
            radius = DistortionService.weighted_lp_norm(noise, weights, 2)
            record = TrialRecord(trial_index=task.trial, seed=phi_seed, M=task.M, p=2, B=0,
                                 variant=variant)
            _reconstruct(task, record, x, phi, y, weights, radius)
            outcome.records.append(record)
        return outcome

    q = task.quantizer
    bins = CompanderService.bin_index(z, q)
    for p in task.p_list:
        plevels = task.tables[p].plevels[bins - 1]
        weights = DistortionService.dpc_weights(plevels, p, q.source)
        if task.radius_mode is RadiusMode.ORACLE:
            radius = DistortionService.weighted_lp_norm(z - plevels, weights, p)
        else:
            radius = DistortionService.epsilon_p(task.M, q.B, p, q.source)
        record = TrialRecord(trial_index=task.trial, seed=phi_seed, M=task.M, p=p, B=q.B)
        z_est = _reconstruct(task, record, x, phi, plevels, weights, radius,
                             lambda v: CompanderService.bin_index(v, q) == bins)
        outcome.records.append(record)

        if task.kind is ExperimentKind.QC_HIST and z_est is not None:
            h = qc_residuals(z_est, bins, q)
            counts, _ = np.histogram(np.clip(h, HIST_EDGES[0], HIST_EDGES[-1]), bins=HIST_EDGES)
            outcome.histograms[p] = counts
            outcome.violations[p] = int(np.count_nonzero(np.abs(h) > 0.5))

        if task.uniform:
            y_u = SensingService.uniform_quantize_baseline(z, q.B)
            step = SensingService.uniform_step(z, q.B)
            ones = np.ones(task.M)
            if task.radius_mode is RadiusMode.ORACLE:
                radius_u = DistortionService.weighted_lp_norm(z - y_u, ones, p)
            else:
                radius_u = uniform_radius(task.M, step, p)
            record_u = TrialRecord(trial_index=task.trial, seed=phi_seed, M=task.M, p=p, B=q.B,
                                   variant='uniform')
            _reconstruct(task, record_u, x, phi, y_u, ones, radius_u,
                         lambda v: np.abs(v - y_u) <= step / 2.0)
            outcome.records.append(record_u)
    return outcome


class ExperimentService:
    """Monte-Carlo runners, CSV/JSON emission and the run registry"""

    def __init__(self, plevels: Optional[PLevelService] = None, progress: bool = True):
        self.plevels = plevels or PLevelService()
        self.progress = progress

    def run(self, spec: ExperimentSpec) -> ExperimentResult:
        runners = {
            ExperimentKind.EPS_VALIDATE: self.run_eps_validation,
            ExperimentKind.QCS_SWEEP: self.run_qcs_sweep,
            ExperimentKind.GGD_STAB: self.run_ggd_stabilization,
            ExperimentKind.QC_HIST: self.run_qc_histogram,
            ExperimentKind.UNIFORM_COMPARE: self.run_uniform_compare,
        }
        return runners[spec.kind](spec)

    @staticmethod
    def _require(spec: ExperimentSpec, kind: ExperimentKind):
        if spec.kind is not kind:
            raise DomainError(f"Runner for {kind.value} got a {spec.kind.value} spec")

    def _tables(self, q: QuantizerModel, p_list) -> Dict[Exponent, PLevelTable]:
        return {p: self.plevels.plevel_table(p, q) for p in p_list}

    def run_eps_validation(self, spec: ExperimentSpec) -> ExperimentResult:
        """
        Monte-Carlo ratio E||Q_p[z] - z||_{p,w} / eps_p for z ~ N(0, I_M), per (B, p)

        At p = 2 the compander levels stand in for the centroids; for p > 2 the
        p-optimal levels are used.
        """
        self._require(spec, ExperimentKind.EPS_VALIDATE)
        src = GaussianSource(1.0)
        summary = []
        for B in spec.B_list:
            q = CompanderService.design_quantizer(B, src)
            tables = self._tables(q, spec.p_list)
            eps = {p: DistortionService.epsilon_p(spec.M, B, p, src) for p in spec.p_list}
            ratios = {p: [] for p in spec.p_list}
            for trial in tqdm(range(spec.trials), desc=f"eps B={B}", disable=not self.progress):
                z = SensingService.stream(spec.master_seed, KEY_SOURCE, B, trial).standard_normal(spec.M)
                bins = CompanderService.bin_index(z, q)
                for p in spec.p_list:
                    plevels = (q.levels if p == 2 else tables[p].plevels)[bins - 1]
                    weights = DistortionService.dpc_weights(plevels, p, src)
                    ratios[p].append(DistortionService.weighted_lp_norm(z - plevels, weights, p) / eps[p])
            for p in spec.p_list:
                summary.append({'B': B, 'p': exponent_to_str(p), 'ratio': _mean(ratios[p]),
                                'stderr': _stderr(ratios[p]), 'trials': spec.trials})
            logger.info(f"eps validation B={B} done")
        return ExperimentResult(spec=spec, records=[], summary=summary)

    def _map(self, tasks: List[TrialTask], workers: int, desc: str) -> List[TrialOutcome]:
        if workers <= 1:
            return [run_trial(t) for t in tqdm(tasks, desc=desc, disable=not self.progress)]
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(tqdm(executor.map(run_trial, tasks, chunksize=1), total=len(tasks),
                             desc=desc, disable=not self.progress))

    def _reconstruction_tasks(self, spec: ExperimentSpec, uniform: bool = False) -> List[TrialTask]:
        # normalized signals: sigma0 = ||x||_2 = 1
        q = None
        tables = {}
        if spec.kind is not ExperimentKind.GGD_STAB:
            q = CompanderService.design_quantizer(spec.B, GaussianSource(1.0))
            tables = self._tables(q, spec.p_list)
        tasks = []
        for ratio in spec.oversampling_list:
            for trial in range(spec.trials):
                tasks.append(TrialTask(
                    kind=spec.kind, trial=trial, M=int(ratio * spec.K), N=spec.N, K=spec.K,
                    B=spec.B, master_seed=spec.master_seed, p_list=list(spec.p_list),
                    radius_mode=spec.radius_mode, solver=spec.solver, quantizer=q,
                    tables=tables, uniform=uniform, sigma0=spec.sigma0, delta0=spec.delta0,
                ))
        return tasks

    @staticmethod
    def _collect(outcomes: List[TrialOutcome]) -> List[TrialRecord]:
        records = [r for o in outcomes for r in o.records]
        return sorted(records, key=lambda r: r.sort_key)

    @staticmethod
    def _cell(records, **match) -> List[TrialRecord]:
        return [r for r in records if all(getattr(r, k) == v for k, v in match.items())]

    def run_qcs_sweep(self, spec: ExperimentSpec) -> ExperimentResult:
        """SNR of GBPDN(l_{p,w}) with D_pC weights, levels and radius over (M/K, p, trial)"""
        self._require(spec, ExperimentKind.QCS_SWEEP)
        tasks = self._reconstruction_tasks(spec, uniform=spec.uniform_baseline)
        records = self._collect(self._map(tasks, spec.workers, 'qcs-sweep'))
        variants = ['nonuniform'] + (['uniform'] if spec.uniform_baseline else [])
        summary = []
        for variant in variants:
            for ratio in spec.oversampling_list:
                M = int(ratio * spec.K)
                for p in spec.p_list:
                    cell = self._cell(records, variant=variant, M=M, p=p)
                    ok = [r for r in cell if not r.failed]
                    summary.append({
                        'variant': variant, 'M': M, 'oversampling': ratio, 'p': exponent_to_str(p),
                        'trials': len(cell), 'failures': len(cell) - len(ok),
                        'snr_mean': _mean(r.snr_db for r in ok),
                        'snr_stderr': _stderr([r.snr_db for r in ok]),
                        'qc_rate_mean': _mean(r.qc_rate for r in ok),
                        'iterations_mean': _mean(r.iterations for r in ok),
                    })
        return ExperimentResult(spec=spec, records=records, summary=summary)

    def run_ggd_stabilization(self, spec: ExperimentSpec) -> ExperimentResult:
        """
        Heteroscedastic Gaussian noise, w_i = 1/sigma_i against w = 1, oracle radii

        The in-run prediction is 20 log10(eps ||w|| / (eps_st sqrt(M))) from each
        trial's own radii.
        """
        self._require(spec, ExperimentKind.GGD_STAB)
        tasks = self._reconstruction_tasks(spec)
        records = self._collect(self._map(tasks, spec.workers, 'ggd-stab'))
        bound = predicted_stabilization_gain_db(spec.sigma0, spec.delta0)
        summary = []
        for ratio in spec.oversampling_list:
            M = int(ratio * spec.K)
            stab = {r.trial_index: r for r in self._cell(records, M=M, variant='stabilized')}
            plain = {r.trial_index: r for r in self._cell(records, M=M, variant='unstabilized')}
            paired = [(stab[t], plain[t]) for t in sorted(stab)
                      if t in plain and not stab[t].failed and not plain[t].failed]
            predicted = [20.0 * math.log10(u.radius * s.weight_norm / (s.radius * math.sqrt(M)))
                         for s, u in paired]
            snr_s = _mean(s.snr_db for s, _ in paired)
            snr_u = _mean(u.snr_db for _, u in paired)
            summary.append({
                'M': M, 'oversampling': ratio, 'trials': spec.trials,
                'failures': spec.trials - len(paired),
                'snr_stabilized': snr_s, 'snr_unstabilized': snr_u, 'gain_db': snr_s - snr_u,
                'predicted_gain_db': _mean(predicted), 'prediction_bound_db': bound,
            })
        return ExperimentResult(spec=spec, records=records, summary=summary,
                                extra={'prediction_bound_db': bound})

    def run_qc_histogram(self, spec: ExperimentSpec) -> ExperimentResult:
        """Pooled histogram of alpha^-1 (G(Phi x*) - G(y)) per p, with the QC violation fraction"""
        self._require(spec, ExperimentKind.QC_HIST)
        tasks = self._reconstruction_tasks(spec)
        outcomes = self._map(tasks, spec.workers, 'qc-hist')
        records = self._collect(outcomes)
        summary = []
        violations = {}
        for ratio in spec.oversampling_list:
            M = int(ratio * spec.K)
            for p in spec.p_list:
                cells = [o for o, t in zip(outcomes, tasks) if t.M == M and p in o.histograms]
                counts = np.zeros(HIST_EDGES.size - 1, dtype=int)
                outside = 0
                for o in cells:
                    counts += o.histograms[p]
                    outside += o.violations[p]
                total = int(counts.sum())
                fraction = outside / total if total else math.nan
                violations[f"{M}:{exponent_to_str(p)}"] = fraction
                for left, right, count in zip(HIST_EDGES[:-1], HIST_EDGES[1:], counts):
                    summary.append({'M': M, 'p': exponent_to_str(p), 'bin_left': round(float(left), 10),
                                    'bin_right': round(float(right), 10), 'count': int(count),
                                    'violation_fraction': fraction})
        return ExperimentResult(spec=spec, records=records, summary=summary,
                                extra={'violation_fraction': violations})

    def run_uniform_compare(self, spec: ExperimentSpec) -> ExperimentResult:
        """SNR(non-uniform, p) - SNR(uniform, p) on paired trials"""
        self._require(spec, ExperimentKind.UNIFORM_COMPARE)
        tasks = self._reconstruction_tasks(spec, uniform=True)
        records = self._collect(self._map(tasks, spec.workers, 'uniform-compare'))
        summary = []
        for ratio in spec.oversampling_list:
            M = int(ratio * spec.K)
            for p in spec.p_list:
                nonuni = {r.trial_index: r for r in self._cell(records, M=M, p=p, variant='nonuniform')}
                uni = {r.trial_index: r for r in self._cell(records, M=M, p=p, variant='uniform')}
                paired = [(nonuni[t], uni[t]) for t in sorted(nonuni)
                          if t in uni and not nonuni[t].failed and not uni[t].failed]
                snr_n = _mean(a.snr_db for a, _ in paired)
                snr_u = _mean(b.snr_db for _, b in paired)
                summary.append({
                    'M': M, 'oversampling': ratio, 'p': exponent_to_str(p), 'trials': spec.trials,
                    'failures': spec.trials - len(paired),
                    'snr_nonuniform': snr_n, 'snr_uniform': snr_u, 'gain_db': snr_n - snr_u,
                })
        return ExperimentResult(spec=spec, records=records, summary=summary)

    @staticmethod
    def output_dir(spec: ExperimentSpec) -> Path:
        if spec.output_path:
            return Path(spec.output_path)
        return Path(Config.RESULTS_DIR) / f"{spec.kind.value.lower()}-{spec.master_seed}"

    @staticmethod
    def git_describe() -> str:
        try:
            result = subprocess.run(['git', 'describe', '--always', '--dirty', '--tags'],
                                    capture_output=True, text=True, timeout=5, cwd=Config.BASE_DIR)
        except (OSError, subprocess.SubprocessError):
            return 'unknown'
        return result.stdout.strip() if result.returncode == 0 and result.stdout.strip() else 'unknown'

    @staticmethod
    def package_versions() -> Dict[str, str]:
        versions = {}
        for name in ('numpy', 'scipy', 'flask', 'tqdm'):
            try:
                versions[name] = metadata.version(name)
            except metadata.PackageNotFoundError:
                versions[name] = 'unknown'
        return versions

    @staticmethod
    def _write_csv(path: Path, columns: List[str], rows: List[Dict]):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=columns, extrasaction='ignore')
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _fmt(row.get(k, '')) for k in columns})

    def write_outputs(self, result: ExperimentResult) -> Dict[str, str]:
        """Trials CSV, summary CSV and JSON manifest under the spec's output directory"""
        spec = result.spec
        out = self.output_dir(spec)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}

        if result.records:
            paths['trials_csv'] = str(out / 'trials.csv')
            self._write_csv(out / 'trials.csv', TRIAL_COLUMNS, [r.to_row() for r in result.records])
        paths['summary_csv'] = str(out / 'summary.csv')
        self._write_csv(out / 'summary.csv', SUMMARY_COLUMNS[spec.kind], result.summary)

        manifest = {
            'kind': spec.kind.value,
            'spec': spec.to_dict(),
            'master_seed': spec.master_seed,
            'git_describe': self.git_describe(),
            'versions': self.package_versions(),
            'failures': result.failures,
            'extra': result.extra,
            'created_at': datetime.utcnow().isoformat(),
        }
        paths['manifest'] = str(out / 'manifest.json')
        with open(out / 'manifest.json', 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, default=str)

        result.paths = paths
        logger.info(f"Wrote {spec.kind.value} results to {out}")
        return paths

    @staticmethod
    def record_run(result: ExperimentResult, status: str = 'completed'):
        """Add the run to the registry when called inside an app context"""
        if not has_app_context():
            return None
        from models.database import db
        from models.run import ExperimentRun

        run = ExperimentRun(
            kind=result.spec.kind.value,
            master_seed=result.spec.master_seed,
            spec_json=json.dumps(result.spec.to_dict(), default=str),
            manifest_path=result.paths.get('manifest'),
            trials_csv=result.paths.get('trials_csv'),
            summary_csv=result.paths.get('summary_csv'),
            status=status,
            failures=result.failures,
        )
        db.session.add(run)
        db.session.commit()
        return run

    def execute(self, spec: ExperimentSpec, write: bool = True) -> ExperimentResult:
        """Run, write outputs and register the run"""
        logger.info(f"Starting {spec.kind.value} (seed {spec.master_seed}, {spec.trials} trials)")
        result = self.run(spec)
        if write:
            self.write_outputs(result)
            self.record_run(result)
        if result.failures:
            logger.warning(f"{result.failures} trial(s) failed and were excluded from aggregates")
        return result
