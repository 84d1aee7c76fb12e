"""
Experiment Runner

High-level command logic behind the CLI: distance computation, ellipse
dataset generation, dataset embedding, PCA with mode sweeps, classification,
geodesic rendering and kappa sweeps. Every command writes CSV artifacts whose
first lines echo the run configuration as ``# key=value`` comments.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .analysis import (EmbeddingMatrix, embed_dataset, exp_along_mode, hellinger_mean, knn_classify, lda, lda_samples_near_levels, linear_mean,
                       load_embedding, pca, read_embedding_csv, save_embedding, save_pca, uniform_reference)
from .config import config
from .geodesic import hk_geodesic, w2_geodesic
from .measure import DiscreteMeasure, GridSpec, _fmt, gen_ellipses, load_measure, normalize, read_grid_header, save_measure, save_pgm, to_image
from .solver import SolverConfig, hk_distance_sq, w2_distance_sq

REFERENCES = ('linear_mean', 'uniform', 'hellinger_mean', 'file')
ALGORITHMS = ('knn', 'lda')


class ExperimentError(Exception):
    """Raised for invalid experiment settings or inputs."""
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings shared by all commands; kappa is ignored for w2."""

    metric: str = 'hk'
    kappa: float = 1.0
    reference: str = 'linear_mean'
    grid: Optional[GridSpec] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    workers: int = field(default_factory=lambda: config.workers)
    reference_file: Optional[str] = None
    singular_threshold: float = field(default_factory=lambda: config.singular_threshold)
    normalize: bool = False

    def __post_init__(self):
        if self.metric not in ('hk', 'w2'):
            raise ExperimentError(f"Unknown metric {self.metric!r}; expected hk or w2")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ExperimentError(f"kappa must be positive (got {self.kappa})")
        if self.reference not in REFERENCES:
            raise ExperimentError(f"Unknown reference {self.reference!r}; expected one of {', '.join(REFERENCES)}")
        if self.reference == 'file' and not self.reference_file:
            raise ExperimentError("reference 'file' needs a reference file")
        if self.workers < 1:
            raise ExperimentError(f"workers must be at least 1 (got {self.workers})")
        if not 0 <= self.singular_threshold <= 1:
            raise ExperimentError(f"singular threshold must lie in [0, 1] (got {self.singular_threshold})")

    def metadata(self, command: str) -> Dict[str, str]:
        """Deterministic configuration echo for CSV headers."""
        solver = self.solver
        meta = {
            'command': command,
            'metric': self.metric,
            'kappa': _fmt(self.kappa),
            'reference': self.reference,
            'seed': str(self.seed),
            'epsilon_start': 'auto' if solver.epsilon_start is None else _fmt(solver.epsilon_start),
            'epsilon_final': _fmt(solver.epsilon_final),
            'epsilon_decay': _fmt(solver.epsilon_decay),
            'max_iters_per_eps': str(solver.max_iters_per_eps),
            'tol_marginal': _fmt(solver.tol_marginal),
            'log_domain': str(solver.log_domain).lower(),
            'singular_threshold': _fmt(self.singular_threshold),
        }
        if self.grid is not None:
            meta['grid'] = _grid_text(self.grid)
        return meta


def _grid_text(grid: GridSpec) -> str:
    return grid.header()[len('#grid '):]


def _grid_from_text(text: str) -> GridSpec:
    tokens = text.split()
    if len(tokens) != 6:
        raise ExperimentError(f"Invalid grid metadata {text!r}")
    return GridSpec((int(tokens[0]), int(tokens[1])), (float(tokens[2]), float(tokens[3])), (float(tokens[4]), float(tokens[5])))


def _write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]], metadata: Dict[str, str]) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        for key, value in metadata.items():
            f.write(f"# {key}={value}\n")
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return str(path)


def read_manifest(path: str) -> List[Dict[str, Any]]:
    """
    Read a manifest CSV with a ``file`` column and optional p1, p2, label.

    Relative file paths are resolved against the manifest's directory.
    """
    manifest = Path(path)
    if not manifest.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    with open(manifest, 'r', encoding='utf-8') as f:
        reader = csv.DictReader(line for line in f if not line.startswith('#'))
        if reader.fieldnames is None or 'file' not in reader.fieldnames:
            raise ExperimentError(f"{path}: manifest needs a 'file' column")
        entries = []
        for row in reader:
            entry: Dict[str, Any] = {'file': str((manifest.parent / row['file']).resolve()) if not Path(row['file']).is_absolute() else row['file']}
            for key in ('p1', 'p2'):
                if row.get(key) not in (None, ''):
                    entry[key] = float(row[key])
            if row.get('label') not in (None, ''):
                entry['label'] = int(row['label'])
            entries.append(entry)
    if not entries:
        raise ExperimentError(f"{path}: manifest lists no files")
    return entries


class ExperimentRunner:
    """Runs CLI commands against an output directory."""

    def __init__(self, experiment_config: Optional[ExperimentConfig] = None, output_dir: Optional[str] = None):
        """
        Initialize the runner.

        Args:
            experiment_config: Command settings, defaults when None
            output_dir: Artifact directory, HK_OUTPUT_DIR when None
        """
        self.config = experiment_config or ExperimentConfig()
        self.output_dir = Path(output_dir or config.output_dir)
        self.logger = logging.getLogger('hk_tangent.experiment')

    def _load(self, path: str, force_normalize: bool = False) -> DiscreteMeasure:
        mu = load_measure(path)
        return normalize(mu) if self.config.normalize or force_normalize else mu

    def _grid_for(self, path: str) -> GridSpec:
        grid = self.config.grid or read_grid_header(path)
        if grid is None:
            raise ExperimentError(f"No grid given and {path} is not a csv_grid file; pass --grid")
        return grid

    def distance(self, file_a: str, file_b: str) -> Dict[str, Any]:
        """HK_kappa (or W2) distance between two measure files with plan diagnostics."""
        mu0 = self._load(file_a)
        mu1 = self._load(file_b)
        if self.config.metric == 'hk':
            value_sq, coupling = hk_distance_sq(mu0, mu1, self.config.kappa, self.config.solver)
        else:
            value_sq, coupling = w2_distance_sq(mu0, mu1, self.config.solver)

        result = {
            'metric': self.config.metric,
            'distance_sq': value_sq,
            'distance': math.sqrt(max(value_sq, 0.0)),
            'plan_mass': coupling.total_mass,
            'marginal_error_0': float(np.abs(coupling.row_marginal.masses - mu0.masses).sum()),
            'marginal_error_1': float(np.abs(coupling.col_marginal.masses - mu1.masses).sum()),
            'iterations': coupling.iterations,
            'converged': coupling.converged,
        }
        self.logger.info(f"{self.config.metric} distance {result['distance']:.10g} ({coupling.iterations} iterations)")
        return result

    def generate_ellipses(self, resolution: int = 64, steps: int = 8) -> Dict[str, Any]:
        """Write the steps x steps ellipse dataset as csv_grid files plus manifest.csv."""
        values = np.linspace(-1.0, 1.0, steps)
        grid = GridSpec.pixels(resolution, resolution)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        rows, files = [], []
        for i, p1 in enumerate(values):
            for j, p2 in enumerate(values):
                name = f"ellipses_{i}_{j}.csv"
                mu = gen_ellipses(float(p1), float(p2), resolution)
                save_measure(mu, str(self.output_dir / name), 'csv_grid', grid, {'p1': _fmt(p1), 'p2': _fmt(p2)})
                rows.append([name, float(p1), float(p2), 1 if p2 > 0 else 0])
                files.append(str(self.output_dir / name))
        manifest = _write_table(self.output_dir / 'manifest.csv', ['file', 'p1', 'p2', 'label'], rows, {'command': 'gen-ellipses', 'resolution': str(resolution)})
        self.logger.info(f"Generated {len(files)} ellipse images in {self.output_dir}")
        return {'files': files, 'manifest': manifest}

    def _load_dataset(self, manifest_path: str) -> Tuple[List[DiscreteMeasure], List[str], Optional[np.ndarray], GridSpec]:
        entries = read_manifest(manifest_path)
        samples = [self._load(entry['file'], force_normalize=True) for entry in entries]
        names = [Path(entry['file']).name for entry in entries]
        labels = np.array([entry['label'] for entry in entries]) if all('label' in entry for entry in entries) else None
        grid = self._grid_for(entries[0]['file'])
        return samples, names, labels, grid

    def _reference(self, samples: List[DiscreteMeasure], grid: GridSpec) -> DiscreteMeasure:
        kind = self.config.reference
        if kind == 'linear_mean':
            reference = linear_mean(samples, grid)
        elif kind == 'hellinger_mean':
            reference = hellinger_mean(samples, grid)
        elif kind == 'uniform':
            reference = uniform_reference(grid)
        else:
            reference = load_measure(self.config.reference_file)
        return normalize(reference)

    def _embed(self, samples, names, labels, reference, metric: str, kappa: float, progress: bool = True) -> EmbeddingMatrix:
        return embed_dataset(reference, samples, metric, kappa, self.config.solver, self.config.workers, labels, names,
                             self.config.singular_threshold, progress=progress)

    def embed(self, manifest_path: str, out_name: str = 'embedding.csv') -> Dict[str, Any]:
        """Embed a manifest dataset at the configured reference and save it with the reference."""
        samples, names, labels, grid = self._load_dataset(manifest_path)
        reference = self._reference(samples, grid)
        emb = self._embed(samples, names, labels, reference, self.config.metric, self.config.kappa)

        reference_path = save_measure(reference, str(self.output_dir / 'reference.csv'))
        metadata = self.config.metadata('embed')
        metadata.update({'kappa': _fmt(emb.kappa), 'reference_file': 'reference.csv', 'grid': _grid_text(grid)})
        path = save_embedding(emb, str(self.output_dir / out_name), metadata)
        return {'path': path, 'reference': reference_path, 'samples': len(emb), 'dimension': emb.rows.shape[1], 'unconverged': emb.unconverged}

    def _load_embedding(self, embedding_path: str) -> Tuple[EmbeddingMatrix, Dict[str, str]]:
        metadata, _, _, _ = read_embedding_csv(embedding_path)
        reference_name = metadata.get('reference_file')
        if not reference_name:
            raise ExperimentError(f"{embedding_path}: missing reference_file metadata")
        reference_path = Path(reference_name)
        if not reference_path.is_absolute():
            reference_path = Path(embedding_path).parent / reference_path
        return load_embedding(embedding_path, load_measure(str(reference_path))), metadata

    def pca(self, embedding_path: str, modes: int = 2, steps: int = 5, pgm: bool = False) -> Dict[str, Any]:
        """
        PCA of a saved embedding plus exponential-map sweeps along the leading modes.

        Each mode is swept over ``steps`` values of s in [-std, std]; frames are
        csv_grid files (and PGM renders when requested).
        """
        emb, metadata = self._load_embedding(embedding_path)
        grid = _grid_from_text(metadata['grid']) if 'grid' in metadata else self.config.grid
        if grid is None:
            raise ExperimentError("No grid recorded in the embedding; pass --grid")
        result = pca(emb)

        echo = {'command': 'pca', 'metric': emb.metric, 'kappa': _fmt(emb.kappa), 'source': Path(embedding_path).name}
        eigen_path, modes_path = save_pca(result, str(self.output_dir / 'pca_eigenvalues.csv'), str(self.output_dir / 'pca_modes.csv'), echo)

        sweep_rows = []
        for mode in range(min(modes, result.modes.shape[0])):
            sigma = float(result.std[mode])
            for step, s in enumerate(np.linspace(-sigma, sigma, steps)):
                frame = exp_along_mode(emb.reference, result, mode, float(s), emb.metric, grid)
                name = f"mode{mode}_step{step}"
                save_measure(frame, str(self.output_dir / f"{name}.csv"), 'csv_grid', grid, {'mode': str(mode), 's': _fmt(s)})
                if pgm:
                    save_pgm(to_image(frame, grid), str(self.output_dir / f"{name}.pgm"))
                sweep_rows.append([mode, step, float(s), frame.total_mass])
        sweeps = _write_table(self.output_dir / 'pca_sweeps.csv', ['mode', 'step', 's', 'total_mass'], sweep_rows, echo)

        ratios = result.explained_variance_ratio
        self.logger.info(f"PCA: leading explained variance {', '.join(f'{r:.3f}' for r in ratios[:modes])}")
        return {'eigenvalues': eigen_path, 'modes': modes_path, 'sweeps': sweeps, 'explained_variance_ratio': ratios.tolist()}

    def _classify(self, emb: EmbeddingMatrix, algo: str, k: int, protocol: str) -> Dict[str, float]:
        if algo == 'knn':
            return knn_classify(emb, k, protocol, seed=self.config.seed).as_dict()
        if algo == 'lda':
            result = lda(emb)
            positives = result.predictions == result.classes[1]
            truth = emb.labels == result.classes[1]
            return {
                'accuracy': result.accuracy,
                'tpr': float(np.mean(positives[truth])) if truth.any() else float('nan'),
                'fpr': float(np.mean(positives[~truth])) if (~truth).any() else float('nan'),
                'auc': result.auc,
                'evaluated': len(emb),
            }
        raise ExperimentError(f"Unknown classifier {algo!r}; expected one of {', '.join(ALGORITHMS)}")

    def classify(self, embedding_path: str, algo: str = 'knn', k: int = 1, protocol: str = 'leave_one_out') -> Dict[str, Any]:
        """Classify a labelled embedding and write the metrics table."""
        emb, _ = self._load_embedding(embedding_path)
        if emb.labels is None:
            raise ExperimentError(f"{embedding_path}: embedding has no labels")
        metrics = self._classify(emb, algo, k, protocol)

        if algo == 'lda':
            result = lda(emb)
            levels = [-3, -2, -1, 0, 1, 2, 3]
            picks = lda_samples_near_levels(result, levels)
            names = emb.names or tuple(str(i) for i in range(len(emb)))
            rows = [[level, names[i], float(result.projections[i])] for level, i in zip(levels, picks)]
            _write_table(self.output_dir / 'lda_levels.csv', ['level', 'sample', 'projection'], rows, {'command': 'classify', 'algo': 'lda'})

        echo = {'command': 'classify', 'algo': algo, 'k': str(k), 'protocol': protocol, 'seed': str(self.config.seed), 'metric': emb.metric, 'kappa': _fmt(emb.kappa)}
        path = _write_table(self.output_dir / f"classification_{algo}.csv", list(metrics.keys()), [list(metrics.values())], echo)
        self.logger.info(f"{algo} accuracy {metrics['accuracy']:.4f}")
        return {'path': path, **metrics}

    def geodesic(self, file_a: str, file_b: str, frames: int = 5, pgm: bool = False) -> Dict[str, Any]:
        """Render the geodesic between two measures as numbered csv_grid frames."""
        if frames < 2:
            raise ExperimentError(f"A geodesic needs at least 2 frames (got {frames})")
        mu0 = self._load(file_a)
        mu1 = self._load(file_b)
        grid = self._grid_for(file_a)
        times = np.linspace(0.0, 1.0, frames)
        if self.config.metric == 'hk':
            measures, coupling = hk_geodesic(mu0, mu1, times, self.config.kappa, self.config.solver, self.config.singular_threshold)
        else:
            measures, coupling = w2_geodesic(mu0, mu1, times, self.config.solver)

        metadata = self.config.metadata('geodesic')
        files = []
        for index, (t, measure) in enumerate(zip(times, measures)):
            name = f"frame_{index:03d}"
            meta = dict(metadata, t=_fmt(t))
            files.append(save_measure(measure, str(self.output_dir / f"{name}.csv"), 'csv_grid', grid, meta))
            if pgm:
                save_pgm(to_image(measure, grid), str(self.output_dir / f"{name}.pgm"))
        return {'files': files, 'converged': coupling.converged, 'plan_mass': coupling.total_mass}

    def kappa_sweep(self, manifest_path: str, kappas: Sequence[float], algo: str = 'knn', k: int = 1, protocol: str = 'leave_one_out') -> Dict[str, Any]:
        """
        Embed and classify the dataset for each kappa, plus a w2 row.

        Also reports the squared HK_kappa distance of the first two manifest
        samples, which is non-decreasing in kappa.
        """
        if not kappas or any(not kappa > 0 for kappa in kappas):
            raise ExperimentError("kappa sweep needs positive kappa values")
        samples, names, labels, grid = self._load_dataset(manifest_path)
        if labels is None:
            raise ExperimentError(f"{manifest_path}: manifest has no labels")
        if len(samples) < 2:
            raise ExperimentError("kappa sweep needs at least two samples")
        reference = self._reference(samples, grid)

        rows = []
        unconverged = 0
        for kappa in tqdm(list(kappas), desc="Kappa sweep", unit="kappa"):
            emb = self._embed(samples, names, labels, reference, 'hk', float(kappa), progress=False)
            metrics = self._classify(emb, algo, k, protocol)
            pair_sq, coupling = hk_distance_sq(samples[0], samples[1], float(kappa), self.config.solver)
            unconverged += emb.unconverged + (0 if coupling.converged else 1)
            rows.append(['hk', float(kappa), metrics['accuracy'], metrics['tpr'], metrics['fpr'], metrics['auc'], pair_sq])

        emb = self._embed(samples, names, labels, reference, 'w2', 1.0, progress=False)
        metrics = self._classify(emb, algo, k, protocol)
        unconverged += emb.unconverged
        rows.append(['w2', '', metrics['accuracy'], metrics['tpr'], metrics['fpr'], metrics['auc'], ''])

        metadata = self.config.metadata('kappa-sweep')
        metadata.update({'algo': algo, 'k': str(k), 'protocol': protocol})
        path = _write_table(self.output_dir / 'kappa_sweep.csv', ['metric', 'kappa', 'accuracy', 'tpr', 'fpr', 'auc', 'hk_sq_first_pair'], rows, metadata)
        return {'path': path, 'rows': rows, 'unconverged': unconverged}

