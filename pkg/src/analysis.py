"""
Dataset Analysis over Linearized Embeddings

Reference measures, embedding of a dataset into the tangent space at a
reference, PCA with mode sweeps through the exponential map, Fisher LDA,
k-nearest-neighbour classification and the persistence of embeddings.
"""

import concurrent.futures
import csv
import functools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import cdist
from scipy.stats import rankdata
from tqdm import tqdm

from .measure import DiscreteMeasure, GridSpec, _fmt, measure_from_image, normalize, rasterize, rescale_domain, to_image, uniform_measure
from .solver import SolverConfig, solve_hk, solve_w2
from .tangent import (ALPHA_SLACK, barycentric_project, hk_embedding_vector, hk_exp, hk_log, tangent_from_vector, w2_embedding_vector, w2_exp,
                      w2_log)

logger = logging.getLogger('hk_tangent.analysis')

METRICS = ('hk', 'w2')
PROTOCOLS = ('leave_one_out', 'train_test')
# Singular mass allowed in an embedded sample, relative to its total mass.
SINGULAR_TOLERANCE = 1e-6


class AnalysisError(Exception):
    """Base exception for dataset analysis failures."""
    pass


class EmbeddingError(AnalysisError):
    """Raised when a sample cannot be embedded at the chosen reference."""
    pass


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise AnalysisError(f"Unknown metric {metric!r}; expected one of {', '.join(METRICS)}")


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """
    One flattened, mass-weighted tangent vector per sample.

    Dot products of rows equal the tangent inner products at ``reference``.
    HK rows are multiplied by kappa so distances are in original units.
    """

    rows: NDArray[np.float64]
    reference: DiscreteMeasure
    metric: str = 'hk'
    kappa: float = 1.0
    labels: Optional[NDArray] = None
    names: Optional[Tuple[str, ...]] = None
    unconverged: int = 0

    def __post_init__(self):
        _check_metric(self.metric)
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2:
            raise AnalysisError("Embedding rows must form a matrix")
        rows.setflags(write=False)
        object.__setattr__(self, 'rows', rows)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (rows.shape[0],):
                raise AnalysisError(f"Got {labels.size} labels for {rows.shape[0]} rows")
            object.__setattr__(self, 'labels', labels)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def gram(self) -> NDArray[np.float64]:
        return self.rows @ self.rows.T

    def with_labels(self, labels) -> 'EmbeddingMatrix':
        return EmbeddingMatrix(self.rows, self.reference, self.metric, self.kappa, np.asarray(labels), self.names, self.unconverged)


@dataclass(frozen=True, eq=False)
class PcaResult:
    modes: NDArray[np.float64]
    eigenvalues: NDArray[np.float64]
    mean: NDArray[np.float64]
    explained_variance_ratio: NDArray[np.float64]
    metric: str = 'hk'
    kappa: float = 1.0

    @property
    def std(self) -> NDArray[np.float64]:
        return np.sqrt(self.eigenvalues)

    def coordinates(self, rows: NDArray[np.float64]) -> NDArray[np.float64]:
        return (np.asarray(rows) - self.mean) @ self.modes.T

    def reconstruct(self, coordinates: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.mean + np.asarray(coordinates) @ self.modes


@dataclass(frozen=True, eq=False)
class LdaResult:
    direction: NDArray[np.float64]
    offset: float
    projections: NDArray[np.float64]
    predictions: NDArray
    classes: Tuple
    accuracy: float
    auc: float


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    tpr: float
    fpr: float
    auc: float
    evaluated: int

    def as_dict(self) -> Dict[str, float]:
        return {'accuracy': self.accuracy, 'tpr': self.tpr, 'fpr': self.fpr, 'auc': self.auc, 'evaluated': self.evaluated}


def _sample_images(samples: Sequence[DiscreteMeasure], grid: GridSpec) -> List[NDArray[np.float64]]:
    if not samples:
        raise AnalysisError("Need at least one sample to build a reference")
    return [to_image(sample, grid) for sample in samples]


def linear_mean(samples: Sequence[DiscreteMeasure], grid: GridSpec) -> DiscreteMeasure:
    """Pointwise average of the rasterized samples."""
    images = _sample_images(samples, grid)
    return measure_from_image(sum(images) / len(images), grid)


def hellinger_mean(samples: Sequence[DiscreteMeasure], grid: GridSpec) -> DiscreteMeasure:
    """Square of the pointwise average of square-rooted rasterized samples."""
    images = _sample_images(samples, grid)
    return measure_from_image((sum(np.sqrt(image) for image in images) / len(images)) ** 2, grid)


def uniform_reference(grid: GridSpec) -> DiscreteMeasure:
    return normalize(uniform_measure(grid))


def _embed_one(mu0: DiscreteMeasure, sample: DiscreteMeasure, metric: str, kappa: float, cfg: SolverConfig, singular_threshold: Optional[float]) -> Tuple[NDArray[np.float64], bool]:
    if metric == 'w2':
        coupling = solve_w2(mu0, sample, cfg)
        return w2_embedding_vector(mu0, w2_log(mu0, sample, coupling)), coupling.converged

    reference = rescale_domain(mu0, kappa)
    target = rescale_domain(sample, kappa)
    coupling = solve_hk(reference, target, cfg.at_length_scale(kappa))
    decomp = barycentric_project(coupling, reference, target, singular_threshold)
    field_ = hk_log(reference, target, decomp)
    if field_.singular_mass > SINGULAR_TOLERANCE * max(sample.total_mass, 1e-300):
        raise EmbeddingError(f"Sample has singular mass {field_.singular_mass:.3g} at this reference; widen the support of the reference measure")
    return kappa * hk_embedding_vector(reference, field_), coupling.converged


def embed_dataset(mu0: DiscreteMeasure, samples: Sequence[DiscreteMeasure], metric: str = 'hk', kappa: float = 1.0, cfg: Optional[SolverConfig] = None,
                  workers: int = 1, labels=None, names: Optional[Sequence[str]] = None, singular_threshold: Optional[float] = None,
                  progress: bool = False) -> EmbeddingMatrix:
    """
    Embed every sample into the tangent space at mu0.

    With ``workers > 1`` the independent transport problems run in a pool of
    worker processes; row order follows sample order.

    Raises:
        EmbeddingError: If a sample has singular mass relative to mu0
    """
    _check_metric(metric)
    if not samples:
        raise AnalysisError("No samples to embed")
    if not kappa > 0:
        raise AnalysisError(f"kappa must be positive (got {kappa})")
    cfg = cfg or SolverConfig()
    workers = max(1, int(workers))
    task = functools.partial(_embed_one, mu0, metric=metric, kappa=kappa, cfg=cfg, singular_threshold=singular_threshold)
    bar = {'total': len(samples), 'desc': f"Embedding ({metric})", 'unit': "samples", 'disable': not progress}

    if workers == 1:
        results = [task(sample) for sample in tqdm(samples, **bar)]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=min(workers, len(samples))) as executor:
            results = list(tqdm(executor.map(task, samples), **bar))

    rows = np.vstack([row for row, _ in results])
    unconverged = sum(1 for _, converged in results if not converged)
    if unconverged:
        logger.warning(f"{unconverged} of {len(samples)} transport solves did not converge")
    logger.info(f"Embedded {len(samples)} samples into {rows.shape[1]} {metric} coordinates")
    return EmbeddingMatrix(rows, mu0, metric, kappa if metric == 'hk' else 1.0, labels, tuple(names) if names is not None else None, unconverged)


def pca(emb: EmbeddingMatrix) -> PcaResult:
    """
    Principal components of the centred embedding rows.

    Eigenvalues are variances (divided by n). Each mode is signed so that
    its largest-magnitude coordinate is positive.
    """
    n = len(emb)
    if n < 2:
        raise AnalysisError(f"PCA needs at least two samples (got {n})")
    mean = emb.rows.mean(axis=0)
    _, singular_values, modes = np.linalg.svd(emb.rows - mean, full_matrices=False)
    eigenvalues = singular_values ** 2 / n
    total = eigenvalues.sum()
    if total <= 0:
        raise AnalysisError("All samples coincide; no variance to analyse")

    lead = np.argmax(np.abs(modes), axis=1)
    signs = np.sign(modes[np.arange(modes.shape[0]), lead])
    signs[signs == 0] = 1.0
    modes = modes * signs[:, None]
    return PcaResult(modes, eigenvalues, mean, eigenvalues / total, emb.metric, emb.kappa)


def exp_along_mode(mu0: DiscreteMeasure, result: PcaResult, mode_index: int, s: float, metric: str, grid: Optional[GridSpec] = None) -> DiscreteMeasure:
    """
    Exponential map of mean + s * mode at mu0, optionally rasterized.

    Growth rates below -2 are clamped with a warning.
    """
    _check_metric(metric)
    if metric != result.metric:
        raise AnalysisError(f"PCA was computed for {result.metric}, not {metric}")
    if not 0 <= mode_index < result.modes.shape[0]:
        raise AnalysisError(f"Mode {mode_index} does not exist ({result.modes.shape[0]} modes)")

    vector = result.mean + s * result.modes[mode_index]
    if metric == 'w2':
        out = w2_exp(mu0, tangent_from_vector(mu0, vector, 'w2'))
    else:
        kappa = result.kappa
        reference = rescale_domain(mu0, kappa)
        field_ = tangent_from_vector(reference, vector / kappa, 'hk')
        low = field_.alpha0 < -2.0 - ALPHA_SLACK
        if low.any():
            logger.warning(f"Clamping growth rate below -2 on {int(low.sum())} points (s={s:.4g})")
            field_ = type(field_)(field_.points, field_.v0, np.maximum(field_.alpha0, -2.0))
        out = rescale_domain(hk_exp(reference, field_), 1.0 / kappa)

    if grid is not None:
        out = rasterize(out, grid, clip_outside=True)
    return out


def _binary_classes(labels) -> Tuple[NDArray, Tuple]:
    if labels is None:
        raise AnalysisError("Labels are required")
    labels = np.asarray(labels)
    classes = tuple(np.unique(labels).tolist())
    if len(classes) != 2:
        raise AnalysisError(f"Need exactly two classes (got {len(classes)})")
    return labels, classes


def roc_auc(scores, positives) -> float:
    """Rank-based (Mann-Whitney) area under the ROC curve; NaN without both classes."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float('nan')
    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def lda(emb: EmbeddingMatrix, labels=None) -> LdaResult:
    """
    Fisher discriminant between two classes.

    The within-class scatter is regularized by 1e-6 * trace; the solve runs in
    the span of the centred samples so the feature dimension may exceed n.
    Positive projections predict the second class in sorted order.
    """
    labels, classes = _binary_classes(labels if labels is not None else emb.labels)
    X = emb.rows
    first = labels == classes[0]
    second = ~first
    m0 = X[first].mean(axis=0)
    m1 = X[second].mean(axis=0)

    within = np.vstack([X[first] - m0, X[second] - m1])
    trace = float(np.sum(within ** 2))
    reg = 1e-6 * trace if trace > 0 else 1.0
    delta = m1 - m0
    # (reg I + W^T W)^-1 delta through the n x n system
    small = reg * np.eye(within.shape[0]) + within @ within.T
    direction = (delta - within.T @ np.linalg.solve(small, within @ delta)) / reg
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise AnalysisError("Class means coincide; no discriminating direction")
    direction = direction / norm

    offset = float(0.5 * (m0 + m1) @ direction)
    projections = X @ direction - offset
    predictions = np.where(projections > 0, classes[1], classes[0])
    accuracy = float(np.mean(predictions == labels))
    return LdaResult(direction, offset, projections, predictions, classes, accuracy, roc_auc(projections, second))


def lda_samples_near_levels(result: LdaResult, levels: Sequence[float]) -> List[int]:
    """Index of the sample whose projection is closest to each level, in units of the projection std."""
    sigma = float(np.std(result.projections))
    return [int(np.argmin(np.abs(result.projections - level * sigma))) for level in levels]


def _vote(neighbour_labels: NDArray, neighbour_dist: NDArray, classes: Tuple):
    """Majority label; ties go to the smallest distance sum, then label order."""
    best, best_key = None, None
    for label in classes:
        hit = neighbour_labels == label
        key = (-int(hit.sum()), float(neighbour_dist[hit].sum()))
        if hit.any() and (best_key is None or key < best_key):
            best, best_key = label, key
    return best


def knn_classify(emb: EmbeddingMatrix, k: int, protocol: str = 'leave_one_out', labels=None, train_fraction: float = 0.5, seed: int = 0) -> ClassificationMetrics:
    """
    k-nearest-neighbour classification with Euclidean embedding distances.

    TPR, FPR and AUC treat the last class in sorted order as positive and
    are NaN for more than two classes; the AUC score of a sample is its
    fraction of positive neighbours.
    """
    if protocol not in PROTOCOLS:
        raise AnalysisError(f"Unknown protocol {protocol!r}; expected one of {', '.join(PROTOCOLS)}")
    labels = emb.labels if labels is None else np.asarray(labels)
    if labels is None:
        raise AnalysisError("Labels are required for classification")
    if k < 1:
        raise AnalysisError(f"k must be at least 1 (got {k})")
    n = len(emb)
    classes = tuple(np.unique(labels).tolist())

    if protocol == 'leave_one_out':
        if k >= n:
            raise AnalysisError(f"k={k} needs more than {k} samples for leave-one-out (got {n})")
        train = test = np.arange(n)
    else:
        if not 0 < train_fraction < 1:
            raise AnalysisError(f"train_fraction must lie in (0, 1) (got {train_fraction})")
        order = np.random.default_rng(seed).permutation(n)
        n_train = int(round(train_fraction * n))
        if n_train < 1 or n_train >= n:
            raise AnalysisError(f"Cannot split {n} samples with train fraction {train_fraction}")
        if k > n_train:
            raise AnalysisError(f"k={k} exceeds the {n_train} training samples")
        train, test = np.sort(order[:n_train]), np.sort(order[n_train:])

    distances = cdist(emb.rows[test], emb.rows[train])
    if protocol == 'leave_one_out':
        np.fill_diagonal(distances, np.inf)

    positive = classes[-1]
    predictions, scores = [], []
    for row in distances:
        nearest = np.argsort(row, kind='stable')[:k]
        neighbour_labels = labels[train][nearest]
        predictions.append(_vote(neighbour_labels, row[nearest], classes))
        scores.append(float(np.mean(neighbour_labels == positive)))

    truth = labels[test]
    predictions = np.asarray(predictions)
    accuracy = float(np.mean(predictions == truth))
    tpr = fpr = auc = float('nan')
    if len(classes) == 2:
        is_pos = truth == positive
        if is_pos.any():
            tpr = float(np.mean(predictions[is_pos] == positive))
        if (~is_pos).any():
            fpr = float(np.mean(predictions[~is_pos] == positive))
        auc = roc_auc(scores, is_pos)
    return ClassificationMetrics(accuracy, tpr, fpr, auc, int(test.size))


def save_embedding(emb: EmbeddingMatrix, path: str, metadata: Optional[Dict[str, str]] = None) -> str:
    """Write one row per sample (name, e0..eD-1, label) after ``# key=value`` lines."""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    meta = {'metric': emb.metric, 'kappa': _fmt(emb.kappa)}
    meta.update(metadata or {})
    names = emb.names or tuple(f"sample_{i:03d}" for i in range(len(emb)))
    with open(file_path, 'w', newline='', encoding='utf-8') as f:
        for key, value in meta.items():
            f.write(f"# {key}={value}\n")
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['sample'] + [f"e{i}" for i in range(emb.rows.shape[1])] + ['label'])
        for i, row in enumerate(emb.rows):
            label = '' if emb.labels is None else str(emb.labels[i])
            writer.writerow([names[i]] + [_fmt(v) for v in row] + [label])
    return str(file_path)


def read_embedding_csv(path: str) -> Tuple[Dict[str, str], List[str], NDArray[np.float64], Optional[NDArray]]:
    """Parse an embedding file into (metadata, names, rows, labels)."""
    metadata: Dict[str, str] = {}
    lines = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.startswith('#'):
                key, _, value = line[1:].strip().partition('=')
                metadata[key.strip()] = value.strip()
            elif line.strip():
                lines.append(line)
    if not lines:
        raise AnalysisError(f"{path}: embedding file has no header")
    reader = csv.reader(lines)
    header = next(reader)
    if header[:1] != ['sample'] or header[-1:] != ['label']:
        raise AnalysisError(f"{path}: embedding header must start with 'sample' and end with 'label'")

    names, rows, labels = [], [], []
    for number, record in enumerate(reader, start=2):
        if len(record) != len(header):
            raise AnalysisError(f"{path}: row {number} has {len(record)} columns, expected {len(header)}")
        names.append(record[0])
        try:
            rows.append([float(v) for v in record[1:-1]])
        except ValueError:
            raise AnalysisError(f"{path}: row {number} contains non-numeric coordinates")
        labels.append(record[-1])
    if not rows:
        raise AnalysisError(f"{path}: embedding file has no rows")

    parsed_labels = None
    if all(label != '' for label in labels):
        try:
            parsed_labels = np.array([int(label) for label in labels])
        except ValueError:
            parsed_labels = np.array(labels)
    return metadata, names, np.array(rows, dtype=float), parsed_labels


def load_embedding(path: str, reference: DiscreteMeasure) -> EmbeddingMatrix:
    """Load an embedding file; the reference measure is loaded by the caller."""
    metadata, names, rows, labels = read_embedding_csv(path)
    metric = metadata.get('metric', 'hk')
    try:
        kappa = float(metadata.get('kappa', '1'))
    except ValueError:
        raise AnalysisError(f"{path}: invalid kappa {metadata.get('kappa')!r}")
    return EmbeddingMatrix(rows, reference, metric, kappa, labels, tuple(names))


def save_pca(result: PcaResult, eigen_path: str, modes_path: str, metadata: Optional[Dict[str, str]] = None) -> Tuple[str, str]:
    """Eigenvalue table and mode matrix (the mean stored as the first row)."""
    comments = [f"# {key}={value}\n" for key, value in (metadata or {}).items()]
    eigen_file = Path(eigen_path)
    eigen_file.parent.mkdir(parents=True, exist_ok=True)
    with open(eigen_file, 'w', newline='', encoding='utf-8') as f:
        f.writelines(comments)
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['mode', 'eigenvalue', 'explained_variance_ratio'])
        for i, (value, ratio) in enumerate(zip(result.eigenvalues, result.explained_variance_ratio)):
            writer.writerow([i, _fmt(value), _fmt(ratio)])

    modes_file = Path(modes_path)
    with open(modes_file, 'w', newline='', encoding='utf-8') as f:
        f.writelines(comments)
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['mode'] + [f"e{i}" for i in range(result.modes.shape[1])])
        writer.writerow(['mean'] + [_fmt(v) for v in result.mean])
        for i, mode in enumerate(result.modes):
            writer.writerow([i] + [_fmt(v) for v in mode])
    return str(eigen_file), str(modes_file)
