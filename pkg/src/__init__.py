"""
hk-tangent

Hellinger-Kantorovich transport between discrete measures: entropic
distances, geodesics, logarithmic and exponential maps, and linearized
embeddings for PCA, LDA and kNN analysis of image datasets.
"""

__version__ = "1.0.0"

from .analysis import AnalysisError, EmbeddingError, EmbeddingMatrix, embed_dataset, knn_classify, lda, linear_mean, pca
from .config import ConfigurationError, config, setup_logging
from .cost import CostError, hk_cost, hk_dirac_sq, kl_divergence, soft_marginal_objective
from .geodesic import GeodesicError, dirac_geodesic, interpolate_hk, interpolate_w2
from .measure import DiscreteMeasure, GridSpec, MeasureError, gen_ellipses, load_measure, normalize, rasterize, rescale_domain
from .solver import Coupling, SolverConfig, SolverError, brute_force_hk, hk_distance_sq, solve_hk, solve_w2
from .tangent import TangentError, TangentField, barycentric_project, hk_exp, hk_inner, hk_lin_dist, hk_log

__all__ = [
    'DiscreteMeasure',
    'GridSpec',
    'MeasureError',
    'load_measure',
    'normalize',
    'rescale_domain',
    'rasterize',
    'gen_ellipses',
    'CostError',
    'hk_cost',
    'hk_dirac_sq',
    'kl_divergence',
    'soft_marginal_objective',
    'Coupling',
    'SolverConfig',
    'SolverError',
    'solve_hk',
    'solve_w2',
    'brute_force_hk',
    'hk_distance_sq',
    'GeodesicError',
    'dirac_geodesic',
    'interpolate_hk',
    'interpolate_w2',
    'TangentError',
    'TangentField',
    'barycentric_project',
    'hk_log',
    'hk_exp',
    'hk_inner',
    'hk_lin_dist',
    'AnalysisError',
    'EmbeddingError',
    'EmbeddingMatrix',
    'embed_dataset',
    'linear_mean',
    'pca',
    'lda',
    'knn_classify',
    'config',
    'setup_logging',
    'ConfigurationError',
]
