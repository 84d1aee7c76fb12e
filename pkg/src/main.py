#!/usr/bin/env python3
"""
hk-tangent - Main CLI Application

Computes Hellinger-Kantorovich distances, geodesics and linearized embeddings
of image-like measures, and runs PCA / LDA / kNN experiments on them:
1. Distances and geodesics between two measure files
2. Generation of the synthetic two-ellipse dataset
3. Dataset embedding at a reference measure, PCA mode sweeps, classification
4. Length-scale (kappa) sweeps of classification quality

Usage:
    python src/main.py --distance a.csv b.csv --kappa 5
    python src/main.py --gen-ellipses --out results/ellipses
    python src/main.py --embed results/ellipses/manifest.csv --kappa 5 --out results/hk
    python src/main.py --pca results/hk/embedding.csv --out results/hk --pgm
    python src/main.py --classify results/hk/embedding.csv --algo knn --k 1
    python src/main.py --geodesic a.csv b.csv --frames 5 --out results/geodesic
    python src/main.py --kappa-sweep results/ellipses/manifest.csv --kappas 0.5,1,5,20

Exit codes: 0 ok, 1 usage or invalid input, 2 solver warning, 3 I/O, 130 interrupted.
"""

import argparse
import logging
import math
import os
import sys
from typing import Any, Dict, List, Optional

import colorama
from colorama import Fore, Style

# Support both package import (src.main) and script execution (python src/main.py)

try:
    from .analysis import AnalysisError
    from .config import ConfigurationError, config, setup_logging
    from .cost import CostError
    from .experiment import ExperimentConfig, ExperimentError, ExperimentRunner
    from .geodesic import GeodesicError
    from .measure import EmptyMeasureError, GridSpec, MeasureError, MeasureFormatError
    from .solver import SolverConfig, SolverError
    from .tangent import TangentError
except ImportError:  # pragma: no cover - fallback for direct script execution
    sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from src.analysis import AnalysisError
    from src.config import ConfigurationError, config, setup_logging
    from src.cost import CostError
    from src.experiment import ExperimentConfig, ExperimentError, ExperimentRunner
    from src.geodesic import GeodesicError
    from src.measure import EmptyMeasureError, GridSpec, MeasureError, MeasureFormatError
    from src.solver import SolverConfig, SolverError
    from src.tangent import TangentError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER_WARNING = 2
EXIT_IO = 3
EXIT_INTERRUPTED = 130

# Initialize colorama for cross-platform colored output
colorama.init()


class UsageArgumentParser(argparse.ArgumentParser):
    """Argument parser that exits with the usage code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print_error(message)
        sys.exit(EXIT_USAGE)


def print_colored(message: str, color: str = Fore.WHITE, style: str = Style.NORMAL):
    """Print colored message."""
    print(f"{style}{color}{message}{Style.RESET_ALL}")


def print_error(message: str):
    """Print error message in red."""
    print_colored(f"ERROR: {message}", Fore.RED, Style.BRIGHT)


def print_warning(message: str):
    """Print warning message in yellow."""
    print_colored(f"WARNING: {message}", Fore.YELLOW, Style.BRIGHT)


def print_success(message: str):
    """Print success message in green."""
    print_colored(f"SUCCESS: {message}", Fore.GREEN, Style.BRIGHT)


def print_info(message: str):
    """Print info message in blue."""
    print_colored(f"INFO: {message}", Fore.BLUE)


def display_summary(title: str, values: Dict[str, Any]):
    """Display a result table."""
    print(f"\n{Fore.MAGENTA}{'=' * 60}")
    print(title)
    print(f"{'=' * 60}{Style.RESET_ALL}")
    for key, value in values.items():
        if isinstance(value, float):
            value = f"{value:.10g}"
        print(f"{key + ':':<22} {value}")
    print()


def parse_kappas(text: str) -> List[float]:
    """Parse a comma-separated list of positive kappa values."""
    try:
        values = [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"kappas must be comma-separated numbers (got {text!r})")
    if not values or any(not (v > 0 and math.isfinite(v)) for v in values):
        raise argparse.ArgumentTypeError("kappas must be positive")
    return values


def parse_grid(text: str) -> GridSpec:
    try:
        return GridSpec.parse(text)
    except MeasureError as e:
        raise argparse.ArgumentTypeError(str(e))


def setup_argument_parser() -> argparse.ArgumentParser:
    """Set up command-line argument parser."""
    parser = UsageArgumentParser(
        description="hk-tangent - Hellinger-Kantorovich distances, geodesics and linearized embeddings",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s --distance a.csv b.csv --kappa 5            HK distance at length scale 5
  %(prog)s --distance a.csv b.csv --metric w2 --normalize
  %(prog)s --gen-ellipses --out results/ellipses       64 ellipse images + manifest
  %(prog)s --embed manifest.csv --kappa 5 --workers 4  Linearized HK embedding
  %(prog)s --pca embedding.csv --pgm                   PCA + mode sweep images
  %(prog)s --classify embedding.csv --algo lda         LDA classification metrics
  %(prog)s --geodesic a.csv b.csv --frames 5           Geodesic frames
  %(prog)s --kappa-sweep manifest.csv --kappas 1,5,20  Classification vs kappa
        """
    )

    # Operation modes
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument('--distance', nargs=2, metavar=('A', 'B'), help='Distance between two measure files')
    group.add_argument('--gen-ellipses', action='store_true', help='Generate the two-ellipse dataset and its manifest')
    group.add_argument('--embed', metavar='MANIFEST', help='Embed every measure of a manifest at the reference measure')
    group.add_argument('--pca', metavar='EMBEDDING', help='PCA of an embedding with exponential-map mode sweeps')
    group.add_argument('--classify', metavar='EMBEDDING', help='Classify a labelled embedding')
    group.add_argument('--geodesic', nargs=2, metavar=('A', 'B'), help='Geodesic frames between two measure files')
    group.add_argument('--kappa-sweep', metavar='MANIFEST', help='Classification quality across length scales')

    # Metric options
    parser.add_argument('--metric', choices=['hk', 'w2'], default='hk', help='Transport metric (default: hk)')
    parser.add_argument('--kappa', type=float, default=1.0, help='HK length scale; maximal transport range is kappa*pi/2 (default: 1)')
    parser.add_argument('--reference', choices=['linear_mean', 'uniform', 'hellinger_mean', 'file'], default='linear_mean',
                        help='Reference measure for embeddings (default: linear_mean)')
    parser.add_argument('--reference-file', metavar='FILE', help='Reference measure file for --reference file')
    parser.add_argument('--grid', type=parse_grid, metavar='ROWSxCOLS', help='Pixel grid for rasterized output (default: from the input files)')
    parser.add_argument('--normalize', action='store_true', help='Normalize input measures to unit mass')
    parser.add_argument('--singular-threshold', type=float, metavar='THETA',
                        help=f'Coverage below which target mass counts as singular (default: {config.singular_threshold})')

    # Solver options
    parser.add_argument('--epsilon-final', type=float, metavar='EPS', help=f'Final entropic regularization in squared coordinate units (default: {config.epsilon_final})')
    parser.add_argument('--solver-config', metavar='FILE', help='Solver settings file with key=value lines')
    parser.add_argument('--workers', type=int, metavar='N', help=f'Worker processes for dataset solves (default: {config.workers})')
    parser.add_argument('--seed', type=int, default=0, help='Seed for train/test splits (default: 0)')

    # Command options
    parser.add_argument('--out', metavar='DIR', help=f'Output directory (default: {config.output_dir})')
    parser.add_argument('--frames', type=int, default=5, help='Number of geodesic frames (default: 5)')
    parser.add_argument('--algo', choices=['knn', 'lda'], default='knn', help='Classifier (default: knn)')
    parser.add_argument('--k', type=int, default=1, help='Neighbours for knn (default: 1)')
    parser.add_argument('--protocol', choices=['leave_one_out', 'train_test'], default='leave_one_out', help='knn evaluation protocol')
    parser.add_argument('--kappas', type=parse_kappas, default=[0.5, 1.0, 2.0, 5.0, 10.0, 20.0], help='Comma-separated kappa values for --kappa-sweep')
    parser.add_argument('--resolution', type=int, default=64, help='Ellipse image resolution (default: 64)')
    parser.add_argument('--pgm', action='store_true', help='Also write PGM renders of image outputs')

    # Logging options
    parser.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')
    parser.add_argument('--quiet', '-q', action='store_true', help='Suppress non-error output')

    return parser


def build_experiment_config(args) -> ExperimentConfig:
    """Combine flags, solver file and environment defaults; raises on invalid values."""
    solver = SolverConfig.from_file(args.solver_config) if args.solver_config else SolverConfig()
    if args.epsilon_final is not None:
        start = solver.epsilon_start
        if start is not None and start < args.epsilon_final:
            start = args.epsilon_final
        solver = solver.replace(epsilon_final=args.epsilon_final, epsilon_start=start)
    return ExperimentConfig(
        metric=args.metric,
        kappa=args.kappa,
        reference=args.reference,
        grid=args.grid,
        solver=solver,
        seed=args.seed,
        workers=args.workers if args.workers is not None else config.workers,
        reference_file=args.reference_file,
        singular_threshold=args.singular_threshold if args.singular_threshold is not None else config.singular_threshold,
        normalize=args.normalize,
    )


def run_command(runner: ExperimentRunner, args) -> int:
    """Dispatch the selected operation; returns the exit code."""
    if args.distance:
        result = runner.distance(*args.distance)
        display_summary(f"{result['metric'].upper()} DISTANCE", result)
        return EXIT_OK if result['converged'] else _solver_warning()

    if args.gen_ellipses:
        result = runner.generate_ellipses(args.resolution)
        print_success(f"Wrote {len(result['files'])} images and {result['manifest']}")
        return EXIT_OK

    if args.embed:
        result = runner.embed(args.embed)
        display_summary("EMBEDDING", result)
        return EXIT_OK if not result['unconverged'] else _solver_warning()

    if args.pca:
        result = runner.pca(args.pca, pgm=args.pgm)
        ratios = result['explained_variance_ratio']
        display_summary("PCA", {f"mode {i} variance": ratio for i, ratio in enumerate(ratios[:5])})
        print_success(f"Eigenvalues in {result['eigenvalues']}, sweeps in {result['sweeps']}")
        return EXIT_OK

    if args.classify:
        result = runner.classify(args.classify, args.algo, args.k, args.protocol)
        display_summary(f"{args.algo.upper()} CLASSIFICATION", result)
        return EXIT_OK

    if args.geodesic:
        result = runner.geodesic(*args.geodesic, frames=args.frames, pgm=args.pgm)
        print_success(f"Wrote {len(result['files'])} frames")
        return EXIT_OK if result['converged'] else _solver_warning()

    if args.kappa_sweep:
        result = runner.kappa_sweep(args.kappa_sweep, args.kappas, args.algo, args.k, args.protocol)
        print_success(f"Kappa sweep table written to {result['path']}")
        return EXIT_OK if not result['unconverged'] else _solver_warning()

    return EXIT_USAGE


def _solver_warning() -> int:
    print_warning("The transport solver did not converge within its iteration budget; results are approximate")
    return EXIT_SOLVER_WARNING


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point."""
    parser = setup_argument_parser()
    args = parser.parse_args(argv)

    # Set up logging
    try:
        logger = setup_logging()

        # Adjust logging level based on arguments
        if args.verbose:
            level = logging.DEBUG
        elif args.quiet:
            level = logging.ERROR
        else:
            level = None
        if level is not None:
            logger.setLevel(level)
            for handler in logger.handlers:
                handler.setLevel(level)

    except Exception as e:
        print_error(f"Failed to set up logging: {e}")
        return EXIT_USAGE

    # Validate configuration before any heavy computation
    try:
        runner = ExperimentRunner(build_experiment_config(args), args.out)
    except FileNotFoundError as e:
        print_error(str(e))
        return EXIT_IO
    except (ConfigurationError, ExperimentError, SolverError, MeasureError) as e:
        print_error(f"Configuration error: {e}")
        return EXIT_USAGE

    # Execute requested operation
    try:
        return run_command(runner, args)
    except KeyboardInterrupt:
        print_warning("Operation cancelled by user")
        return EXIT_INTERRUPTED
    except (FileNotFoundError, PermissionError, IsADirectoryError, MeasureFormatError, EmptyMeasureError) as e:
        print_error(str(e))
        return EXIT_IO
    except OSError as e:
        print_error(f"I/O error: {e}")
        return EXIT_IO
    except (ExperimentError, AnalysisError, SolverError, TangentError, GeodesicError, CostError, MeasureError) as e:
        print_error(str(e))
        return EXIT_USAGE
    except Exception as e:
        print_error(f"Unexpected error: {e}")
        return EXIT_USAGE


if __name__ == '__main__':
    exit_code = main()
    sys.exit(exit_code)
