"""CLuP iterative ML detection and its random duality characterization."""

from .engine import ClupRun, IterationRecord, ml_exhaustive, run_clup, stats_from_vector
from .estimator import ClupDetector
from .exceptions import *  # noqa: F401,F403
from .harness import AggregateRow, ExperimentSpec, compare_table, run_experiment
from .inner import InnerProblem, InnerSolution, kkt_certificate, min_residual, solve_inner
from .model import (AgreementFraction, ClupConfig, FixedVector, RandomSign, SystemInstance, generate_instance,
                    make_initial, sigma_from_snr_db)
from .random_dual import OverlapMatrices, RandomDualEstimate, measure_overlaps, run_random_dual
from .rdt_first import FirstIterParams, TheoryFirst, solve_first
from .rdt_second import TheorySecond, solve_second
from .sph import f_sph2, f_sph3_lower, f_sph_lower

__version__ = "0.1.0"
