"""Degree-corrected Cox modeling of temporal interaction networks.

Estimates time-varying sender and receiver degree curves and homophily
coefficients from continuous-time directed events by local kernel smoothing,
with pointwise confidence intervals, multiplier-bootstrap hypothesis tests,
cross-validated bandwidth selection, cumulative-intensity diagnostics, and a
matching synthetic-data simulator.
"""

from .bandwidth import (DEFAULT_H1, DEFAULT_H2, CvReport, DyadPartition,
                        make_partition, prediction_error, select_bandwidth)
from .bootstrap_tests import (TestReport, default_test_grid,
                              test_degree_heterogeneity, test_temporal_eta,
                              test_temporal_gamma)
from .errors import (ConfigError, DccoxError, DegenerateVarianceError,
                     DivergenceError, GridMismatchError, ParseError,
                     RateExplosionError, SingularMatrixError)
from .estimator import (SolveDiagnostics, SolverConfig, fit_curve, residuals,
                        solve_at, update_alpha_beta, update_gamma)
from .gof import ArjasSeries, arjas_data
from .inference import (EtaConfidence, GammaInference, InferenceTables,
                        OmegaHat, StructuredS, compute_S, compute_omega,
                        enrich_fit, eta_confidence, gamma_inference, z_quantile)
from .io import (emit_covariates, emit_events, emit_fit, emit_gof,
                 ingest_covariates, ingest_events)
from .simulator import (BUILTIN_SCENARIOS, Scenario, TruthCurves, mise,
                        restrict_covariates, scenario_block_offset,
                        scenario_diagnostic, scenario_heterogeneity,
                        scenario_sine_linear, scenario_temporal, simulate)
from .smoother import GridTables, exposure, smooth_events
from .types import (CovariateSet, EventStream, FitResult, KernelSpec,
                    ParamSnapshot, TimeGrid)

__version__ = "0.1.0"

__all__ = [
    "ArjasSeries", "BUILTIN_SCENARIOS", "ConfigError", "CovariateSet",
    "CvReport", "DccoxError", "DEFAULT_H1", "DEFAULT_H2",
    "DegenerateVarianceError", "DivergenceError", "DyadPartition",
    "EtaConfidence", "EventStream", "FitResult", "GammaInference",
    "GridMismatchError", "GridTables", "InferenceTables", "KernelSpec",
    "OmegaHat", "ParamSnapshot", "ParseError", "RateExplosionError",
    "Scenario", "SingularMatrixError", "SolveDiagnostics", "SolverConfig",
    "StructuredS", "TestReport", "TimeGrid", "TruthCurves",
    "arjas_data", "compute_S", "compute_omega", "default_test_grid",
    "emit_covariates", "emit_events", "emit_fit", "emit_gof", "enrich_fit",
    "eta_confidence", "exposure", "fit_curve", "gamma_inference",
    "ingest_covariates", "ingest_events", "make_partition", "mise",
    "prediction_error", "residuals", "restrict_covariates",
    "scenario_block_offset", "scenario_diagnostic", "scenario_heterogeneity",
    "scenario_sine_linear", "scenario_temporal", "select_bandwidth",
    "simulate", "smooth_events", "solve_at", "test_degree_heterogeneity",
    "test_temporal_eta", "test_temporal_gamma", "update_alpha_beta",
    "update_gamma", "z_quantile",
]
