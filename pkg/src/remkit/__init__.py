"""remkit: relational event models with case-control sampling and smooth effects."""

__version__ = "0.1.0"

from .errors import InputError, RemkitError
from .events import (EventSequence, History, RelationalEvent, RiskPolicy, RiskSetTimeline,
                     build_risk_set, parse_event_stream)
from .stats import ExogenousTables, StatisticSpec, compute_columns
from .sampling import build_case_control, draw_shifts, sample_controls
from .formula import parse_formula
from .design import build_model_matrix
from .fitting import FitResult, OptimizerConfig, fit, term_grid
from .diagnostics import aic, gof_test_linear, gof_test_omitted, gof_test_smooth, kolmogorov_sf
from .simulate import Effect, GeneratorSpec, generate
from .pipeline import RunConfig, fit_sequence
from .kernels import backend, use_backend

__all__ = [
    "EventSequence", "History", "RelationalEvent", "RiskPolicy", "RiskSetTimeline",
    "build_risk_set", "parse_event_stream", "ExogenousTables", "StatisticSpec",
    "compute_columns", "build_case_control", "draw_shifts", "sample_controls",
    "parse_formula", "build_model_matrix", "FitResult", "OptimizerConfig", "fit",
    "term_grid", "aic", "gof_test_linear", "gof_test_omitted", "gof_test_smooth",
    "kolmogorov_sf", "Effect", "GeneratorSpec", "generate", "RunConfig", "fit_sequence",
    "backend", "use_backend", "InputError", "RemkitError",
]
