"""Multi-period AC optimal power flow on top of the pattern model."""

from .matpower import MatpowerError, NetworkData, UnsupportedFeatureError, bundled_cases, load_case, parse_matpower
from .opf import (
    DispatchSolution,
    MultiPeriodCase,
    build_multiperiod_opf,
    extract_dispatch,
    flatten_dispatch,
)
from .profile import LoadProfile, flat_profile, generate_load_profile
from .validate import FAMILIES, ViolationReport, constraint_values, validate_solution

__all__ = [
    "MatpowerError", "NetworkData", "UnsupportedFeatureError", "bundled_cases", "load_case",
    "parse_matpower", "DispatchSolution", "MultiPeriodCase", "build_multiperiod_opf", "extract_dispatch",
    "flatten_dispatch", "LoadProfile", "flat_profile", "generate_load_profile", "FAMILIES",
    "ViolationReport", "constraint_values", "validate_solution",
]
