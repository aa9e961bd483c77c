"""Spectra and eigenstates of a point scatterer on flat 2D and 3D tori."""
from .errors import (BracketError, CacheFormatError, CoverageError, PointScatterError, PoleError,
                     PrecisionError, UsageError)
from .lattice import (CircleLawReport, NormTable, TorusSpec, build_norm_table, circle_law_report,
                      counting, distinct_counting, export_csv, load_table, save_table)
from .spectrum import (EigenvalueRecord, SecularValue, Spectrum, Strong, Weak, brute_force_roots,
                       compute_c0, eval_secular, solve_strong, solve_weak, verify_truncation)

__version__ = "0.1.0"

__all__ = [
    "BracketError", "CacheFormatError", "CircleLawReport", "CoverageError", "EigenvalueRecord",
    "NormTable", "PointScatterError", "PoleError", "PrecisionError", "SecularValue", "Spectrum",
    "Strong", "TorusSpec", "UsageError", "Weak", "brute_force_roots", "build_norm_table",
    "circle_law_report", "compute_c0", "counting", "distinct_counting", "eval_secular",
    "export_csv", "load_table", "save_table", "solve_strong", "solve_weak", "verify_truncation",
    "__version__",
]
