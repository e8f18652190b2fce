"""Restricted-time win statistics for prioritized time-to-event endpoints.

IPCW and conditional-tie-weighted (m-IPCW) estimators of the net benefit,
win ratio and win odds, with sandwich variances, a Monte Carlo harness and a
quadrature truth oracle for the simulation design.
"""

from importlib import resources

from .copula import CopulaSpec, fit_copula
from .estimation import (
    LongRow,
    NuisanceBundle,
    RestrictedRecord,
    WinComponents,
    estimate,
    fit_nuisances,
    restrict,
    summarize,
)
from .simulation import ScenarioConfig, run_scenario
from .survival import fit_censoring_km, fit_cox
from .truth import true_values
from .variance import delta_ci, influence_rows, sandwich

__version__ = "0.1.0"


def example_data_path():
    """Path of the bundled synthetic long-format data set."""
    return resources.files("winstat") / "data" / "windat_synthetic.csv"


__all__ = [
    "CopulaSpec", "LongRow", "NuisanceBundle", "RestrictedRecord", "ScenarioConfig", "WinComponents",
    "delta_ci", "estimate", "example_data_path", "fit_censoring_km", "fit_copula", "fit_cox", "fit_nuisances",
    "influence_rows", "restrict", "run_scenario", "sandwich", "summarize", "true_values",
]
