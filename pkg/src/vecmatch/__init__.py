"""Generalized propensity score designs for multiple treatments: vector matching,
common referent matching, subclassification and weighting, with balance
diagnostics and a simulation harness."""

from importlib import resources

__version__ = "0.1.0"

from .balance import BalanceReport, assess, balance_report, reference_sd, weighted_means  # noqa: E402
from .data import Dataset, Schema, load_dataset, summarize, write_dataset  # noqa: E402
from .designs import (  # noqa: E402
    MatchedCohort,
    Subclassification,
    WeightVector,
    crm_match,
    ipw_weights,
    kmc_subclassify,
    sbc_match,
    vector_match,
)
from .errors import (  # noqa: E402
    ContractError,
    ConvergenceError,
    EmptySupportError,
    NumericalError,
    ValidationError,
    VecmatchError,
)
from .gps import GpsMatrix, GpsModel, fit_multinomial_logit, predict_gps  # noqa: E402
from .inference import friedman_test, ipw_pate, quade_test, satt_estimates  # noqa: E402
from .support import CommonSupport, rectangular_support, trim_and_refit  # noqa: E402


def example_path():
    """Path of the bundled three-arm example dataset (with outcome)."""
    return resources.files(__package__) / "datasets" / "example.csv"


def load_example() -> Dataset:
    return load_dataset(example_path())


__all__ = [
    "BalanceReport", "CommonSupport", "ContractError", "ConvergenceError", "Dataset", "EmptySupportError",
    "GpsMatrix", "GpsModel", "MatchedCohort", "NumericalError", "Schema", "Subclassification",
    "ValidationError", "VecmatchError", "WeightVector", "assess", "balance_report", "crm_match",
    "example_path", "fit_multinomial_logit", "friedman_test", "ipw_pate", "ipw_weights", "kmc_subclassify",
    "load_dataset", "load_example", "predict_gps", "quade_test", "rectangular_support", "reference_sd",
    "satt_estimates", "sbc_match", "summarize", "trim_and_refit", "vector_match", "weighted_means",
    "write_dataset",
]
