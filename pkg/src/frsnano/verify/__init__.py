"""Finite-difference gradient checks and independent reference implementations."""

from .finite_diff import DEFAULT_EPS, DEFAULT_TOL, GradCheckReport, finite_diff, relative_error
from .gradcases import REGISTRY, GradCase, check_case, check_instance, register, run_gradcheck_suite
from .suite import OracleReport, run_oracle_suite, run_selftest

__all__ = [
    "DEFAULT_EPS",
    "DEFAULT_TOL",
    "GradCase",
    "GradCheckReport",
    "OracleReport",
    "REGISTRY",
    "check_case",
    "check_instance",
    "finite_diff",
    "register",
    "relative_error",
    "run_gradcheck_suite",
    "run_oracle_suite",
    "run_selftest",
]
