"""Trace-driven simulator of hardware-assisted file auditing on DAX NVM."""

from .address import MonitorFlag, OpKind, encode_metabits, extract_metabits, trim_address
from .metrics import CostParams, RunReport, compare, run_experiment, simulated_time
from .schemes import Scheme, SchemeConfig, StorageConfig, StorageKind

__all__ = [
    "MonitorFlag", "OpKind", "encode_metabits", "extract_metabits", "trim_address",
    "CostParams", "RunReport", "compare", "run_experiment", "simulated_time",
    "Scheme", "SchemeConfig", "StorageConfig", "StorageKind",
]
__version__ = "0.1.0"
