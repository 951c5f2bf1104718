"""Trace-driven simulator for DRAM/PCM tiered memory with segmented bitlines."""

__version__ = "0.1.0"

from .geometry import (DEFAULT_TABLES, DRAM_DEFAULT, PCM_DEFAULT, DeviceTables, MemoryGeometry, Op,
                       PhysicalLocation, Segment, Unit, decode, encode, lookup_bias, lookup_timing)
from .predictor import BloomFilter, FTIPredictor, expected_fp_rate
from .policy import PageManager
from .controller import MemoryController
from .report import SimReport, compare
from .simulator import TieredMemorySimulator, simulate
from .trace import WorkloadParams, Trace, generate_phase_shift, generate_skewed, read_trace, write_trace

__all__ = [
    "DEFAULT_TABLES", "DRAM_DEFAULT", "PCM_DEFAULT", "DeviceTables", "MemoryGeometry", "Op",
    "PhysicalLocation", "Segment", "Unit", "decode", "encode", "lookup_bias", "lookup_timing",
    "BloomFilter", "FTIPredictor", "expected_fp_rate", "PageManager", "MemoryController",
    "SimReport", "compare", "TieredMemorySimulator", "simulate", "WorkloadParams", "Trace",
    "generate_phase_shift", "generate_skewed", "read_trace", "write_trace",
]
