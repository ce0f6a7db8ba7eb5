"""Round-driven simulator for adaptive downstream prefetching in
communication-efficient federated learning."""

from .compress import CompressorConfig, accumulate, compress, decompress, wire_size
from .core import MatrixShape, RngStream, axpy, fork_stream, weighted_sum
from .engine import ClientProfile, Metrics, Simulation, TrainParams
from .runner import ExperimentConfig, compare_naive, run_experiment, sweep_experiment
from .scheduler import DurationEstimator, est_fetch_time, schedule_prefetch
from .store import ServerStore, SizeProfiler

__version__ = "0.1.0"
