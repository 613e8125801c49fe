"""Simulated database with coordinator-free promises and lazy serialization."""
from .cluster import Cluster, ClusterConfig
from .model import TransactionId
from .txn import TxnState
from .verify import History, verify_history
from .workload import RunMetrics, WorkloadConfig, run_bench

__version__ = "0.1.0"

__all__ = ["Cluster", "ClusterConfig", "History", "RunMetrics", "TransactionId", "TxnState",
           "WorkloadConfig", "run_bench", "verify_history", "__version__"]
