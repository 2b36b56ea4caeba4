"""Checkpointing protocols for proof-of-work chains, with a round-based simulator."""

from .chain import Block, BlockTree, Certificate, Transaction, canonical_block_order, insert_block, subtree_leaves
from .errors import AdvocateError, SafetyViolation
from .forkchoice import CheckpointView, is_block_acceptable, next_block_template, select_main_chain
from .ledger import AggregateLedger, build_block_order, sanitize, stable_prefix
from .metrics import MetricsReport, compute_report
from .service import ServiceState, bootstrap_certificate, on_new_block
from .sim import EventLog, SimConfig, run_simulation, simulate

__version__ = "0.1.0"
