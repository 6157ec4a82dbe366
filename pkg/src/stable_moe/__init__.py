"""Queue-stable token routing for distributed expert models on
heterogeneous edge servers: discrete-time simulator, exact per-slot
optimizer, and reference strategies."""

__version__ = "0.1.0"

from .model import (
    DEFAULT_SEED,
    FeasibilityError,
    ParameterError,
    ServerState,
    SlotDecision,
    SlotOutcome,
    SystemParams,
    TokenBatch,
    Trace,
    default_params,
    heterogeneous_energy_profile,
    initial_state,
    load_params,
    save_params,
    validate_params,
)
from .dynamics import (
    capacity,
    completed_tokens,
    compute_energy,
    min_frequency_for,
    update_energy_queue,
    update_token_queue,
)
from .gating import GatingConfig, GatingModel, gate_scores, load_score_table, sample_batch_size
from .lyapunov import (
    LyapunovReport,
    bound_B,
    drift_plus_penalty_report,
    lyapunov_value,
    per_slot_objective,
)
from .solver import (
    AssignmentResult,
    ServerProfile,
    baseline_decision,
    baseline_frequency,
    baseline_route,
    branch_and_bound_solve,
    brute_force_oracle,
    build_profile,
    energy_cap_tokens,
    solve_per_slot,
)
from .sim import RunResult, RunSummary, compare, run, sweep_v, throughput_ratios

__all__ = [name for name in dir() if not name.startswith("_")]
