"""Sequential fair allocation of divisible resources under demand uncertainty."""

from .arrivals import (
    ClampedNormal,
    ClampedPoisson,
    Deterministic,
    Empirical,
    HorizonSpec,
    conf,
    conf_width,
    deviation_proxy,
    mean,
    model_from_spec,
    run_seed,
    sample,
    tail_mean,
)
from .errors import ConvergenceError, DomainError, InfeasibleGuardrailsError, ValidationError
from .guardrails import Guardrails, build_guardrails, compute_c, min_feasible_lt
from .harness import (
    ExperimentConfig,
    PolicyRule,
    builtin_experiment,
    builtin_setting,
    load_config,
    run_experiment,
    scaling_fit,
)
from .market import (
    EGSolution,
    MarketInstance,
    brute_force_eg,
    kkt_residual,
    log_nsw,
    price_floor,
    solve_eg,
)
from .metrics import (
    MetricsReport,
    aggregate,
    counterfactual_envy,
    efficiency_gap,
    evaluate,
    hindsight_envy,
    prop_gap,
)
from .policies import AllocationTrace, Branch, fixed_threshold, guarded_hope, hindsight_optimal

__version__ = "0.1.0"
