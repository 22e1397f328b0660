"""Equilibrium solvers, audits and Monte Carlo simulation for spectrum oligopolies on conflict graphs."""

__version__ = "0.1.0"

from .errors import CapExceededError, UndefinedStateError, ValidationError
from .graphs import (
    ConflictGraph,
    Partition,
    build_graph,
    check_mean_valid,
    components,
    independent_sets,
    restrict,
)
from .market import (
    DemandModel,
    MarketParams,
    PenaltyFamily,
    PricingSolution,
    expected_payoff_at,
    family_from_name,
    penalty_cdf,
    sample_penalty,
    solve_single_location,
    win_prob,
    win_prob_inverse,
)
from .meanvalid import SameStateModel, best_response_audit, solve_mean_valid
from .spsym import SPsym, LinearFamily, node_offer_profile, spsym_ne_audit
from .states import IID, MarkovRandomField, SameEverywhere, SampledIID

__all__ = [
    "CapExceededError",
    "ConflictGraph",
    "DemandModel",
    "IID",
    "LinearFamily",
    "MarketParams",
    "MarkovRandomField",
    "Partition",
    "PenaltyFamily",
    "PricingSolution",
    "SPsym",
    "SameEverywhere",
    "SameStateModel",
    "SampledIID",
    "UndefinedStateError",
    "ValidationError",
    "best_response_audit",
    "build_graph",
    "check_mean_valid",
    "components",
    "expected_payoff_at",
    "family_from_name",
    "independent_sets",
    "node_offer_profile",
    "penalty_cdf",
    "restrict",
    "sample_penalty",
    "solve_mean_valid",
    "solve_single_location",
    "spsym_ne_audit",
    "win_prob",
    "win_prob_inverse",
]
