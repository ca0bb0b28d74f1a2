"""Mechanism-design engine and adversarial simulator for capacity-constrained
service markets: polymatroid rank oracles, truthful and non-truthful payment
rules, operator deviations with agent-side detectability analysis, credibility
devices (broadcast transcripts, deposit-backed recomputation, fee separation),
and the measurement layer that prices non-credibility."""

from .errors import (
    CapacityNotBindingWarning,
    ConfigError,
    CredmarketError,
    DomainError,
    FaithfulnessError,
    Level2RegimeError,
    MatroidBoundaryError,
    NoDeviationError,
    NonMonotoneAllocationError,
    NoWindowError,
    StructureError,
    UndefinedRatioError,
    UnsupportedPriorError,
)
from .polymatroid import (
    LaminarOracle,
    Level1Matroid,
    RankOracle,
    SubstituteCloneOracle,
    TableOracle,
    entangled_oracle,
    generate_topology,
    level1_matroid,
    make_oracle,
    nonmodularity_profile,
    pair_gap,
    rank,
    verify_axioms,
)
from .mechanisms import (
    ClinchTranscript,
    MarketOutcome,
    Mechanism,
    UniformPrior,
    archer_tardos_payment,
    clinching_auction,
    edmonds_greedy,
    first_price_outcome,
    myerson_outcome,
    posted_price_outcome,
    rank_auth_tag,
    run_mechanism,
    vcg_outcome,
)
from .adversary import (
    Certificate,
    DeviationResult,
    DeviationStrategy,
    apply_deviation,
    check_safe_deviation,
    construct_perturbation,
)
from .credibility import (
    BroadcastChannel,
    DraState,
    FeeOperator,
    Verdict,
    fee_operator_surplus,
    knife_edge_sweep,
    make_commitment,
    run_dra,
    tamper_forge_rank,
    tamper_ghost_clinch,
    tamper_inflate_clinch,
    verify_transcript,
)
from .metrics import (
    ConcReport,
    ScalingFit,
    bertrand_price,
    cliffs_delta,
    conc,
    gamma_distribution,
    orthogonality_decompose,
    salop_markup,
    scaling_sweep,
)
from .sim import (
    ExperimentSpec,
    RoundProfile,
    RoundResult,
    ScenarioConfig,
    best_ghost,
    certify_ghost,
    experiment_spec,
    generate_round,
    ghost_candidates,
    ghost_settle,
    run_experiment,
    settle_first_price,
    settle_posted,
    settle_threshold,
)

__version__ = "0.1.0"

__all__ = [
    "BroadcastChannel",
    "CapacityNotBindingWarning",
    "Certificate",
    "ClinchTranscript",
    "ConcReport",
    "ConfigError",
    "CredmarketError",
    "DeviationResult",
    "DeviationStrategy",
    "DomainError",
    "DraState",
    "ExperimentSpec",
    "FaithfulnessError",
    "FeeOperator",
    "LaminarOracle",
    "Level1Matroid",
    "Level2RegimeError",
    "MarketOutcome",
    "MatroidBoundaryError",
    "Mechanism",
    "NoDeviationError",
    "NoWindowError",
    "NonMonotoneAllocationError",
    "RankOracle",
    "RoundProfile",
    "RoundResult",
    "ScalingFit",
    "ScenarioConfig",
    "StructureError",
    "SubstituteCloneOracle",
    "TableOracle",
    "UndefinedRatioError",
    "UniformPrior",
    "UnsupportedPriorError",
    "Verdict",
    "apply_deviation",
    "archer_tardos_payment",
    "bertrand_price",
    "best_ghost",
    "certify_ghost",
    "check_safe_deviation",
    "cliffs_delta",
    "clinching_auction",
    "conc",
    "construct_perturbation",
    "edmonds_greedy",
    "entangled_oracle",
    "experiment_spec",
    "fee_operator_surplus",
    "first_price_outcome",
    "gamma_distribution",
    "generate_round",
    "generate_topology",
    "ghost_candidates",
    "ghost_settle",
    "knife_edge_sweep",
    "level1_matroid",
    "make_commitment",
    "make_oracle",
    "myerson_outcome",
    "nonmodularity_profile",
    "orthogonality_decompose",
    "pair_gap",
    "posted_price_outcome",
    "rank",
    "rank_auth_tag",
    "run_dra",
    "run_experiment",
    "run_mechanism",
    "salop_markup",
    "scaling_sweep",
    "settle_first_price",
    "settle_posted",
    "settle_threshold",
    "tamper_forge_rank",
    "tamper_ghost_clinch",
    "tamper_inflate_clinch",
    "vcg_outcome",
    "verify_axioms",
    "verify_transcript",
]
