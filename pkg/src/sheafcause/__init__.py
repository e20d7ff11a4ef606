"""Causal emergence and resilience analysis for finite cellular sheaves on graphs."""

from .causal import (
    EIConfig,
    EIResult,
    InterventionSpec,
    JointDistribution,
    PairwiseEI,
    effective_information,
    enumerate_interventions,
    intervene_and_evolve,
    mutual_information,
    pairwise_ei_matrix,
)
from .domains import DomainModel, DomainTemplate, build_microservice, build_neural, build_powergrid
from .dynamics import (
    FailureEvent,
    NodeKernel,
    ScenarioConfig,
    StabilizeResult,
    Trajectory,
    UpdateRule,
    run_scenario,
    stabilize,
    step,
)
from .emergence import (
    EmergenceReport,
    MacroGrouping,
    QuotientModel,
    SearchConfig,
    SearchResult,
    build_quotient,
    causal_resilience_index,
    collapse_subgraph,
    search_macro_nodes,
)
from .errors import (
    CapExceededError,
    InvariantBreachError,
    ParseError,
    SheafCauseError,
    TotalityError,
    ValidationError,
)
from .model import (
    AttributedGraph,
    Edge,
    RestrictionMap,
    Section,
    Sheaf,
    StateSpace,
    consistency_residual,
    enumerate_global_sections,
    is_global_section,
    validate_sheaf,
)

__version__ = "0.1.0"
