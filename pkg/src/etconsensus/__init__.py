"""Event-triggered consensus of single integrators with monotone output nonlinearities."""

from .analysis import (
    ConsensusVerdict,
    LyapunovSeries,
    check_conditions,
    conservation_residual,
    lyapunov_V,
    lyapunov_W,
    summarize,
    threshold_excess,
    verdict,
    weighted_initial_average,
)
from .errors import (
    ConsensusError,
    GraphStructureError,
    InvalidGraphError,
    NumericError,
    ScenarioError,
    UnsupportedDepthError,
    ZenoSuspected,
)
from .graph import (
    Connectivity,
    WeightedDigraph,
    build_laplacian,
    classify_connectivity,
    condense,
    from_edges,
    from_laplacian,
    load_graph,
    spectral_ratio,
    strongly_connected_components,
)
from .nonlinearity import OutputFunction, custom, identity, saturation, validate_assumption
from .scenario_file import ScenarioFile, generate_random, load_bundled, load_scenario, resolve_scenario
from .sim import Scenario, SimulationRecord, control_input, next_event_time, run

__version__ = "0.1.0"
