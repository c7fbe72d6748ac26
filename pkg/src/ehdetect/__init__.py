"""Optimal transmit-power maps for energy-harvesting distributed detection.

The package splits along the pipeline: config carries the scenario types and
file format, detection the divergence surrogate, battery the harvest chain,
optimizer the constrained power allocation, simulator the Monte Carlo
validation, and cli the command-line front end.
"""

from .battery import (
    ArrivalUnitPmf,
    ChainSpec,
    ConvergenceError,
    GainLevelProbs,
    arrival_unit_pmf,
    battery_transition,
    gain_level_probs,
    quantize_gain,
    stationary_oracle,
    steady_state_psi,
    transmit_probability,
    transition_matrix,
)
from .config import (
    BatteryDistribution,
    LocalObservationModel,
    MonteCarloReport,
    NetworkParams,
    PowerMap,
    Scenario,
    ScenarioError,
    SensorParams,
    convex_region_bounds,
    dumps_scenario,
    emit_scenario,
    load_scenario,
    loads_scenario,
    validate_convex_region,
)
from .detection import (
    GaussianPair,
    RocCoefficients,
    gaussian_j_divergence,
    local_lrt_probabilities,
    mixture_j_quadrature,
    moment_match,
    q_function,
    roc_coefficients,
    sensor_j_divergence,
)
from .optimizer import (
    ExhaustiveResult,
    KktReport,
    OptimizationOutcome,
    OptimizerSettings,
    clamp_power,
    evaluate_unit_map,
    exhaustive_best_map,
    lambda_search,
    marginal_divergence_gain,
    optimize_power_map,
    outage_cap,
    stationarity_root,
    units_from_power,
)
from .simulator import (
    EpisodeState,
    SimBatch,
    SlotRecord,
    Streams,
    calibrate_threshold,
    fusion_llr,
    initial_state,
    make_streams,
    run_monte_carlo,
    simulate_slots,
    step_episode,
)

__version__ = "0.1.0"
