"""Solver and certification toolkit for discounted stochastic control.

Simulates controlled diffusions on a truncated horizon, recovers the
costate pair of the adjoint backward equation by least-squares Monte Carlo,
and audits the candidate policy against the sufficient maximum-principle
conditions: pointwise Hamiltonian maximality, concavity, transversality,
and direct cost dominance over competitor policies.
"""

from .problems import (
    AssumptionConstants,
    CoefficientField,
    ConcavitySpec,
    ControlDomain,
    DiscountedProblem,
    HamiltonianMaxCertificate,
    MultiplicativeStructure,
    SampleSpec,
    StateRegion,
    beta_threshold,
    concavity_probe,
    finite_diff_grad_x,
    grad_x_hamiltonian,
    hamiltonian,
    hamiltonian_plain,
    maximize_hamiltonian_in_u,
    validate_assumptions,
)
from .forward import (
    AdjointFeedbackControl,
    BlendedControl,
    ConstantControl,
    ControlLaw,
    FeedbackControl,
    NoiseBatch,
    OpenLoopControl,
    PathEnsemble,
    RegionConstants,
    SimulationError,
    TimeGrid,
    apriori_gap_check,
    comparison_check,
    lyapunov_generator_check,
    positivity_check,
    positivity_scan,
    simulate_forward,
    weighted_l2_norm,
)
from .bsde import (
    BsdeSolution,
    RegressionBasis,
    RegressionError,
    bsde_weighted_norm,
    cylinder_consistency_check,
    exp_transform,
    horizon_truncation_sweep,
    martingale_residual_report,
    solve_bsde_lsmc,
    solve_truncated_driver,
    terminal_stability_gap,
)
from .verify import (
    check_identities,
    check_pointwise_max,
    check_tvc,
    compare_costs,
    cost_functional_mc,
    path_costs,
)
from .experiments import (
    ConsumptionParams,
    ExperimentResult,
    LogisticParams,
    PicardError,
    PicardResult,
    ProductionPlanningParams,
    get_experiment,
    list_experiments,
    logistic_picard_solve,
    register_experiment,
    riccati_oracle,
    run_experiment,
)
from .reports import CostEstimate, VerificationReport

__version__ = "0.1.0"

__all__ = [
    "AdjointFeedbackControl",
    "AssumptionConstants",
    "BlendedControl",
    "BsdeSolution",
    "CoefficientField",
    "ConcavitySpec",
    "ConstantControl",
    "ConsumptionParams",
    "ControlDomain",
    "ControlLaw",
    "CostEstimate",
    "DiscountedProblem",
    "ExperimentResult",
    "FeedbackControl",
    "HamiltonianMaxCertificate",
    "LogisticParams",
    "MultiplicativeStructure",
    "NoiseBatch",
    "OpenLoopControl",
    "PathEnsemble",
    "PicardError",
    "PicardResult",
    "ProductionPlanningParams",
    "RegionConstants",
    "RegressionBasis",
    "RegressionError",
    "SampleSpec",
    "SimulationError",
    "StateRegion",
    "TimeGrid",
    "VerificationReport",
    "apriori_gap_check",
    "beta_threshold",
    "bsde_weighted_norm",
    "check_identities",
    "check_pointwise_max",
    "check_tvc",
    "compare_costs",
    "comparison_check",
    "concavity_probe",
    "cost_functional_mc",
    "cylinder_consistency_check",
    "exp_transform",
    "finite_diff_grad_x",
    "get_experiment",
    "grad_x_hamiltonian",
    "hamiltonian",
    "hamiltonian_plain",
    "horizon_truncation_sweep",
    "list_experiments",
    "logistic_picard_solve",
    "lyapunov_generator_check",
    "martingale_residual_report",
    "maximize_hamiltonian_in_u",
    "path_costs",
    "positivity_check",
    "positivity_scan",
    "register_experiment",
    "riccati_oracle",
    "run_experiment",
    "simulate_forward",
    "solve_bsde_lsmc",
    "solve_truncated_driver",
    "terminal_stability_gap",
    "validate_assumptions",
    "weighted_l2_norm",
]
