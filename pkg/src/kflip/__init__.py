"""k-flip Ising game: exact Markov-chain analysis and simulation of escape from a metastable state."""

from .chain import (
    HittingAnalysis,
    HittingCurve,
    StationaryDistribution,
    analyze,
    fundamental_matrix,
    hitting_curve,
    hitting_moments,
    hitting_times_linear_solve,
    mean_hitting_times,
    potential_from_pi,
    r_sigma,
    r_tau,
    second_moment_hitting,
    stationary_distribution,
)
from .errors import *  # noqa: F401,F403
from .escape import (
    EscapeEstimate,
    PhaseDiagram,
    end_slope,
    estimate_k_min,
    exact_rho_min,
    phase_diagram,
    phi_mid,
    rho_min_analysis,
)
from .model import (
    Endpoints,
    Equilibria,
    GameParams,
    NoiseKind,
    NoiseModel,
    Regime,
    critical_beta_j,
    fp_potential,
    h_star,
    metastable_endpoints,
    p_plus,
    p_plus_prime,
    phi_star,
    solve_equilibria,
    state_index,
    trajectory_endpoints,
)
from .montecarlo import RunConfig, SimSummary, run_batch, sample_hitting_time, sample_rng, step
from .transition import (
    StepMoments,
    TransitionMatrix,
    build_transition_matrix,
    dsigma_dk,
    sigma_dphi,
    step_moment_k_derivatives,
    step_moments,
    transition_prob_bruteforce,
    transition_prob_convolution,
)

__version__ = "0.1.0"
