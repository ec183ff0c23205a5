"""Learning kernels in operators: synthetic data generation, the tamed
least-squares estimator, convergence-rate sweeps, and probabilistic
diagnostics for the supporting concentration bounds."""

__version__ = "0.1.0"

from .spectral import (
    EigenSystem,
    FourierModeBasis,
    GridBasis,
    KernelFunction,
    SobolevClass,
    SpectralDecay,
    eigenvalue_envelope,
    optimal_dimension,
    sample_kernel,
    sobolev_norm_sq,
    tail_energy,
    theoretical_exponent,
)
from .models import (
    ForwardModel,
    InputEnsemble,
    InputFunction,
    OutputFunction,
    apply_forward,
    eigendecompose_normal,
    exploration_density,
    gaussian_preset,
    mercer_kernel,
    rademacher_preset,
    sample_input,
)
from .noise import NoiseModel, kl_shift_bound, kl_shift_exact, sample_noise
from .estimators import (
    Dataset,
    EstimateResult,
    NormalSystem,
    assemble_normal_system,
    decompose_normal_vector,
    empirical_loss,
    estimation_error,
    lse_pinv_solve,
    simulate_dataset,
    tlse_solve,
    tsvd_solve,
)
from .diagnostics import (
    AssouadSet,
    TailBoundReport,
    assouad_set,
    fourth_moment_ratio,
    kl_flip_bound,
    left_tail_bound,
    left_tail_bound_all,
    lower_rate_certificate,
    mc_left_tail,
    trace_tail_check,
)
from .harness import (
    ExperimentConfig,
    RateSweepResult,
    fit_loglog_slope,
    preset_config,
    run_diagnostics_campaign,
    run_rate_sweep,
)

__all__ = [name for name in dir() if not name.startswith("_")]
