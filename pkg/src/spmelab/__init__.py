"""Desk-scale numerical laboratory for stochastic porous-medium-type SPDEs
on the torus: a floor-regularized semi-implicit solver plus statistical
probes of the entropy-solution properties (L1 contraction, coefficient
stability, entropy-inequality residuals, fractional regularity, moment
bounds)."""

__version__ = "0.1.0"

from .entropy import EntropyFunction, linear_eta, make_log_eta, make_standard_eta
from .grid import GridField, TorusGrid, discrete_laplacian, grad_Psi_norms
from .kernels import MollifierKernel, make_mollifier
from .nonlinearity import (
    EntropyFluxSpec,
    Nonlinearity,
    compute_R_lambda,
    compute_eps_n,
    eval_Psi,
    eval_Psi_f,
    linear_nonlinearity,
    make_power_law,
    make_q_eta,
    regularize_A,
    tabulated_nonlinearity,
    validate_assumption_A,
)
from .noise import (
    DiffusionCoefficient,
    WienerPath,
    mollify_sigma,
    mollify_xi,
    sample_wiener,
    validate_assumption_noise,
)
from .config import ExperimentManifest, RunConfig, load_manifest
from .solver import Trajectory, solve, step
from .verification import (
    EnsembleResult,
    TestVerdict,
    contraction_test,
    entropy_residual,
    frac_regularity_probe,
    initial_attainment_probe,
    moment_report,
    stability_probe,
)
