"""Tools for conservation-dissipation balance laws: structure checks,
Maxwell-iteration diffusion tensors and 1D relaxation solvers."""
from .core import (CdfError, CdfModel, ConfigurationError, EvaluationError, ModelDims,
                   NonConvergenceError, QuasilinearSystem, SingularMatrixError, SolverError,
                   fd_gradient, fd_hessian, fd_jacobian, min_eig_sym, newton_solve)
from .equilibrium import (ConjugatePair, EquilibriumMap, equation_of_state, equilibrium_flux,
                          from_conjugate, solve_equilibrium, to_conjugate)
from .maxwell import (DiffusionTensors, StrongDissipativenessError, check_gradient_identity,
                      check_onsager_symmetry, check_strong_dissipativeness, derive_B,
                      derive_B_tilde, eta_hat_uu, strong_dissipativeness_constant)
from .models import MODELS, build_model, initial_conserved
from .solver1d import (Diagnostics, Field1D, Grid1D, SolverConfig, convergence_study,
                       run_equilibrium, run_parabolic, run_relaxation, step_relaxation)
from .verify import StateSampler, VerificationReport, verify_model

__version__ = "0.1.0"
