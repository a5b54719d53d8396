"""aphomog: a numerical laboratory for correctors in almost periodic
elliptic homogenization.

Quasiperiodic coefficient fields are kept in closed form (mode amplitudes
against a winding matrix), the iterated-difference calculus acts on those
amplitudes exactly, and the regularized corrector equation is solved on
periodic truncations with spectrally preconditioned Krylov iterations.
"""

from .field import (CoefficientField, DiophantineReport, EllipticityError,
                    FrequencyField, ResonantWindingError, RhoEstimate,
                    TrigPolynomial, WindingMatrix, chi_m, derivative_norm_bound,
                    diophantine_constant, eval_field, field_from_dict,
                    lifted_eval, load_field_spec, sigma)
from .sampling import SupSampler
from .diffcalc import (TranslationTuple, PartitionIndex, difference, f_k, g_k,
                       iterated_difference, l1_unit_ball_sup, omega, omega_k,
                       partition_families, partitions, rho_k, rho_star,
                       set_partitions, translate)
from .heat import (ErgodicFit, HeatQuadrature, ergodic_bound_check, grad_heat_l1,
                   grad_sup, heat_evolve, heat_kernel, hermite,
                   multiscale_poincare_rhs, osc)
from .corrector import (CorrectorResult, GridField, PeriodicGrid,
                        SolverNonConvergence, corrector_limit, corrector_rho1,
                        difference_corrector_check, lipschitz_report, psi,
                        solve_corrector)
from .homog import (EffectiveMatrix, dirichlet_rate, effective_matrix,
                    solve_dirichlet, two_scale_error)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
