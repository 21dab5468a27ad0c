"""Numerical lab for parabolic equations with measure data.

``u_t - div A(x, grad u) + G(u) = mu`` on ``Omega x (0, T)`` with zero
Dirichlet data, where ``mu`` may carry Dirac masses.
"""
__version__ = "0.1.0"

from .errors import (BudgetInfeasible, InvalidParameter, PlmError, StepFailure,  # noqa: F401
                     SupportViolation, UnsupportedRegime)
from .exponents import Exponents, compute_exponents, subcritical_integral, tail_bound  # noqa: F401
from .grid import Grid, RadialGrid  # noqa: F401
from .measures import (Atom, DiscreteMeasure, approximation_schedule, classify_diffuse,  # noqa: F401
                       decompose, mollify_sequence, tensor_product)
from .operators import AbsorptionSpec, OperatorSpec  # noqa: F401
from .potential import (WolffConfig, elliptic_capacity, maximal_fractional,  # noqa: F401
                        wolff_potential)
from .schemes import (IterationTrace, Thresholds, absorption_solve, compute_thresholds,  # noqa: F401
                      exponential_iteration, monotone_source_iteration, picard_subcritical,
                      potential_recursion)
from .solver import Field, SpaceTimeField, solve_elliptic, solve_parabolic  # noqa: F401
from .truncation import (EstimateReport, TruncationFamily, decreasing_rearrangement,  # noqa: F401
                         levelset_decay, truncate)
from .lab import (PerturbationFamily, StabilityReport, build_perturbation_family,  # noqa: F401
                  emit_report, oscillating_family, run_stability_experiment)
