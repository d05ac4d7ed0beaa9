"""Validation, construction and certification of first-order smooth
extensions of 1-jets given on finite point sets."""

from .envelope import (ExtensionResult, FamilyBudget, GridFunction, GridSpec,
                       NotExtendableError, OffGridError, bounded_extend,
                       default_grid_spec, default_stencil, eval_g, eval_m,
                       extend, extend_c11_biconjugate, family_F_lower_bound,
                       lipschitz_extend, lp_smoothness_constant,
                       paraconvex_envelope_grid)
from .jet import (CheckReport, Jet, SearchBox, check_equivalences, check_mg,
                  check_W, check_wells_W11, compute_A, m_omega_G)
from .modulus import (Modulus, RangeExceededError, check_modulus_identities,
                      fenchel_conjugate_numeric)
from .verify import (VerificationReport, VerifyCheck, default_grid_tol,
                     golden_example_holder_half, verify_extension,
                     verify_prop26)

__version__ = "0.1.0"

__all__ = [
    "CheckReport",
    "ExtensionResult",
    "FamilyBudget",
    "GridFunction",
    "GridSpec",
    "Jet",
    "Modulus",
    "NotExtendableError",
    "OffGridError",
    "RangeExceededError",
    "SearchBox",
    "VerificationReport",
    "VerifyCheck",
    "bounded_extend",
    "check_equivalences",
    "check_mg",
    "check_modulus_identities",
    "check_W",
    "check_wells_W11",
    "compute_A",
    "default_grid_spec",
    "default_grid_tol",
    "default_stencil",
    "eval_g",
    "eval_m",
    "extend",
    "extend_c11_biconjugate",
    "family_F_lower_bound",
    "fenchel_conjugate_numeric",
    "golden_example_holder_half",
    "lipschitz_extend",
    "lp_smoothness_constant",
    "m_omega_G",
    "paraconvex_envelope_grid",
    "verify_extension",
    "verify_prop26",
]
