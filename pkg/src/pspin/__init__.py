"""Zero-temperature Parisi theory and finite-N simulation of mixed even p-spin glasses."""

from .gamma import StepGamma
from .mixture import MixtureSpec, sk_mixture, validate_mixture, xi_eval
from .pde import (
    PDESolution,
    SpatialGrid,
    default_grid,
    eval_solution,
    heat_closed_form,
    solve_parisi_pde,
)

__version__ = "0.1.0"
