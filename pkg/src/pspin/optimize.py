"""Minimization of the zero-temperature variational functional over step gammas.

P_h(gamma) = Phi_gamma(0, h) - (1/2) int_0^1 xi''(s) s gamma(s) ds

is evaluated with the exact-in-time recursion (the correction term in closed
form per monomial) and minimized over k-atom step functions through a smooth
reparameterization: breakpoints are sorted logistic transforms, values are
cumulative softplus increments.  Derivative-free polish (Nelder-Mead) runs
after a quasi-random multi-start sweep; everything is deterministic for a
fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _nm_minimize
from scipy.stats import qmc

from .flow import U2Curve, directional_derivative, parisi_functional_correction
from .gamma import GAMMA_VALUE_CAP, StepGamma
from .mixture import DomainError, MixtureSpec
from .pde import (
    GH_ORDER_DEFAULT,
    PDESolution,
    SpatialGrid,
    default_grid,
    phi_at_point,
    solve_parisi_pde,
)

__all__ = [
    "ParisiResult",
    "MinimizeOptions",
    "parisi_functional",
    "minimize_parisi",
    "landscape_quantities",
    "optimality_check",
    "default_probe_gammas",
]

SUPPORT_WEIGHT_TOL = 1e-6


class ConvergenceError(RuntimeError):
    """Optimizer failed to converge; carries the trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def parisi_functional(spec: MixtureSpec, h: float, gamma: StepGamma,
                      gh_order: int = GH_ORDER_DEFAULT,
                      grid: SpatialGrid | None = None) -> float:
    """P_h(gamma): PDE value at (0, h) minus the exact step-function correction."""
    phi = phi_at_point(spec, gamma, h, gh_order=gh_order, grid=grid)[0]
    return phi - parisi_functional_correction(spec, gamma)


@dataclass
class MinimizeOptions:
    n_starts: int = 24
    seed: int = 0
    maxiter: int = 2000
    fatol: float = 1e-10
    xatol: float = 1e-6
    gh_order: int = GH_ORDER_DEFAULT
    value_cap: float = GAMMA_VALUE_CAP
    warm_gammas: tuple = ()


@dataclass
class ParisiResult:
    """Ground-state energy data at one external field."""

    h: float
    gamma: StepGamma
    M: float
    M_prime: float
    E: float
    q_h: float
    k_atoms: int
    trace: list = field(default_factory=list, repr=False)
    solution: PDESolution | None = field(default=None, repr=False, compare=False)

    def row(self):
        return {"h": self.h, "M": self.M, "M_prime": self.M_prime, "E": self.E,
                "q_h": self.q_h, "k_atoms": self.k_atoms}


def _softplus(x):
    return np.logaddexp(0.0, x)


def _inv_softplus(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30, y, np.log(np.expm1(np.maximum(y, 1e-12))))


def _sigmoid(x):
    from scipy.special import expit

    return expit(x)


def _logit(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p / (1.0 - p))


def _theta_to_gamma(theta: np.ndarray, k: int, cap: float) -> StepGamma:
    pos_raw = theta[:k]
    val_raw = theta[k:]
    qs = np.sort(_sigmoid(pos_raw)) if k else np.empty(0)
    qs = np.clip(qs, 1e-4, 1.0 - 1e-4)
    vals = np.minimum(np.cumsum(_softplus(val_raw)), cap)
    # values indistinguishable from zero are zero (denormals would otherwise
    # blow up the 1/a log-transform)
    vals[vals < 1e-9] = 0.0
    return StepGamma(tuple([0.0] + list(qs)), tuple(vals))


def _gamma_to_theta(gamma: StepGamma, k: int) -> np.ndarray:
    """Best-effort inverse of _theta_to_gamma for warm starts."""
    qs = list(gamma.qs[1:])
    vals = list(gamma.values)
    while len(qs) < k:
        qs.append(min(0.999, (qs[-1] + 1.0) / 2 if qs else 0.5))
        vals.append(vals[-1] + 1e-3)
    qs = qs[:k]
    vals = vals[:k + 1] if len(vals) >= k + 1 else vals + [vals[-1] + 1e-3] * (k + 1 - len(vals))
    incr = np.diff([0.0] + sorted(vals))
    return np.concatenate([_logit(np.array(qs)), _inv_softplus(np.maximum(incr, 1e-9))])


def _start_points(k: int, opts: MinimizeOptions) -> np.ndarray:
    """Quasi-random starts: sorted breakpoints, log-uniform value increments."""
    d = 2 * k + 1
    sampler = qmc.Sobol(d=d, scramble=True, seed=opts.seed)
    u = sampler.random(opts.n_starts)
    starts = np.empty_like(u)
    starts[:, :k] = _logit(0.05 + 0.88 * u[:, :k])
    incr = 10.0 ** (-1.2 + 2.0 * u[:, k:])  # increments in [0.06, 6.3]
    starts[:, k:] = _inv_softplus(incr)
    return starts


def minimize_parisi(spec: MixtureSpec, h: float, k_atoms: int,
                    opts: MinimizeOptions | None = None) -> ParisiResult:
    """Minimize P_h over k-atom step functions; deterministic given opts.seed."""
    if k_atoms < 1:
        raise DomainError("k_atoms must be >= 1")
    opts = opts or MinimizeOptions()
    k = k_atoms

    def objective(theta):
        gamma = _theta_to_gamma(np.asarray(theta), k, opts.value_cap)
        return parisi_functional(spec, h, gamma, gh_order=opts.gh_order)

    starts = [row for row in _start_points(k, opts)]
    for g in opts.warm_gammas:
        starts.append(_gamma_to_theta(g, k))
    trace = []
    best = None
    for idx, theta0 in enumerate(starts):
        res = _nm_minimize(objective, theta0, method="Nelder-Mead",
                           options={"maxiter": opts.maxiter, "fatol": opts.fatol,
                                    "xatol": opts.xatol, "adaptive": True})
        gamma = _theta_to_gamma(res.x, k, opts.value_cap)
        entry = {"start": idx, "fun": float(res.fun), "nfev": int(res.nfev),
                 "converged": bool(res.success), "gamma": gamma.to_json()}
        trace.append(entry)
        key = (float(res.fun), tuple(gamma.qs), tuple(gamma.values))
        if best is None or key < best[0]:
            best = (key, gamma, res)
    if best is None or not np.isfinite(best[0][0]):
        raise ConvergenceError("no start converged to a finite value", trace)
    if not any(e["converged"] for e in trace):
        raise ConvergenceError("Nelder-Mead failed to converge from every start", trace)
    gamma_best = best[1]
    sol = solve_parisi_pde(spec, gamma_best, default_grid(spec, h), opts.gh_order)
    M = float(sol.values_at(0.0, np.asarray(h))[0]) - parisi_functional_correction(spec, gamma_best)
    m_prime = float(sol.values_at(0.0, np.asarray(h))[1])
    q_support = gamma_best.support_atoms(SUPPORT_WEIGHT_TOL)
    q_h = q_support[0][0] if q_support else 0.0
    return ParisiResult(h=float(h), gamma=gamma_best, M=M, M_prime=m_prime,
                        E=M - h * m_prime, q_h=float(q_h), k_atoms=k,
                        trace=trace, solution=sol)


def landscape_quantities(result: ParisiResult):
    """(M, M', E, q_h) of a minimization result; E = M - h M' by construction."""
    return result.M, result.M_prime, result.E, result.q_h


def default_probe_gammas(gamma: StepGamma, n_probes: int = 20, seed: int = 7) -> list[StepGamma]:
    """Deterministic probe directions: shifted atoms, added atoms, scaled values."""
    rng = np.random.default_rng(seed)
    probes = [StepGamma.zero(), StepGamma.constant(min(1.0, GAMMA_VALUE_CAP))]
    qs = np.asarray(gamma.qs)
    vals = np.asarray(gamma.values)
    for dq in (-0.1, -0.05, 0.05, 0.1):
        for j in range(len(qs)):
            q_new = qs.copy().astype(float)
            if j == 0:
                continue
            q_new[j] = np.clip(q_new[j] + dq, 1e-3, 1 - 1e-3)
            if len(np.unique(q_new)) == len(q_new) and np.all(np.diff(q_new) > 0):
                probes.append(StepGamma(tuple(q_new), tuple(vals)))
    for factor in (0.5, 0.8, 1.25, 2.0):
        probes.append(StepGamma(tuple(qs), tuple(np.minimum(vals * factor, GAMMA_VALUE_CAP))))
    while len(probes) < n_probes:
        q_extra = float(rng.uniform(0.05, 0.9))
        base = gamma.with_extra_atom(q_extra)
        bump = np.asarray(base.values) * (1.0 + 0.5 * rng.uniform(-1, 1, len(base.values)))
        bump = np.minimum(np.maximum.accumulate(np.abs(bump)), GAMMA_VALUE_CAP)
        probes.append(StepGamma(tuple(base.qs), tuple(bump)))
    return probes[:n_probes]


@dataclass
class OptimalityReport:
    derivatives: list
    tol: float

    @property
    def violations(self):
        return [(g, d) for g, d in self.derivatives if d < -self.tol]

    @property
    def worst(self) -> float:
        return min(d for _, d in self.derivatives)

    @property
    def ok(self) -> bool:
        return not self.violations


def optimality_check(spec: MixtureSpec, h: float, result: ParisiResult,
                     test_gammas=None, tol: float = 5e-3) -> OptimalityReport:
    """Directional derivatives at the reported minimizer toward probe gammas.

    At the true minimizer every derivative is >= 0; numerical residuals below
    -tol are listed as violations.
    """
    sol = result.solution or solve_parisi_pde(spec, result.gamma, h=h)
    curve = U2Curve(sol, h)
    probes = test_gammas if test_gammas is not None else default_probe_gammas(result.gamma)
    rows = []
    for g in probes:
        d = directional_derivative(spec, h, result.gamma, g, sol=sol, u2_curve=curve)
        rows.append((g, float(d)))
    return OptimalityReport(rows, tol)
