"""Forward propagation of the optimally-controlled diffusion law.

The diffusion starts at X(0) = h and follows

    dX(w) = gamma(w) xi''(w) Phi_x(w, X(w)) dw + xi''(w)^{1/2} dW(w).

Its law is pushed forward on the solver grid by a deterministic
transfer-operator scheme (drift shift, Gaussian convolution, re-binning).
The moment functionals below feed the optimality conditions of the
variational problem: E u(s)^2 with u(s) = Phi_x(s, X(s)) must equal s on the
support of the minimizing measure, and xi''(s) E Phi_xx(s, X(s))^2 stays
below 1 there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gamma import StepGamma
from .mixture import DomainError, MixtureSpec
from .pde import EPS_BOUNDARY, PDESolution

__all__ = [
    "LawOnGrid",
    "propagate_law",
    "moment_u_squared",
    "moment_uxx_bound",
    "directional_derivative",
    "parisi_functional_correction",
    "euler_maruyama_moments",
    "U2Curve",
]

# substeps per atom interval: max(32, ceil(variance / 0.005))
SUBSTEP_VAR = 0.005
SUBSTEP_MIN = 32
MASS_LEAK_TOL = 1e-6
KERNEL_WIDTH_SIGMAS = 8.0


class MassLeakError(RuntimeError):
    """Probability mass escaped the spatial grid."""


@dataclass(frozen=True)
class LawOnGrid:
    """Discretized law of X(s): probability masses on the solver grid nodes."""

    time: float
    x: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        if np.any(self.masses < -1e-12):
            raise ValueError("negative mass")
        total = float(self.masses.sum())
        if abs(total - 1.0) > 1e-9:
            raise MassLeakError(f"law at s={self.time} sums to {total}")

    def mean(self) -> float:
        return float(self.masses @ self.x)

    def variance(self) -> float:
        mu = self.mean()
        return float(self.masses @ (self.x - mu) ** 2)

    def expectation(self, values) -> float:
        return float(self.masses @ np.asarray(values))


def _point_mass(x: np.ndarray, h: float) -> np.ndarray:
    """Mass 1 at h, split linearly between the two surrounding nodes."""
    p = np.zeros_like(x)
    if h <= x[0]:
        p[0] = 1.0
        return p
    if h >= x[-1]:
        p[-1] = 1.0
        return p
    j = int(np.searchsorted(x, h)) - 1
    f = (h - x[j]) / (x[j + 1] - x[j])
    p[j] = 1.0 - f
    p[j + 1] = f
    return p


def _shift_rebin(x, p, shifts):
    """Move mass p[k] from x[k] to x[k] + shifts[k], linear split on the grid."""
    dx = x[1] - x[0]
    pos = (x + shifts - x[0]) / dx
    j = np.floor(pos).astype(np.int64)
    f = pos - j
    out = np.zeros_like(p)
    valid = (j >= 0) & (j < len(x) - 1)
    np.add.at(out, j[valid], p[valid] * (1.0 - f[valid]))
    np.add.at(out, j[valid] + 1, p[valid] * f[valid])
    # clamp mass whose target fell off the grid back to the edge
    np.add.at(out, np.zeros(np.sum(pos < 0), dtype=np.int64), p[pos < 0])
    hi = pos >= len(x) - 1
    np.add.at(out, np.full(np.sum(hi), len(x) - 1, dtype=np.int64), p[hi])
    return out


def _convolve_gauss(x, p, var):
    """Convolve the law with N(0, var), sampled kernel normalized on the grid."""
    if var <= 0.0:
        return p
    dx = x[1] - x[0]
    sigma = math.sqrt(var)
    half = int(math.ceil(KERNEL_WIDTH_SIGMAS * sigma / dx)) + 1
    offsets = np.arange(-half, half + 1) * dx
    kern = np.exp(-0.5 * (offsets / sigma) ** 2)
    kern /= kern.sum()
    out = np.convolve(p, kern, mode="same")
    leak = 1.0 - out.sum()
    if leak > MASS_LEAK_TOL:
        raise MassLeakError(f"{leak:.2e} probability left the grid")
    return out


def propagate_law(sol: PDESolution, h: float, times) -> list[LawOnGrid]:
    """Laws of X at the requested times (sorted, in [0, 1)) from X(0) = h.

    Within an atom interval where gamma == a > 0 the law advances in substeps:
    drift shift by a xi''(w_mid) Phi_x(w_mid, x) dw, then convolution with the
    exact Gaussian variance increment.  Intervals with a == 0 are a single
    exact convolution (zero drift).
    """
    times = [float(t) for t in times]
    # Phi_x is available arbitrarily close to s = 1 (closed form on the last
    # interval); the eps_boundary guard only concerns second derivatives.
    if any(t < 0 or t > 1 - 1e-7 for t in times):
        raise DomainError("requested times must lie in [0, 1)")
    if sorted(times) != times:
        raise DomainError("times must be sorted")
    spec = sol.spec
    gamma = sol.gamma
    x = sol.grid.nodes
    p = _point_mass(x, h)
    out: list[LawOnGrid] = []
    pending = list(times)
    s_cur = 0.0
    while pending and pending[0] <= s_cur + 1e-14:
        out.append(LawOnGrid(pending.pop(0), x, p.copy()))
    edges = gamma.breakpoints
    for i in range(gamma.n_intervals):
        ql, qr = edges[i], edges[i + 1]
        a = gamma.values[i]
        if s_cur >= qr - 1e-15:
            continue
        lo = max(s_cur, ql)
        stops = [t for t in pending if lo < t <= qr + 1e-15]
        seg_targets = sorted(set(stops + [min(qr, 1.0 - 1e-9)]))
        for tgt in seg_targets:
            if tgt <= s_cur + 1e-15:
                continue
            var_seg = spec.xi_prime(tgt) - spec.xi_prime(s_cur)
            if a == 0.0:
                p = _convolve_gauss(x, p, var_seg)
            else:
                n_sub = max(SUBSTEP_MIN, int(math.ceil(var_seg / SUBSTEP_VAR)))
                w_edges = np.linspace(s_cur, tgt, n_sub + 1)
                for k in range(n_sub):
                    wl, wr = w_edges[k], w_edges[k + 1]
                    wm = 0.5 * (wl + wr)
                    dw = wr - wl
                    phi_x = sol.values_at(wm, x)[1]
                    drift = a * spec.xi_double_prime(wm) * phi_x * dw
                    p = _shift_rebin(x, p, drift)
                    p = _convolve_gauss(x, p, spec.xi_prime(wr) - spec.xi_prime(wl))
            s_cur = tgt
            if any(abs(t - tgt) <= 1e-14 for t in pending):
                out.append(LawOnGrid(tgt, x, p.copy()))
                pending = [t for t in pending if abs(t - tgt) > 1e-14]
        if not pending:
            break
    if pending:
        raise DomainError(f"could not reach times {pending}")
    return out


def moment_u_squared(sol: PDESolution, law: LawOnGrid) -> float:
    """E Phi_x(s, X(s))^2 under the discretized law."""
    phi_x = sol.values_at(law.time, law.x)[1]
    return law.expectation(phi_x ** 2)


def moment_uxx_bound(sol: PDESolution, law: LawOnGrid) -> float:
    """xi''(s) E Phi_xx(s, X(s))^2; the caller compares against 1 on support."""
    if law.time > 1.0 - EPS_BOUNDARY:
        raise DomainError("second-derivative moment too close to s = 1")
    phi_xx = sol.values_at(law.time, law.x)[2]
    return sol.spec.xi_double_prime(law.time) * law.expectation(phi_xx ** 2)


class U2Curve:
    """Dense interpolable curve s -> E u(s)^2 for one (solution, h).

    Sampled per atom interval, then monotone-cubic interpolated; one law
    propagation serves every later quadrature.  Near s = 1 the curve has a
    square-root cusp (its derivative blows up like (1-s)^{-1/2}), so the
    terminal interval is interpolated in the variable u = sqrt(1 - s), where
    it is smooth.
    """

    def __init__(self, sol: PDESolution, h: float, points_per_interval: int = 25):
        from scipy.interpolate import PchipInterpolator

        self.sol = sol
        self.h = h
        edges = list(sol.gamma.breakpoints)
        s_top = 1.0 - 1e-6
        cheb = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, points_per_interval)))
        times = []
        for lo, hi in zip(edges[:-2], edges[1:-1]):
            times.extend(lo + (hi - lo) * cheb)
        # terminal interval: uniform in u = sqrt(1 - s)
        lo = edges[-2]
        u_hi, u_lo = math.sqrt(1.0 - lo), math.sqrt(1.0 - s_top)
        times.extend(1.0 - np.linspace(u_hi, u_lo, 2 * points_per_interval) ** 2)
        times = sorted(set(float(t) for t in times))
        laws = propagate_law(sol, h, times)
        self.times = np.array([law.time for law in laws])
        self.u2 = np.array([moment_u_squared(sol, law) for law in laws])
        self._s_cut = lo
        main = self.times <= lo + 1e-15
        tail = self.times >= lo - 1e-15
        self._interp_main = (PchipInterpolator(self.times[main], self.u2[main])
                             if np.sum(main) > 2 else None)
        u_tail = np.sqrt(1.0 - self.times[tail])[::-1]
        self._interp_tail = PchipInterpolator(u_tail, self.u2[tail][::-1])
        self._u_min = u_tail[0]

    def __call__(self, s):
        s = np.clip(np.asarray(s, dtype=float), self.times[0], self.times[-1])
        out = np.empty_like(s)
        tail = s >= self._s_cut
        if np.any(~tail):
            out[~tail] = self._interp_main(s[~tail])
        if np.any(tail):
            u = np.maximum(np.sqrt(1.0 - s[tail]), self._u_min)
            out[tail] = self._interp_tail(u)
        return out if out.ndim else float(out)


def parisi_functional_correction(spec: MixtureSpec, gamma: StepGamma) -> float:
    """(1/2) int_0^1 xi''(s) s gamma(s) ds, exact per monomial."""
    edges = gamma.breakpoints
    anti = spec.s_xi_dd_antiderivative(edges)
    return 0.5 * float(np.sum(np.asarray(gamma.values) * np.diff(anti)))


def directional_derivative(spec: MixtureSpec, h: float, gamma0: StepGamma,
                           gamma1: StepGamma, sol: PDESolution | None = None,
                           u2_curve: U2Curve | None = None,
                           gl_order: int = 16) -> float:
    """Right derivative of the variational functional at gamma0 toward gamma1.

    (1/2) int_0^1 xi''(s) (gamma1 - gamma0)(s) (E u_{gamma0}(s)^2 - s) ds,
    integrated piecewise between the union of the two atom sets.
    """
    from .pde import solve_parisi_pde

    if u2_curve is None:
        if sol is None:
            sol = solve_parisi_pde(spec, gamma0, h=h)
        u2_curve = U2Curve(sol, h)
    nodes, weights = np.polynomial.legendre.leggauss(gl_order)
    edges = np.unique(np.concatenate([gamma0.breakpoints, gamma1.breakpoints]))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        halfw = 0.5 * (hi - lo)
        s = mid + halfw * nodes
        dgamma = gamma1.value_at(mid) - gamma0.value_at(mid)
        if dgamma == 0.0:
            continue
        vals = spec.xi_double_prime(np.abs(s)) * (u2_curve(s) - s)
        total += dgamma * halfw * float(weights @ vals)
    return 0.5 * total


def euler_maruyama_moments(sol: PDESolution, h: float, s_target: float,
                           n_paths: int = 1_000_000, n_steps: int = 400,
                           seed: int = 0):
    """Seeded Euler-Maruyama cross-check: (mean, var, E u^2) of X at s_target.

    Monte Carlo alternative to the deterministic transfer-operator scheme;
    returns standard errors alongside each moment.
    """
    rng = np.random.default_rng(seed)
    spec = sol.spec
    gamma = sol.gamma
    w_edges = np.linspace(0.0, s_target, n_steps + 1)
    x = np.full(n_paths, float(h))
    for k in range(n_steps):
        wl, wr = w_edges[k], w_edges[k + 1]
        wm = 0.5 * (wl + wr)
        a = gamma.value_at(wm)
        dv = spec.xi_prime(wr) - spec.xi_prime(wl)
        if a > 0.0:
            phi_x = sol.values_at(wm, np.clip(x, sol.grid.nodes[0], sol.grid.nodes[-1]))[1]
            x = x + a * spec.xi_double_prime(wm) * phi_x * (wr - wl)
        x = x + math.sqrt(max(dv, 0.0)) * rng.standard_normal(n_paths)
    u = sol.values_at(s_target, np.clip(x, sol.grid.nodes[0], sol.grid.nodes[-1]))[1]
    sqrt_n = math.sqrt(n_paths)
    return {
        "mean": (float(x.mean()), float(x.std(ddof=1) / sqrt_n)),
        "var": (float(x.var(ddof=1)),
                float(np.std((x - x.mean()) ** 2, ddof=1) / sqrt_n)),
        "u2": (float(np.mean(u ** 2)), float(np.std(u ** 2, ddof=1) / sqrt_n)),
    }
