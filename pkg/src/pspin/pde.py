"""Backward parabolic solver for the zero-temperature order-parameter PDE.

For an atomic step function gamma the equation

    d_s Phi = -(xi''(s)/2) * (d_xx Phi + gamma(s) (d_x Phi)^2),  Phi(1, x) = |x|

is solved exactly in time by a nested log-Gaussian-expectation recursion: on an
interval where gamma == a and the accumulated variance is v = xi'(right) -
xi'(left),

    Phi(left, x) = (1/a) log E exp(a Phi(right, x + z sqrt(v)))   (a > 0)
    Phi(left, x) = E Phi(right, x + z sqrt(v))                    (a = 0)

with z standard normal.  The interval adjacent to s = 1 is available in closed
form (tilted-Gaussian integrals of exp(a|x|)); earlier intervals use
Gauss-Hermite quadrature with monotone cubic interpolation of the previous
layer.  Spatial derivatives are propagated through the same quadrature as
weighted moments, so the only error sources are quadrature and interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import log_ndtr, ndtr

from .gamma import StepGamma
from .mixture import DomainError, MixtureSpec

__all__ = [
    "SpatialGrid",
    "PDESolution",
    "solve_parisi_pde",
    "eval_solution",
    "heat_closed_form",
    "default_grid",
    "phi_at_point",
]

GH_ORDER_DEFAULT = 60
N_POINTS_DEFAULT = 4097
# second-derivative queries are refused this close to s = 1 (the boundary
# second derivative is a point mass there)
EPS_BOUNDARY = 1e-3
# queries must stay this many sqrt(xi'(1)) inside the grid edge
TRUST_MARGIN = 3.0
# largest tilt a*sqrt(v) a single Gauss-Hermite step is allowed to absorb;
# larger steps are split time-wise (the recursion composes exactly)
TILT_MAX = 6.0
# below this, gamma values are numerically indistinguishable from 0 and the
# a -> 0 limit of the log-transform is used (relative error ~ a * Var(Phi) / 2)
A_TINY = 1e-10

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class _NeedsGrid(Exception):
    """Gridless nested evaluation not applicable; use the tabulated path."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform symmetric grid on [-L, L] containing 0 exactly."""

    half_width: float
    n_points: int = N_POINTS_DEFAULT

    def __post_init__(self):
        if self.half_width <= 0:
            raise DomainError("grid half_width must be positive")
        if self.n_points % 2 == 0 or self.n_points < 3:
            raise DomainError("n_points must be odd and >= 3")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        x = np.linspace(-self.half_width, self.half_width, self.n_points)
        x[self.n_points // 2] = 0.0
        return x


def default_grid(spec: MixtureSpec, h: float, n_points: int = N_POINTS_DEFAULT) -> SpatialGrid:
    """Half-width |h| + 10 sqrt(xi'(1)): Gaussian tails beyond are < 1e-20."""
    return SpatialGrid(abs(h) + 10.0 * math.sqrt(spec.xi_prime(1.0)), n_points)


@lru_cache(maxsize=8)
def _gh_rule(order: int):
    t, w = np.polynomial.hermite.hermgauss(order)
    return t, w / math.sqrt(math.pi)


def _n_substeps(a: float, v: float) -> int:
    if a < A_TINY or v <= 0.0:
        return 1
    return max(1, int(math.ceil((a * math.sqrt(v) / TILT_MAX) ** 2)))


# ---------------------------------------------------------------------------
# closed forms on the interval adjacent to the |x| boundary


def _boundary_values(a: float, sigma: float, y):
    """(Phi, Phi_x, Phi_xx) at variance sigma^2 from the boundary, gamma == a.

    Exact tilted-Gaussian integral of exp(a |x + sigma z|); stable for any
    a in [0, cap] via log-space normal CDFs.
    """
    y = np.asarray(y, dtype=float)
    if sigma <= 0.0:
        return np.abs(y), np.sign(y), np.zeros_like(y)
    z = y / sigma
    if a < A_TINY:
        pos = ndtr(z)
        neg = ndtr(-z)
        gauss = np.exp(-0.5 * z * z) / _SQRT_2PI
        phi = y * (pos - neg) + 2.0 * sigma * gauss
        phi_x = pos - neg
        phi_xx = 2.0 * gauss / sigma
        return phi, phi_x, phi_xx
    la = a * y + log_ndtr(z + a * sigma)
    lb = -a * y + log_ndtr(a * sigma - z)
    lsum = np.logaddexp(la, lb)
    phi = 0.5 * a * sigma * sigma + lsum / a
    phi_x = np.tanh(0.5 * (la - lb))
    log_d = -0.5 * z * z - 0.5 * (a * sigma) ** 2 - math.log(sigma * _SQRT_2PI)
    phi_xx = a * (1.0 - phi_x * phi_x) + 2.0 * np.exp(log_d - lsum)
    return phi, phi_x, phi_xx


def heat_closed_form(spec: MixtureSpec, h: float, s: float):
    """Exact gamma == 0 solution (phi, phi_x, phi_xx) at (s, h).

    E|h + sigma Z| with sigma^2 = xi'(1) - xi'(s), written with the error
    function; this is the module's independent oracle for the solver.
    """
    if not 0.0 <= s < 1.0:
        raise DomainError(f"s={s} outside [0, 1)")
    sigma2 = spec.xi_prime(1.0) - spec.xi_prime(s)
    sigma = math.sqrt(max(sigma2, 0.0))
    if sigma == 0.0:
        return abs(h), math.copysign(1.0, h) if h != 0 else 0.0, math.inf
    z = h / sigma
    from scipy.special import erf

    e = float(erf(z / math.sqrt(2.0)))
    g = math.exp(-0.5 * z * z)
    phi = h * e + sigma * math.sqrt(2.0 / math.pi) * g
    phi_x = e
    phi_xx = math.sqrt(2.0 / math.pi) * g / sigma
    return phi, phi_x, phi_xx


# ---------------------------------------------------------------------------
# layer representation and the quadrature step


class _GridLayer:
    """Tabulated (Phi, Phi_x, Phi_xx) on the grid, with linear tail extension."""

    __slots__ = ("x", "phi", "phi_x", "phi_xx", "_interp")

    def __init__(self, x, phi, phi_x, phi_xx):
        self.x = x
        # enforce the exact parity of the boundary data
        self.phi = 0.5 * (phi + phi[::-1])
        self.phi_x = 0.5 * (phi_x - phi_x[::-1])
        self.phi_xx = 0.5 * (phi_xx + phi_xx[::-1])
        self._interp = None

    def _build(self):
        if self._interp is None:
            self._interp = (
                PchipInterpolator(self.x, self.phi, extrapolate=False),
                PchipInterpolator(self.x, self.phi_x, extrapolate=False),
                PchipInterpolator(self.x, self.phi_xx, extrapolate=False),
            )

    def __call__(self, y):
        self._build()
        lo, hi = self.x[0], self.x[-1]
        yc = np.clip(y, lo, hi)
        ip, ipx, ipxx = self._interp
        phi = ip(yc)
        phi_x = ipx(yc)
        phi_xx = ipxx(yc)
        over = y > hi
        under = y < lo
        if np.any(over):
            phi = np.where(over, self.phi[-1] + self.phi_x[-1] * (y - hi), phi)
            phi_x = np.where(over, self.phi_x[-1], phi_x)
            phi_xx = np.where(over, self.phi_xx[-1], phi_xx)
        if np.any(under):
            phi = np.where(under, self.phi[0] + self.phi_x[0] * (y - lo), phi)
            phi_x = np.where(under, self.phi_x[0], phi_x)
            phi_xx = np.where(under, self.phi_xx[0], phi_xx)
        return phi, phi_x, phi_xx


def _combine(a: float, P, Px, Pxx, wn, axis=-1):
    """One Cole-Hopf quadrature step given source values at displaced points."""
    if a < A_TINY:
        phi = np.tensordot(P, wn, axes=([axis], [0]))
        phi_x = np.tensordot(Px, wn, axes=([axis], [0]))
        phi_xx = np.tensordot(Pxx, wn, axes=([axis], [0]))
        return phi, phi_x, phi_xx
    E = a * P
    m = E.max(axis=axis, keepdims=True)
    G = np.exp(E - m) * wn
    S = G.sum(axis=axis)
    phi = (np.squeeze(m, axis=axis) + np.log(S)) / a
    phi_x = (G * Px).sum(axis=axis) / S
    phi_xx = (G * (a * Px * Px + Pxx)).sum(axis=axis) / S - a * phi_x * phi_x
    return phi, phi_x, phi_xx


def _advance(source, a: float, v: float, x_out, grid_nodes, gh_order: int):
    """Advance the solution across variance v with gamma == a.

    source: callable y -> (phi, phi_x, phi_xx) at the right endpoint.
    Splits the step when the tilt a*sqrt(v) exceeds the quadrature budget
    (the recursion with equal a composes exactly); intermediate sub-layers
    are tabulated on grid_nodes.
    """
    if v < -1e-12:
        raise DomainError(f"negative variance v={v} (xi' must be nondecreasing)")
    if v <= 0.0:
        return source(np.asarray(x_out, dtype=float))
    t, wn = _gh_rule(gh_order)
    n_sub = _n_substeps(a, v)
    dv = v / n_sub
    shift = math.sqrt(2.0 * dv) * t
    cur = source
    for k in range(n_sub - 1):
        y = grid_nodes[:, None] + shift[None, :]
        P, Px, Pxx = cur(y)
        phi, phi_x, phi_xx = _combine(a, P, Px, Pxx, wn)
        cur = _GridLayer(grid_nodes, phi, phi_x, phi_xx)
    x_out = np.asarray(x_out, dtype=float)
    y = x_out[..., None] + shift
    P, Px, Pxx = cur(y)
    return _combine(a, P, Px, Pxx, wn)


# ---------------------------------------------------------------------------
# full solution object


class PDESolution:
    """Gridded solution for one (mixture, gamma): layers at atom times.

    Layer i holds (Phi, Phi_x, Phi_xx) at s = qs[i]; the interval adjacent to
    the boundary is kept in closed form and the s = 1 layer is exactly |x|.
    """

    def __init__(self, spec: MixtureSpec, gamma: StepGamma, grid: SpatialGrid,
                 gh_order: int = GH_ORDER_DEFAULT):
        self.spec = spec
        self.gamma = gamma
        self.grid = grid
        self.gh_order = gh_order
        self._layers: list[_GridLayer] = []
        self._solve()

    # -- construction ------------------------------------------------------

    def _boundary_source(self, s: float):
        a_last = self.gamma.values[-1]
        sigma2 = self.spec.xi_prime(1.0) - self.spec.xi_prime(s)
        sigma = math.sqrt(max(sigma2, 0.0))
        return lambda y: _boundary_values(a_last, sigma, y)

    def _source_at(self, i_right: int):
        """Solution evaluator at time qs[i_right] (exact if boundary-adjacent)."""
        m = len(self.gamma.qs) - 1
        if i_right > m:
            raise IndexError
        if i_right == m:
            return self._boundary_source(self.gamma.qs[m])
        return self._layers[i_right]

    def _solve(self):
        qs = self.gamma.qs
        values = self.gamma.values
        m = len(qs) - 1
        nodes = self.grid.nodes
        layers: list[_GridLayer | None] = [None] * (m + 1)
        phi, phi_x, phi_xx = self._boundary_source(qs[m])(nodes)
        layers[m] = _GridLayer(nodes, np.asarray(phi), np.asarray(phi_x), np.asarray(phi_xx))
        for i in range(m - 1, -1, -1):
            v = self.spec.xi_prime(qs[i + 1]) - self.spec.xi_prime(qs[i])
            src = self._boundary_source(qs[m]) if i + 1 == m else layers[i + 1]
            phi, phi_x, phi_xx = _advance(src, values[i], v, nodes, nodes, self.gh_order)
            layers[i] = _GridLayer(nodes, phi, phi_x, phi_xx)
        self._layers = layers

    # -- queries -----------------------------------------------------------

    @property
    def layer_times(self) -> tuple:
        return self.gamma.qs

    def layer_arrays(self, i: int):
        """(s, x, phi, phi_x, phi_xx) arrays of layer i."""
        L = self._layers[i]
        return self.gamma.qs[i], L.x, L.phi, L.phi_x, L.phi_xx

    @property
    def boundary_layer(self):
        """The s = 1 layer: exactly (|x|, sign(x), 0) on the nodes."""
        x = self.grid.nodes
        return np.abs(x), np.sign(x), np.zeros_like(x)

    def trusted_half_width(self) -> float:
        return self.grid.half_width - TRUST_MARGIN * math.sqrt(self.spec.xi_prime(1.0))

    def _check_domain(self, x, order: int, s: float):
        if np.any(np.abs(np.asarray(x)) > self.trusted_half_width() + 1e-12):
            raise DomainError("x outside the trusted region of the grid")
        if order == 2 and s > 1.0 - EPS_BOUNDARY:
            raise DomainError(
                f"second derivative not available for s > {1 - EPS_BOUNDARY}")

    def values_at(self, s: float, x):
        """(phi, phi_x, phi_xx) at time s for points x (vectorized)."""
        if not 0.0 <= s <= 1.0:
            raise DomainError(f"s={s} outside [0, 1]")
        x = np.asarray(x, dtype=float)
        qs = self.gamma.qs
        m = len(qs) - 1
        if s == 1.0:
            return np.abs(x), np.sign(x), np.full_like(x, np.nan)
        if s >= qs[m]:
            return self._boundary_source(s)(x)
        i = int(np.searchsorted(np.asarray(qs), s, side="right") - 1)
        if abs(s - qs[i]) < 1e-14:
            return self._layers[i](x)
        v = self.spec.xi_prime(qs[i + 1]) - self.spec.xi_prime(s)
        return _advance(self._source_at(i + 1), self.gamma.values[i], v, x,
                        self.grid.nodes, self.gh_order)

    def eval(self, s: float, x, order: int = 0):
        self._check_domain(x, order, s)
        vals = self.values_at(s, x)
        out = vals[order]
        if np.ndim(x) == 0:
            return float(np.asarray(out))
        return out

    # -- diagnostics ---------------------------------------------------------

    def check_invariants(self) -> list[str]:
        """Violations of the structural layer invariants (empty == ok)."""
        problems = []
        bphi, _, _ = self.boundary_layer
        if not np.array_equal(bphi, np.abs(self.grid.nodes)):
            problems.append("boundary layer is not exactly |x|")
        for i, L in enumerate(self._layers):
            s = self.gamma.qs[i]
            if np.max(np.abs(L.phi - L.phi[::-1])) > 1e-12:
                problems.append(f"layer s={s}: Phi not even")
            if np.max(np.abs(L.phi_x)) > 1.0 + 1e-9:
                problems.append(f"layer s={s}: |Phi_x| exceeds 1")
            d1 = np.diff(L.phi_x)
            if np.any(d1 < -1e-12):
                problems.append(f"layer s={s}: Phi_x decreasing somewhere")
            # strict increase away from the double-precision saturation at +-1
            core = np.abs(L.phi_x) < 1.0 - 1e-13
            if np.any((d1 <= 0) & core[:-1] & core[1:]):
                problems.append(f"layer s={s}: Phi_x not strictly increasing off saturation")
            d2 = np.diff(L.phi, 2)
            if np.min(d2) < -1e-10:
                problems.append(f"layer s={s}: Phi not convex on the grid")
        return problems

    def to_table(self):
        """Rows (s, x, phi, phi_x, phi_xx) over all layers, for CSV dumps."""
        rows = []
        for i in range(len(self._layers)):
            s, x, phi, phi_x, phi_xx = self.layer_arrays(i)
            for k in range(len(x)):
                rows.append((s, x[k], phi[k], phi_x[k], phi_xx[k]))
        bphi, bpx, bpxx = self.boundary_layer
        for k, xv in enumerate(self.grid.nodes):
            rows.append((1.0, xv, bphi[k], bpx[k], bpxx[k]))
        return rows


def solve_parisi_pde(spec: MixtureSpec, gamma: StepGamma, grid: SpatialGrid | None = None,
                     gh_order: int = GH_ORDER_DEFAULT, h: float = 0.0) -> PDESolution:
    """Solve the backward PDE for an atomic gamma; h only sizes the default grid."""
    if grid is None:
        grid = default_grid(spec, h)
    return PDESolution(spec, gamma, grid, gh_order)


def eval_solution(sol: PDESolution, s: float, x, order: int = 0):
    """Phi (order 0), Phi_x (1) or Phi_xx (2) at (s, x) within the trusted region."""
    if order not in (0, 1, 2):
        raise DomainError(f"order must be 0, 1 or 2, got {order}")
    return sol.eval(s, x, order)


# ---------------------------------------------------------------------------
# gridless nested evaluation (fast path for functional minimization)


def _chain_values(spec: MixtureSpec, gamma: StepGamma, i: int, s: float, y,
                  gh_order: int, max_points: int):
    qs = gamma.qs
    m = len(qs) - 1
    if i == m:
        a = gamma.values[m]
        sigma2 = spec.xi_prime(1.0) - spec.xi_prime(s)
        return _boundary_values(a, math.sqrt(max(sigma2, 0.0)), y)
    a = gamma.values[i]
    v = spec.xi_prime(qs[i + 1]) - spec.xi_prime(s)
    if _n_substeps(a, v) > 1:
        raise _NeedsGrid
    t, wn = _gh_rule(gh_order)
    y2 = np.asarray(y, dtype=float)[..., None] + math.sqrt(2.0 * max(v, 0.0)) * t
    if y2.size > max_points:
        raise _NeedsGrid
    P, Px, Pxx = _chain_values(spec, gamma, i + 1, qs[i + 1], y2, gh_order, max_points)
    return _combine(a, P, Px, Pxx, wn)


def phi_at_point(spec: MixtureSpec, gamma: StepGamma, h: float,
                 gh_order: int = GH_ORDER_DEFAULT, grid: SpatialGrid | None = None):
    """(Phi, Phi_x, Phi_xx) at (0, h) by nested quadrature, no spatial grid.

    Falls back to the tabulated solver when the nesting would be too deep or a
    step needs time-splitting.  Agreement of the two paths is a test target.
    """
    try:
        phi, phi_x, phi_xx = _chain_values(
            spec, gamma, 0, 0.0, np.asarray(float(h)), gh_order,
            max_points=gh_order ** 3 + 1)
        return float(phi), float(phi_x), float(phi_xx)
    except _NeedsGrid:
        sol = solve_parisi_pde(spec, gamma, grid, gh_order, h=h)
        vals = sol.values_at(0.0, np.asarray(float(h)))
        return float(vals[0]), float(vals[1]), float(vals[2])
