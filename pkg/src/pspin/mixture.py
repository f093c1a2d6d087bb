"""Mixture function xi(s) = sum_p c_p^2 s^p of the mixed even p-spin model.

The model is specified by finitely many even interaction orders p >= 2 with
real coefficients c_p.  Everything downstream (PDE variances, simulator
covariance, step-function integrals) is driven by xi and its first two
derivatives, so they are evaluated together and exactly (plain polynomial
arithmetic, no quadrature).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MixtureSpec", "xi_eval", "validate_mixture", "sk_mixture"]


class DomainError(ValueError):
    """Argument outside the mathematically valid domain."""


@dataclass(frozen=True)
class MixtureSpec:
    """Finite even mixture: coefficients maps p -> c_p, p even, p >= 2."""

    coefficients: dict[int, float]
    p_max: int = field(init=False)

    def __post_init__(self):
        errors = validate_mixture_dict(self.coefficients)
        if errors:
            raise DomainError("invalid mixture: " + "; ".join(errors))
        coeffs = {int(p): float(c) for p, c in self.coefficients.items() if c != 0.0}
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "p_max", max(coeffs))

    @property
    def ps(self) -> np.ndarray:
        return np.array(sorted(self.coefficients), dtype=np.int64)

    @property
    def cs(self) -> np.ndarray:
        return np.array([self.coefficients[p] for p in sorted(self.coefficients)])

    def xi(self, s):
        return xi_eval(self, s)[0]

    def xi_prime(self, s):
        return xi_eval(self, s)[1]

    def xi_double_prime(self, s):
        return xi_eval(self, s)[2]

    def xi_prime_diff(self, s_left, s_right):
        """xi'(s_right) - xi'(s_left), the Gaussian variance of one time slab."""
        sl = np.asarray(s_left, dtype=float)
        sr = np.asarray(s_right, dtype=float)
        out = 0.0
        for p, c in self.coefficients.items():
            out = out + p * c * c * (sr ** (p - 1) - sl ** (p - 1))
        return out

    def s_xi_dd_antiderivative(self, s):
        """Antiderivative of w * xi''(w):  sum_p (p-1) c_p^2 s^p.

        Used for the exactly-integrable step-function correction terms in the
        Parisi functional and the coupled-energy bound.
        """
        s = np.asarray(s, dtype=float)
        out = 0.0
        for p, c in self.coefficients.items():
            out = out + (p - 1) * c * c * s ** p
        return out

    def as_pairs(self) -> list[list[float]]:
        return [[int(p), float(self.coefficients[p])] for p in sorted(self.coefficients)]

    @staticmethod
    def from_pairs(pairs) -> "MixtureSpec":
        return MixtureSpec({int(p): float(c) for p, c in pairs})


def sk_mixture() -> MixtureSpec:
    """The SK model, xi(s) = s^2 / 2 (c_2 = 1/sqrt(2))."""
    return MixtureSpec({2: 1.0 / np.sqrt(2.0)})


def validate_mixture_dict(coefficients) -> list[str]:
    """All invariant violations of a raw coefficient map (empty list == ok)."""
    errors = []
    if not coefficients:
        errors.append("no coefficients given")
        return errors
    nonzero = False
    for p, c in coefficients.items():
        p = int(p)
        if p < 2:
            errors.append(f"order p={p} below 2")
        if p % 2 != 0:
            errors.append(f"odd order p={p} (model is mixed even)")
        if not np.isfinite(c):
            errors.append(f"non-finite coefficient c_{p}={c}")
        if c != 0.0:
            nonzero = True
    if not nonzero:
        errors.append("all coefficients zero")
        return errors
    decay = sum(2.0 ** int(p) * float(c) ** 2 for p, c in coefficients.items())
    if not np.isfinite(decay):
        errors.append("sum 2^p c_p^2 not finite")
    return errors


def validate_mixture(spec) -> list[str]:
    """Invariant violations of a MixtureSpec or raw coefficient map."""
    coeffs = spec.coefficients if isinstance(spec, MixtureSpec) else spec
    errors = validate_mixture_dict(coeffs)
    if errors:
        return errors
    for name, v in zip(("xi(1)", "xi'(1)", "xi''(1)"),
                       xi_eval_dict(coeffs, 1.0)):
        if not (np.isfinite(v) and v > 0):
            errors.append(f"{name} = {v} not finite positive")
    return errors


def xi_eval_dict(coefficients, s):
    s = np.asarray(s, dtype=float)
    xi = np.zeros_like(s)
    xi_p = np.zeros_like(s)
    xi_pp = np.zeros_like(s)
    # Horner over descending orders; gaps between even p's handled by power.
    ps = sorted(coefficients, reverse=True)
    prev = None
    for p in ps:
        if prev is not None:
            step = prev - p
            xi = xi * s ** step
            xi_p = xi_p * s ** step
            xi_pp = xi_pp * s ** step
        c2 = float(coefficients[p]) ** 2
        xi = xi + c2
        xi_p = xi_p + p * c2
        xi_pp = xi_pp + p * (p - 1) * c2
        prev = p
    pmin = ps[-1]
    xi = xi * s ** pmin
    xi_p = xi_p * s ** (pmin - 1)
    xi_pp = xi_pp * s ** (pmin - 2)
    return xi, xi_p, xi_pp


def xi_eval(spec: MixtureSpec, s):
    """(xi, xi', xi'') at s, |s| <= 1.  Scalar in, scalar out."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(np.abs(s_arr) > 1.0 + 1e-15):
        raise DomainError(f"|s| > 1 in xi_eval: s={s}")
    xi, xi_p, xi_pp = xi_eval_dict(spec.coefficients, s_arr)
    if np.isscalar(s) or np.ndim(s) == 0:
        return float(xi), float(xi_p), float(xi_pp)
    return xi, xi_p, xi_pp
