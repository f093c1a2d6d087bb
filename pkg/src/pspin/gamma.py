"""Atomic order parameters: nondecreasing step functions on [0, 1).

A StepGamma is gamma(s) = a_i on [q_i, q_{i+1}) with 0 = q_0 < ... < q_m < 1
and 0 <= a_0 <= ... <= a_m.  These are the measure-induced functions the
Parisi functional is minimized over, restricted to finitely many atoms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = ["StepGamma", "GAMMA_VALUE_CAP"]

# Cap on gamma values.  The true minimizer may have gamma(1-) = infinity; any
# finite run approximates it by a capped step function and reports the cap.
GAMMA_VALUE_CAP = 200.0

_MERGE_TOL = 1e-10


@dataclass(frozen=True)
class StepGamma:
    """gamma(s) = values[i] on [qs[i], qs[i+1]), qs[0] = 0, last interval ends at 1."""

    qs: tuple
    values: tuple

    def __post_init__(self):
        qs, values = _normalize(self.qs, self.values)
        object.__setattr__(self, "qs", qs)
        object.__setattr__(self, "values", values)

    @staticmethod
    def from_atoms(atoms) -> "StepGamma":
        """Build from [(q_i, a_i), ...]; a_i is the value on [q_i, q_{i+1})."""
        atoms = sorted((float(q), float(a)) for q, a in atoms)
        if not atoms or atoms[0][0] > 0.0:
            atoms = [(0.0, 0.0)] + atoms
        return StepGamma(tuple(q for q, _ in atoms), tuple(a for _, a in atoms))

    @staticmethod
    def zero() -> "StepGamma":
        return StepGamma((0.0,), (0.0,))

    @staticmethod
    def constant(a: float) -> "StepGamma":
        return StepGamma((0.0,), (float(a),))

    @property
    def n_intervals(self) -> int:
        return len(self.qs)

    @property
    def breakpoints(self) -> np.ndarray:
        """All interval endpoints including the terminal 1.0."""
        return np.append(np.asarray(self.qs), 1.0)

    def value_at(self, s):
        """gamma(s) for s in [0, 1) (right-continuous step lookup)."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(np.asarray(self.qs), s, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        out = np.asarray(self.values)[idx]
        return float(out) if out.ndim == 0 else out

    def integral(self) -> float:
        """int_0^1 gamma(s) ds (membership in the paper's function class)."""
        edges = self.breakpoints
        return float(np.sum(np.asarray(self.values) * np.diff(edges)))

    def l1_distance(self, other: "StepGamma") -> float:
        """int_0^1 |gamma - gamma'| ds, exact for step functions."""
        edges = np.unique(np.concatenate([self.breakpoints, other.breakpoints]))
        mid = 0.5 * (edges[:-1] + edges[1:])
        return float(np.sum(np.abs(self.value_at(mid) - other.value_at(mid)) * np.diff(edges)))

    def with_extra_atom(self, q_star: float) -> "StepGamma":
        """Insert a redundant breakpoint at q_star (same value): gamma unchanged."""
        if any(abs(q_star - q) < _MERGE_TOL for q in self.qs):
            return self
        a = self.value_at(q_star)
        qs = sorted(list(self.qs) + [float(q_star)])
        vals = [self.value_at(q) for q in qs]
        # bypass the coalescing of equal consecutive values
        g = object.__new__(StepGamma)
        object.__setattr__(g, "qs", tuple(qs))
        object.__setattr__(g, "values", tuple(vals))
        del a
        return g

    def scaled_below(self, q_cut: float, factor: float) -> "StepGamma":
        """gamma * factor on [0, q_cut), gamma unchanged on [q_cut, 1).

        The coupled-bound candidate construction.  The result need not be
        nondecreasing at q_cut for factor < 1; it is still a valid step
        function for the two-dimensional recursion, so normalization is
        bypassed (monotonicity of the full candidate holds when factor <= 1).
        """
        qs = sorted(set(list(self.qs) + [float(q_cut)]))
        qs = [q for q in qs if q < 1.0]
        vals = [self.value_at(q) * (factor if q < q_cut - _MERGE_TOL else 1.0) for q in qs]
        g = object.__new__(StepGamma)
        object.__setattr__(g, "qs", tuple(qs))
        object.__setattr__(g, "values", tuple(vals))
        return g

    def support_atoms(self, weight_tol: float = 1e-6):
        """Atoms (q_i, jump_i) with jump a_i - a_{i-1} > weight_tol (a_{-1} = 0)."""
        out = []
        prev = 0.0
        for q, a in zip(self.qs, self.values):
            if a - prev > weight_tol:
                out.append((q, a - prev))
            prev = a
        return out

    def to_json(self) -> str:
        return json.dumps([[q, a] for q, a in zip(self.qs, self.values)])

    @staticmethod
    def from_json(text: str) -> "StepGamma":
        pairs = json.loads(text)
        return StepGamma(tuple(q for q, _ in pairs), tuple(a for _, a in pairs))


def _normalize(qs, values):
    qs = [float(q) for q in qs]
    values = [float(a) for a in values]
    if len(qs) != len(values):
        raise ValueError("qs and values length mismatch")
    if not qs or abs(qs[0]) > _MERGE_TOL:
        raise ValueError("first breakpoint must be 0")
    qs[0] = 0.0
    if any(q2 - q1 <= -_MERGE_TOL for q1, q2 in zip(qs, qs[1:])):
        raise ValueError("breakpoints must be increasing")
    if qs[-1] >= 1.0:
        raise ValueError("breakpoints must lie in [0, 1)")
    # merge breakpoints closer than the tolerance (keep the later value)
    merged_q, merged_a = [qs[0]], [values[0]]
    for q, a in zip(qs[1:], values[1:]):
        if q - merged_q[-1] < _MERGE_TOL:
            merged_a[-1] = a
        else:
            merged_q.append(q)
            merged_a.append(a)
    for a1, a2 in zip(merged_a, merged_a[1:]):
        if a2 < a1 - 1e-12:
            raise ValueError("gamma values must be nondecreasing")
    if merged_a[0] < 0:
        raise ValueError("gamma values must be nonnegative")
    if merged_a[-1] > GAMMA_VALUE_CAP + 1e-12:
        raise ValueError(f"gamma value exceeds cap {GAMMA_VALUE_CAP}")
    # coalesce equal consecutive values
    out_q, out_a = [merged_q[0]], [merged_a[0]]
    for q, a in zip(merged_q[1:], merged_a[1:]):
        if a - out_a[-1] <= 1e-15:
            continue
        out_q.append(q)
        out_a.append(a)
    return tuple(out_q), tuple(out_a)
