"""Independent Monte Carlo oracle for the two-atom Cole-Hopf value.

Target: Phi(0, 0) for the SK mixture with gamma = 0 on [0, 0.5), 2 on [0.5, 1).
Exact recursion:  Phi(0.5, x) = (1/2) log E exp(2 |x + sqrt(0.5) z|),
                  Phi(0, 0)   = E Phi(0.5, sqrt(0.5) z').

The oracle never calls the solver.  Level 1 writes
    E e^{2|w|} = e^{2w-mean-exact} + e^{-2w-mean-exact} - E e^{-2|w|}
and estimates only the bounded last term by MC (variance control); level 2
uses antithetic sampling with the exact heat-equation value E|x + sqrt(.5) Z|
(whose outer mean is sqrt(2/pi)) as a control variate.  Run:

    python tests/oracles/nested_mc_two_atom.py [n_outer] [seed]

The frozen value in test_pde.py was produced by the default settings.
"""

import sys

import numpy as np
from scipy.special import erf

A_VAL = 2.0          # gamma value on the boundary interval
V_INNER = 0.5        # xi'(1) - xi'(0.5) for SK
V_OUTER = 0.5        # xi'(0.5) for SK
M_INNER = 10_000_000
K_BATCHES = 4


def build_inner_batch(rng):
    """Sorted inner sample with prefix sums for O(log m) queries of E e^{-2|x+cz|}."""
    c = np.sqrt(V_INNER)
    z = np.sort(rng.standard_normal(M_INNER) * c)
    # e^{-2|x+z|} = e^{-2x} e^{-2z} for z > -x,  e^{2x} e^{2z} for z < -x
    pref_neg = np.concatenate([[0.0], np.cumsum(np.exp(-A_VAL * z[::-1]))])[::-1]
    pref_pos = np.concatenate([[0.0], np.cumsum(np.exp(A_VAL * z))])
    return z, pref_pos, pref_neg


def f_hat(x, batch):
    """Level-1 estimate of Phi(0.5, x) using one inner batch."""
    z, pref_pos, pref_neg = batch
    idx = np.searchsorted(z, -x)
    m = len(z)
    small = (np.exp(A_VAL * x) * pref_pos[idx] + np.exp(-A_VAL * x) * (pref_neg[idx])) / m
    exact = np.exp(A_VAL * x + 0.5 * A_VAL ** 2 * V_INNER) + np.exp(
        -A_VAL * x + 0.5 * A_VAL ** 2 * V_INNER)
    return np.log(exact - small) / A_VAL


def heat_value(x):
    """E|x + sqrt(V_INNER) Z| exactly (control variate, outer mean sqrt(2/pi))."""
    s = np.sqrt(V_INNER)
    zz = x / s
    return x * erf(zz / np.sqrt(2.0)) + s * np.sqrt(2.0 / np.pi) * np.exp(-0.5 * zz * zz)


def main(n_outer=400_000_000, seed=20240501):
    rng = np.random.default_rng(seed)
    batches = [build_inner_batch(rng) for _ in range(K_BATCHES)]
    control_mean = np.sqrt(2.0 / np.pi)  # E over outer level of heat_value
    chunk = 2_000_000
    total = 0
    acc = []
    while total < n_outer:
        n = min(chunk, n_outer - total)
        zp = rng.standard_normal(n // 2) * np.sqrt(V_OUTER)
        x = np.concatenate([zp, -zp])
        fx = np.mean([f_hat(x, b) for b in batches], axis=0)
        resid = fx - heat_value(x)
        acc.append(resid)
        total += n
    resid = np.concatenate(acc)
    est = control_mean + resid.mean()
    se = resid.std(ddof=1) / np.sqrt(len(resid))
    print(f"n_outer={total}  estimate={est:.9f}  se={se:.2e}  3se={3 * se:.2e}")
    return est, se


if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 400_000_000
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 20240501
    main(n, seed)
