"""Reference values computed independently of the package."""

import math

import numpy as np
from scipy.stats import norm


def crr_american_put(S0, K, r, vol, T, n_steps):
    """Cox-Ross-Rubinstein lattice under the risk-neutral measure."""
    dt = T / n_steps
    u = math.exp(vol * math.sqrt(dt))
    d = 1.0 / u
    p = (math.exp(r * dt) - d) / (u - d)
    disc = math.exp(-r * dt)
    j = np.arange(n_steps + 1)
    S = S0 * u ** (2 * j - n_steps)
    V = np.maximum(K - S, 0.0)
    for i in range(n_steps - 1, -1, -1):
        j = np.arange(i + 1)
        S = S0 * u ** (2 * j - i)
        V = np.maximum(K - S, disc * (p * V[1:] + (1 - p) * V[:-1]))
    return float(V[0])


def black_scholes_put(S0, K, r, vol, T):
    d1 = (math.log(S0 / K) + (r + 0.5 * vol ** 2) * T) / (vol * math.sqrt(T))
    d2 = d1 - vol * math.sqrt(T)
    return K * math.exp(-r * T) * norm.cdf(-d2) - S0 * norm.cdf(-d1)


def explicit_linear_bsde(a, c, xi, T, n_steps):
    """``Y_i = Y_{i+1} + (a Y_{i+1} + c) dt`` from a constant terminal value."""
    dt = T / n_steps
    y = xi
    for _ in range(n_steps):
        y = y + (a * y + c) * dt
    return y


def linear_bsde(a, c, xi, T):
    """Continuous-time value of ``dY = -(a Y + c) dt`` with ``Y_T = xi``."""
    if a == 0:
        return xi + c * T
    return (xi + c / a) * math.exp(a * T) - c / a


def first_hit_rescan(cand, L, start):
    """Loop-based first index ``>= start`` with ``cand <= L``, else the last index."""
    P, N1 = cand.shape
    out = np.empty(P, dtype=np.int64)
    for p in range(P):
        out[p] = N1 - 1
        for i in range(start, N1):
            if cand[p, i] <= L[p, i]:
                out[p] = i
                break
    return out


def brute_snell(payoff_paths_fn, depth):
    """Optimal stopping over all ``2**depth`` coin paths by dynamic programming on prefixes."""
    memo = {}

    def v(prefix):
        if prefix in memo:
            return memo[prefix]
        now = payoff_paths_fn(prefix)
        if len(prefix) == depth:
            memo[prefix] = now
        else:
            memo[prefix] = max(now, 0.5 * (v(prefix + (1,)) + v(prefix + (0,))))
        return memo[prefix]

    return v(())
