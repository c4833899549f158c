"""Shared domain types: time grids, generator / SDE / obstacle specs, solution triples.

Array conventions used throughout the package:

* generator ``g(t, y, z)``: ``t`` float, ``y`` shape ``(m,)``, ``z`` shape ``(m, d)`` -> ``(m,)``
* drift ``b(t, x)``: ``x`` shape ``(m, n)`` -> ``(m, n)``
* diffusion ``sigma(t, x)``: ``x`` shape ``(m, n)`` -> ``(m, n, d)``
* obstacle ``L(t, x)``: ``x`` shape ``(m, n)`` -> ``(m,)``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class RBSDEError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(RBSDEError, ValueError):
    pass


class PreconditionError(RBSDEError, ValueError):
    pass


class SimulationError(RBSDEError, RuntimeError):
    pass


class SolverError(RBSDEError, RuntimeError):
    pass


class StabilityError(SolverError):
    pass


class SolutionInvariantError(RBSDEError, AssertionError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int
    nodes: np.ndarray = field(repr=False)
    uniform: bool = True

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be a positive integer")
        if not (0.0 <= self.t0 < self.T):
            raise ConfigurationError(f"need 0 <= t0 < T, got t0={self.t0}, T={self.T}")
        if nodes.shape != (self.n_steps + 1,):
            raise ConfigurationError("nodes must have length n_steps + 1")
        if np.any(np.diff(nodes) <= 0):
            raise ConfigurationError("grid nodes must be strictly increasing")
        if nodes[0] != self.t0 or nodes[-1] != self.T:
            raise ConfigurationError("grid nodes must start at t0 and end at T")
        object.__setattr__(self, "nodes", _frozen(nodes))

    @classmethod
    def uniform_grid(cls, t0: float, T: float, n_steps: int) -> "TimeGrid":
        if n_steps < 1:
            raise ConfigurationError("n_steps must be a positive integer")
        nodes = t0 + (T - t0) * np.arange(n_steps + 1) / n_steps
        nodes[-1] = T
        return cls(float(t0), float(T), int(n_steps), nodes, True)

    @classmethod
    def from_nodes(cls, nodes) -> "TimeGrid":
        nodes = np.asarray(nodes, dtype=float)
        steps = np.diff(nodes)
        uniform = bool(steps.size and np.allclose(steps, steps[0], rtol=1e-12, atol=0))
        return cls(float(nodes[0]), float(nodes[-1]), len(nodes) - 1, nodes, uniform)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def delta(self) -> float:
        """Uniform step size ``(T - t0) / n_steps``."""
        return (self.T - self.t0) / self.n_steps

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        i = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[i] - t) > atol * max(1.0, abs(t)):
            raise ConfigurationError(f"time {t} is not a grid node")
        return i

    def first_index_at_or_after(self, t: float) -> int:
        i = int(np.searchsorted(self.nodes, t - 1e-12 * max(1.0, abs(t)), side="left"))
        return min(i, self.n_steps)

    def restrict(self, i_end: int) -> "TimeGrid":
        """Grid made of nodes ``0..i_end``."""
        if not 1 <= i_end <= self.n_steps:
            raise ConfigurationError("restriction must keep at least one step")
        return TimeGrid(self.t0, float(self.nodes[i_end]), i_end, self.nodes[: i_end + 1], self.uniform)


def _zero_gamma(t):
    return 0.0


@dataclass(frozen=True)
class GeneratorSpec:
    """Driver ``g(t, y, z)`` with its declared linear-growth bound.

    ``|g(t,y,z)| <= lam * (gamma(t) + |y| + |z|)`` is the declared growth
    condition; ``satisfies_a3`` declares ``g(t, y, 0) = 0``.
    """

    eval: Callable
    lam: float = 1.0
    gamma: Callable = _zero_gamma
    satisfies_a3: bool = False
    d: int = 1
    name: str = "custom"
    formula: str = ""

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("growth constant lam must be >= 0")
        if self.d < 1:
            raise ConfigurationError("d must be >= 1")

    def __call__(self, t, y, z) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float).reshape(y.shape + (self.d,))
        return np.broadcast_to(np.asarray(self.eval(t, y, z), dtype=float), y.shape)

    def scalar(self, t: float, y: float, z) -> float:
        zz = np.asarray(z, dtype=float).reshape(1, self.d)
        return float(self(t, np.array([y], dtype=float), zz)[0])

    def shifted(self, offset: float, name: Optional[str] = None) -> "GeneratorSpec":
        """``g + offset``; the growth envelope absorbs the constant through gamma."""
        base = self.eval
        lam = self.lam or 1.0
        gamma = self.gamma

        def g(t, y, z):
            return base(t, y, z) + offset

        def gam(t):
            return gamma(t) + abs(offset) / lam

        return GeneratorSpec(g, lam, gam, self.satisfies_a3 and offset == 0, self.d,
                             name or f"{self.name}+{offset:g}", f"{self.formula} + {offset:g}")


@dataclass(frozen=True)
class SDECoeffs:
    b: Callable
    sigma: Callable
    mu: float
    nu: float
    n: int = 1
    d: int = 1
    constant: bool = False

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ConfigurationError("SDE dimensions must be positive")

    @classmethod
    def constant_coeffs(cls, b, sigma) -> "SDECoeffs":
        """Constant drift vector ``b`` (n,) and diffusion matrix ``sigma`` (n, d)."""
        b = np.atleast_1d(np.asarray(b, dtype=float))
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = sigma.reshape(1, 1)
        elif sigma.ndim == 1:
            sigma = np.diag(sigma)
        n, d = sigma.shape
        if b.shape != (n,):
            raise ConfigurationError("drift and diffusion dimensions disagree")
        b.setflags(write=False)
        sigma.setflags(write=False)

        def drift(t, x):
            return np.broadcast_to(b, np.shape(x)[:-1] + (n,))

        def diffusion(t, x):
            return np.broadcast_to(sigma, np.shape(x)[:-1] + (n, d))

        nu = float(np.linalg.norm(b) + np.linalg.norm(sigma)) or 1.0
        return cls(drift, diffusion, mu=1.0, nu=nu, n=n, d=d, constant=True)

    @classmethod
    def brownian(cls, d: int = 1) -> "SDECoeffs":
        return cls.constant_coeffs(np.zeros(d), np.eye(d))

    def drift_at(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(1, self.n)
        return np.asarray(self.b(t, x), dtype=float).reshape(self.n)

    def sigma_at(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(1, self.n)
        return np.asarray(self.sigma(t, x), dtype=float).reshape(self.n, self.d)


OBSTACLE_KINDS = ("constant", "time", "state", "ito")


@dataclass(frozen=True)
class ObstacleSpec:
    """Lower barrier.

    ``fn(t, x)`` evaluates the barrier for the non-Itô kinds. For
    ``kind="ito"`` the barrier is the process ``L0 + int U ds + int V . dB``
    started at the origin of the simulation; ``U`` and ``V`` are
    deterministic functions of time (``V`` returns a length-``d`` vector).
    """

    kind: str
    fn: Optional[Callable] = None
    L0: float = 0.0
    U: Optional[Callable] = None
    V: Optional[Callable] = None
    upper_bound: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if self.kind not in OBSTACLE_KINDS:
            raise ConfigurationError(f"unknown obstacle kind {self.kind!r}")
        if self.kind == "ito":
            if self.U is None or self.V is None:
                raise ConfigurationError("ito-form obstacle needs U and V")
        elif self.fn is None:
            raise ConfigurationError("obstacle needs an evaluation function")

    @classmethod
    def constant(cls, value: float, name: str = "constant") -> "ObstacleSpec":
        value = float(value)
        return cls("constant", lambda t, x: np.full(np.shape(x)[:-1], value), upper_bound=value, name=name)

    @classmethod
    def of_time(cls, f: Callable, upper_bound=None, name: str = "time") -> "ObstacleSpec":
        return cls("time", lambda t, x: np.full(np.shape(x)[:-1], float(f(t))),
                   upper_bound=upper_bound, name=name)

    @classmethod
    def of_state(cls, f: Callable, upper_bound=None, name: str = "state") -> "ObstacleSpec":
        return cls("state", f, upper_bound=upper_bound, name=name)

    @classmethod
    def ito(cls, L0: float, U: Callable, V: Callable, upper_bound=None, name: str = "ito") -> "ObstacleSpec":
        return cls("ito", None, float(L0), U, V, upper_bound, name)

    @property
    def needs_brownian(self) -> bool:
        return self.kind == "ito"

    def at(self, t: float, x, w=None, t_origin: float = 0.0) -> np.ndarray:
        """Barrier at time ``t`` for states ``x`` (m, n).

        Itô-form barriers need the Brownian displacement ``w`` (m, d) since
        the origin and are only evaluable pointwise when ``U``, ``V`` are
        constant in time.
        """
        x = np.asarray(x, dtype=float)
        if self.kind != "ito":
            return np.asarray(self.fn(t, x), dtype=float).reshape(x.shape[:-1])
        if w is None:
            raise ConfigurationError("ito-form obstacle needs the Brownian displacement")
        u0, v0 = float(self.U(t_origin)), np.atleast_1d(self.V(t_origin))
        if not (np.isclose(self.U(t), u0) and np.allclose(np.atleast_1d(self.V(t)), v0)):
            raise ConfigurationError("pointwise ito-form evaluation needs constant U and V")
        w = np.asarray(w, dtype=float)
        return self.L0 + u0 * (t - t_origin) + w @ v0

    def on_paths(self, nodes: np.ndarray, X: np.ndarray, dW: np.ndarray) -> np.ndarray:
        """Barrier along simulated paths, shape (P, N+1)."""
        P, N1 = X.shape[:2]
        out = np.empty((P, N1))
        if self.kind == "ito":
            out[:, 0] = self.L0
            acc = np.full(P, self.L0)
            for i in range(N1 - 1):
                h = nodes[i + 1] - nodes[i]
                acc = acc + float(self.U(nodes[i])) * h + dW[:, i, :] @ np.atleast_1d(self.V(nodes[i]))
                out[:, i + 1] = acc
        else:
            for i in range(N1):
                out[:, i] = self.at(nodes[i], X[:, i, :])
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(out))[0]
            raise ConfigurationError(f"obstacle not finite at path {bad[0]}, node {bad[1]}")
        return out


@dataclass
class DiscreteSolution:
    """Grid-indexed triple ``(Y, Z, K)``.

    ``layout="paths"``: ``Y``, ``L``, ``dK`` are arrays ``(P, N+1)`` and ``Z`` is
    ``(P, N, d)``. ``layout="tree"``: each is a list over levels, level ``i``
    holding ``i+1`` lattice nodes (``Z`` has no terminal level).

    ``stop_idx`` records a stopped horizon: per-path stop nodes (paths), or
    per-level boolean masks of absorbing nodes (tree).

    ``dK[..., i]`` is the reflection push applied at node ``i``; it is the
    increment of ``K`` over ``(t_i, t_{i+1}]`` and, at the terminal node, a
    push at the horizon. ``K[..., 0] = 0``.
    """

    grid: TimeGrid
    Y: object
    Z: object
    dK: object
    L: object
    layout: str = "paths"
    stop_idx: Optional[np.ndarray] = None
    flags: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.grid.n_steps + 1

    @property
    def y0(self) -> float:
        if self.layout == "tree":
            return float(self.Y[0][0])
        return float(np.mean(self.Y[:, 0]))

    def level_probabilities(self) -> list:
        """Probability of reaching each lattice node (p = 1/2 moves).

        With stopping masks in ``stop_idx`` (one boolean array per level, or
        ``None``) the mass of a stopped node is absorbed there and does not
        flow to the next level.
        """
        probs = [np.ones(1)]
        for i in range(self.n_nodes - 1):
            flow = probs[-1]
            if self.stop_idx is not None and self.stop_idx[i] is not None:
                flow = np.where(self.stop_idx[i], 0.0, flow)
            nxt = np.zeros(i + 2)
            nxt[:-1] += 0.5 * flow
            nxt[1:] += 0.5 * flow
            probs.append(nxt)
        return probs

    @property
    def K(self) -> np.ndarray:
        """Cumulative reflection ``K[i] = sum_{j<i} dK[j]``.

        Path layout: per path ``(P, N+1)``. Tree layout: expectation over the
        lattice, shape ``(N+1,)``.
        """
        if self.layout == "tree":
            probs = self.level_probabilities()
            exp_dk = np.array([float(p @ dk) for p, dk in zip(probs, self.dK)])
            return np.concatenate([[0.0], np.cumsum(exp_dk[:-1])])
        K = np.zeros_like(self.dK)
        K[:, 1:] = np.cumsum(self.dK[:, :-1], axis=1)
        return K

    @property
    def K_total(self):
        """All pushes including any terminal push (per path, or expected on a tree)."""
        if self.layout == "tree":
            probs = self.level_probabilities()
            return float(sum(float(p @ dk) for p, dk in zip(probs, self.dK)))
        return self.dK.sum(axis=1)

    def iter_levels(self):
        """Yield ``(i, Y_i, L_i, dK_i)`` over nodes for either layout."""
        for i in range(self.n_nodes):
            if self.layout == "tree":
                yield i, self.Y[i], self.L[i], self.dK[i]
            else:
                yield i, self.Y[:, i], self.L[:, i], self.dK[:, i]


@dataclass(frozen=True)
class SolutionCheck:
    min_dK: float
    min_gap: float
    skorokhod_defect: float
    skorokhod_bound: float
    K_nondecreasing: bool

    @property
    def passed(self) -> bool:
        return (self.min_dK >= 0 and self.min_gap >= 0 and self.K_nondecreasing
                and self.skorokhod_defect <= self.skorokhod_bound)


def check_solution(sol: DiscreteSolution, skorokhod_tol: float = 1e-6) -> SolutionCheck:
    """Evaluate the three discrete solution invariants (no raising)."""
    min_dk = np.inf
    min_gap = np.inf
    defect = 0.0
    max_abs_y = 0.0
    for _, Y, L, dK in sol.iter_levels():
        if Y.size == 0:
            continue
        min_dk = min(min_dk, float(np.min(dK)))
        min_gap = min(min_gap, float(np.min(Y - L)))
        defect += float(np.sum((Y - L) * dK))
        max_abs_y = max(max_abs_y, float(np.max(np.abs(Y))))
    K = sol.K
    k_end = float(np.max(K[..., -1])) if np.size(K) else 0.0
    monotone = bool(np.all(np.diff(K, axis=-1) >= 0)) and bool(np.all(K[..., 0] == 0))
    bound = skorokhod_tol * (1.0 + max_abs_y) * max(k_end, float(np.max(sol.K_total)))
    return SolutionCheck(min_dk, min_gap, defect, bound, monotone)


def assert_solution(sol: DiscreteSolution, skorokhod_tol: float = 1e-6) -> SolutionCheck:
    """Shared post-check every solver runs on its output."""
    chk = check_solution(sol, skorokhod_tol)
    if not chk.passed:
        raise SolutionInvariantError(f"discrete solution invariants violated: {chk}")
    return chk


# ---------------------------------------------------------------------------
# sampled assumption checks


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    n_checked: int
    worst_excess: float
    worst_point: dict

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "n_checked": self.n_checked,
            "worst_excess": self.worst_excess,
            "worst_point": self.worst_point,
        }


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    seed: int
    n_samples: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "n_samples": self.n_samples, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks]}


def _rounded(a) -> list:
    return [float(v) for v in np.atleast_1d(a)]


def _worst(name, excess, points: dict, tol=0.0) -> AssumptionCheck:
    excess = np.asarray(excess, dtype=float)
    bad = ~np.isfinite(excess)
    excess = np.where(bad, np.inf, excess)
    k = int(np.argmax(excess))
    worst = {key: _rounded(val[k]) for key, val in points.items()}
    return AssumptionCheck(name, bool(excess[k] <= tol), int(excess.size), float(excess[k]), worst)


def validate_spec(gen: GeneratorSpec, coeffs: Optional[SDECoeffs], obs: Optional[ObstacleSpec],
                  n_samples: int = 2000, rng_seed: int = 0, *, box: float = 10.0,
                  t_range=(0.0, 1.0), continuity_step: float = 1e-9,
                  continuity_tol: float = 1e-3) -> ValidationReport:
    """Sampled check of the standing assumptions on generator, SDE and barrier.

    Violations are reported, never raised. The report is a pure function of
    the specs and ``rng_seed``.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    m, d = n_samples, gen.d
    t = rng.uniform(t_range[0], t_range[1], m)
    y = rng.uniform(-box, box, m)
    z = rng.uniform(-box, box, (m, d))
    checks = []

    g = np.array([gen(ti, y[k:k + 1], z[k:k + 1])[0] for k, ti in enumerate(t)])
    gam = np.array([float(gen.gamma(ti)) for ti in t])
    envelope = gen.lam * (gam + np.abs(y) + np.linalg.norm(z, axis=1))
    checks.append(_worst("A1 linear growth", np.abs(g) - envelope * (1 + 1e-12) - 1e-12,
                         {"t": t, "y": y, "z": z}))

    u = rng.standard_normal(m)
    v = rng.standard_normal((m, d))
    g2 = np.array([gen(ti, y[k:k + 1] + continuity_step * u[k:k + 1],
                       z[k:k + 1] + continuity_step * v[k:k + 1])[0] for k, ti in enumerate(t)])
    checks.append(_worst("A2 continuity", np.abs(g2 - g) - continuity_tol, {"t": t, "y": y, "z": z}))

    if gen.satisfies_a3:
        g0 = np.array([gen(ti, y[k:k + 1], np.zeros((1, d)))[0] for k, ti in enumerate(t)])
        checks.append(_worst("A3 g(t,y,0)=0", np.abs(g0) - 1e-12, {"t": t, "y": y}))

    if coeffs is not None:
        n = coeffs.n
        x1 = rng.uniform(-box, box, (m, n))
        x2 = rng.uniform(-box, box, (m, n))
        b1 = np.array([coeffs.drift_at(ti, x1[k]) for k, ti in enumerate(t)])
        b2 = np.array([coeffs.drift_at(ti, x2[k]) for k, ti in enumerate(t)])
        s1 = np.array([coeffs.sigma_at(ti, x1[k]) for k, ti in enumerate(t)])
        s2 = np.array([coeffs.sigma_at(ti, x2[k]) for k, ti in enumerate(t)])
        lhs = np.linalg.norm(b1 - b2, axis=1) + np.linalg.norm((s1 - s2).reshape(m, -1), axis=1)
        dist = np.linalg.norm(x1 - x2, axis=1)
        checks.append(_worst("H1 Lipschitz", lhs - coeffs.mu * dist * (1 + 1e-9) - 1e-12,
                             {"t": t, "x": x1, "x_other": x2}))
        grow = np.linalg.norm(b1, axis=1) + np.linalg.norm(s1.reshape(m, -1), axis=1)
        checks.append(_worst("H2 linear growth",
                             grow - coeffs.nu * (1 + np.linalg.norm(x1, axis=1)) * (1 + 1e-9) - 1e-12,
                             {"t": t, "x": x1}))

    if obs is not None:
        n = coeffs.n if coeffs is not None else 1
        xs = rng.uniform(-box, box, (m, n))
        if obs.kind == "ito":
            ws = rng.uniform(-box, box, (m, d))
            vals = obs.L0 + np.array([float(obs.U(ti)) * ti + ws[k] @ np.atleast_1d(obs.V(ti))
                                      for k, ti in enumerate(t)])
        else:
            vals = np.array([obs.at(ti, xs[k:k + 1])[0] for k, ti in enumerate(t)])
        finite = np.where(np.isfinite(vals), 0.0, np.inf)
        checks.append(_worst("obstacle finite", finite, {"t": t, "x": xs}))
        if obs.upper_bound is not None:
            checks.append(_worst("obstacle upper bound", vals - obs.upper_bound, {"t": t, "x": xs}))

    return ValidationReport(tuple(checks), int(rng_seed), int(n_samples))
