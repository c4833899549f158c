"""Backward solvers for reflected BSDEs on a shared time grid.

Three engines share one driver step:

* ``solve_tree``: recombining binomial lattice, exact reflection (1-d, constant coefficients)
* ``solve_lsmc``: least-squares Monte Carlo on simulated paths
* ``solve_penalized``: unreflected scheme with the penalty ``n (L - y)^+`` added to the driver

The driver step is explicit with optional Picard re-evaluations, and the ``y``
argument passed to ``g`` is always projected onto ``[L, inf)`` when a barrier
is present, so ``g`` is never evaluated below the barrier.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (ConfigurationError, DiscreteSolution, GeneratorSpec, ObstacleSpec,
                   PreconditionError, SDECoeffs, SolutionInvariantError, StabilityError,
                   TimeGrid, assert_solution, check_solution)
from .pathsim import PathBundle


@dataclass(frozen=True)
class RBSDEProblem:
    """RBSDE with parameter (g, T, xi, L); ``terminal`` maps states (m, n) to xi (m,)."""

    gen: GeneratorSpec
    terminal: Callable
    obs: ObstacleSpec
    grid: TimeGrid
    coeffs: Optional[SDECoeffs] = None
    x0: Optional[np.ndarray] = None

    def terminal_values(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.terminal(x), dtype=float).reshape(x.shape[:-1])


def check_terminal(xi: np.ndarray, L_T: np.ndarray, atol: float = 1e-12) -> None:
    gap = xi - L_T
    if gap.size and float(np.min(gap)) < -atol:
        k = int(np.argmin(gap))
        raise PreconditionError(f"terminal value {xi.flat[k]:g} below obstacle {L_T.flat[k]:g}")


def driver_step(gen: GeneratorSpec, t: float, E: np.ndarray, Z: np.ndarray, dt: float,
                L: Optional[np.ndarray] = None, picard: int = 1,
                penalty: float = 0.0, L_pen: Optional[np.ndarray] = None):
    """Explicit step ``E + f(y) dt`` with ``picard`` re-evaluations at the updated value.

    ``f = g + penalty * (L_pen - y)^+``. Returns ``(Ytilde, penalty_increment)``.
    """

    def f(y):
        out = gen(t, y, Z)
        if penalty:
            push = penalty * np.maximum(L_pen - y, 0.0)
            return out + push, push * dt
        return out, None

    y = E if L is None else np.maximum(E, L)
    val, pen = f(y)
    Yt = E + val * dt
    for _ in range(picard):
        y = Yt if L is None else np.maximum(Yt, L)
        val, pen = f(y)
        Yt = E + val * dt
    return Yt, pen


# ---------------------------------------------------------------------------
# recombining tree


@dataclass(frozen=True)
class TreeModel:
    """Binomial lattice ``x_{i,j} = x0 + b (t_i - t0) + sigma (2j - i) sqrt(dt)``, p = 1/2."""

    grid: TimeGrid
    x0: float
    b: float
    sigma: float

    def __post_init__(self):
        if not self.grid.uniform:
            raise ConfigurationError("the tree needs a uniform grid")

    @classmethod
    def from_coeffs(cls, coeffs: SDECoeffs, x0, grid: TimeGrid, n_probe: int = 16) -> "TreeModel":
        if coeffs.n != 1 or coeffs.d != 1:
            raise ConfigurationError("the tree handles 1-d state and 1-d noise only")
        x0 = float(np.atleast_1d(x0)[0])
        b0 = float(coeffs.drift_at(grid.t0, x0)[0])
        s0 = float(coeffs.sigma_at(grid.t0, x0)[0, 0])
        ts = np.linspace(grid.t0, grid.T, n_probe)
        xs = x0 + np.linspace(-5.0, 5.0, n_probe)
        for t in ts:
            for x in xs:
                if not (np.isclose(coeffs.drift_at(t, x)[0], b0) and np.isclose(coeffs.sigma_at(t, x)[0, 0], s0)):
                    raise ConfigurationError("the tree needs constant SDE coefficients")
        return cls(grid, x0, b0, s0)

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def sqdt(self) -> float:
        return float(np.sqrt(self.grid.delta))

    def brownian_level(self, i: int) -> np.ndarray:
        return (2.0 * np.arange(i + 1) - i) * self.sqdt

    def level(self, i: int) -> np.ndarray:
        t = self.grid.nodes[i]
        return self.x0 + self.b * (t - self.grid.t0) + self.sigma * self.brownian_level(i)

    def obstacle_level(self, obs: ObstacleSpec, i: int) -> np.ndarray:
        t = float(self.grid.nodes[i])
        x = self.level(i)[:, None]
        if obs.kind == "ito":
            return obs.at(t, x, w=self.brownian_level(i)[:, None], t_origin=self.grid.t0)
        return obs.at(t, x)


def tree_backward(tree: TreeModel, gen: GeneratorSpec, xi_raw: np.ndarray, L: list,
                  stop: Optional[list] = None, stop_raw: Optional[list] = None,
                  reflect: bool = True, picard: int = 1, n_penalty: float = 0.0):
    """Backward induction on the lattice.

    ``stop[i]`` marks absorbing nodes (the horizon is stopped there) whose
    raw terminal values are ``stop_raw[i]``. Terminal and stopped values are
    reflected onto the barrier, with the push booked in ``dK``.
    """
    N = tree.n_steps
    dt = tree.grid.delta
    nodes = tree.grid.nodes
    Y = [None] * (N + 1)
    Z = [None] * N
    dK = [None] * (N + 1)
    if reflect:
        Y[N] = np.maximum(xi_raw, L[N])
        dK[N] = Y[N] - xi_raw
    else:
        Y[N] = np.array(xi_raw, dtype=float)
        dK[N] = np.zeros(N + 1)
    for i in range(N - 1, -1, -1):
        up, down = Y[i + 1][1:], Y[i + 1][:-1]
        E = 0.5 * (up + down)
        Zi = ((up - down) / (2.0 * tree.sqdt))[:, None]
        Li = L[i]
        Yt, pen = driver_step(gen, float(nodes[i]), E, Zi, dt, Li if reflect else None, picard,
                              n_penalty, Li)
        if reflect:
            Yi = np.maximum(Yt, Li)
            dKi = Yi - Yt
        else:
            Yi = Yt
            dKi = pen if pen is not None else np.zeros(i + 1)
        if stop is not None and stop[i] is not None and np.any(stop[i]):
            s = stop[i]
            Yi = np.where(s, np.maximum(stop_raw[i], Li) if reflect else stop_raw[i], Yi)
            dKi = np.where(s, np.maximum(Li - stop_raw[i], 0.0) if reflect else 0.0, dKi)
            Zi = np.where(s[:, None], 0.0, Zi)
        Y[i], Z[i], dK[i] = Yi, Zi, dKi
    return Y, Z, dK


def _tree_obstacle(tree: TreeModel, obs: ObstacleSpec) -> list:
    return [tree.obstacle_level(obs, i) for i in range(tree.n_steps + 1)]


def solve_tree(prob: RBSDEProblem, tree: TreeModel, picard: int = 1, reflect: bool = True,
               skorokhod_tol: float = 1e-6) -> DiscreteSolution:
    """Reflected backward induction on a recombining lattice.

    At level ``i``: ``E = (Y_up + Y_down)/2``, ``Z = (Y_up - Y_down)/(2 sqrt(dt))``
    (the coefficient of the Brownian increment), ``Ytilde = E + g dt``,
    ``Y = max(Ytilde, L)``, ``dK = Y - Ytilde``. With ``reflect=False`` this
    is the plain BSDE scheme.
    """
    L = _tree_obstacle(tree, prob.obs)
    xi = prob.terminal_values(tree.level(tree.n_steps)[:, None])
    if reflect:
        check_terminal(xi, L[-1])
    Y, Z, dK = tree_backward(tree, prob.gen, xi, L, reflect=reflect, picard=picard)
    flags = {"solver": "tree", "picard": picard, "reflect": reflect}
    if tree.sigma == 0:
        flags["degenerate_sigma"] = True
    sol = DiscreteSolution(tree.grid, Y, Z, dK, L, layout="tree", flags=flags)
    if reflect:
        assert_solution(sol, skorokhod_tol)
    return sol


def enumerate_snell(prob: RBSDEProblem, tree: TreeModel, max_depth: int = 12) -> float:
    """Optimal-stopping value by exhaustive recursion over every lattice path.

    Independent of :func:`solve_tree`: walks the full (non-recombining)
    binary tree of ``2**depth`` paths in plain Python floats and takes, at
    each prefix, the larger of stopping now and continuing.
    """
    N = tree.n_steps
    if N > max_depth:
        raise ConfigurationError(f"depth {N} exceeds the enumeration guard {max_depth}")
    rng = np.random.default_rng(0)
    ys = rng.uniform(-5, 5, 64)
    zs = rng.uniform(-5, 5, (64, prob.gen.d))
    if np.any(prob.gen(float(tree.grid.t0), ys, zs) != 0.0):
        raise PreconditionError("enumerate_snell requires the zero generator")
    h = float(np.sqrt(tree.grid.delta))
    nodes = [float(t) for t in tree.grid.nodes]

    def state(i, ups):
        w = (2 * ups - i) * h
        return tree.x0 + tree.b * (nodes[i] - nodes[0]) + tree.sigma * w, w

    def barrier(i, ups):
        x, w = state(i, ups)
        xa = np.array([[x]])
        if prob.obs.kind == "ito":
            return float(prob.obs.at(nodes[i], xa, w=np.array([[w]]), t_origin=nodes[0])[0])
        return float(prob.obs.at(nodes[i], xa)[0])

    def value(i, ups):
        if i == N:
            x, _ = state(i, ups)
            return float(prob.terminal_values(np.array([[x]]))[0])
        cont = 0.5 * (value(i + 1, ups + 1) + value(i + 1, ups))
        return max(barrier(i, ups), cont)

    return value(0, 0)


# ---------------------------------------------------------------------------
# least-squares Monte Carlo


@functools.lru_cache(maxsize=None)
def _monomial_exponents(n: int, degree: int) -> tuple:
    exps = []
    for deg in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), deg):
            e = [0] * n
            for k in combo:
                e[k] += 1
            exps.append(tuple(e))
    return tuple(exps)


def polynomial_basis(x: np.ndarray, degree: int) -> np.ndarray:
    """Monomials of total degree <= ``degree`` in the standardised columns of ``x``."""
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    u = (x - mean) / scale
    m, n = x.shape
    powers = np.empty((degree + 1, n, m))
    powers[0] = 1.0
    for p in range(1, degree + 1):
        powers[p] = powers[p - 1] * u.T
    exps = _monomial_exponents(n, degree)
    out = np.empty((m, len(exps)))
    for j, e in enumerate(exps):
        c = powers[e[0], 0].copy() if n else np.ones(m)
        for k in range(1, n):
            if e[k]:
                c *= powers[e[k], k]
        out[:, j] = c
    return out


def _degenerate(x: np.ndarray) -> bool:
    return bool(np.all(np.ptp(x, axis=0) <= 1e-14 * (1 + np.max(np.abs(x)))))


def _lstsq(A, y, rel_tol: float = 1e-11):
    """Least squares through column-scaled normal equations; returns ``(coef, full_rank)``."""
    G = A.T @ A
    norms = np.sqrt(np.diag(G))
    norms = np.where(norms > 0, norms, 1.0)
    G = G / np.outer(norms, norms)
    eig = np.linalg.eigvalsh(G)
    full = bool(eig[0] > rel_tol * eig[-1])
    if full:
        rhs = A.T @ y
        coef = np.linalg.solve(G, rhs / (norms if rhs.ndim == 1 else norms[:, None]))
    else:
        coef = np.linalg.lstsq(A / norms, y, rcond=None)[0]
    return coef / (norms if coef.ndim == 1 else norms[:, None]), full


@dataclass
class RegressionLog:
    fallbacks: list = field(default_factory=list)


def conditional_moments(x: np.ndarray, y_next: np.ndarray, dw: np.ndarray, dt: float,
                        degree: int, control: bool, log: RegressionLog, node: int,
                        extra: Optional[np.ndarray] = None):
    """Estimate ``E[y_next | x]`` and ``Z = E[y_next dW | x]/dt`` by least squares.

    With ``control`` both are read off one regression of ``y_next`` on
    ``[phi(x), phi(x) dW_k]``: the martingale part ``Z . dW`` is explained
    jointly instead of being left in the residual of ``E``. ``extra`` adds
    one more regressor column to ``phi`` (the barrier, for exercise rules).
    """
    deg = 0 if _degenerate(x) else degree
    d = dw.shape[1]
    while True:
        phi = polynomial_basis(x, deg)
        if extra is not None and deg > 0:
            phi = np.column_stack([phi, extra])
        k = phi.shape[1]
        if control:
            A = np.concatenate([phi] + [phi * dw[:, j:j + 1] for j in range(d)], axis=1)
            coef, ok = _lstsq(A, y_next)
            if ok or deg == 0:
                E = phi @ coef[:k]
                Z = np.column_stack([phi @ coef[k * (j + 1):k * (j + 2)] for j in range(d)])
                break
        else:
            a, ok = _lstsq(phi, y_next)
            if ok or deg == 0:
                E = phi @ a
                c, _ = _lstsq(phi, y_next[:, None] * dw / dt)
                Z = phi @ c
                break
        log.fallbacks.append((node, deg))
        deg -= 1
    return E, Z


LSMC_SCHEMES = ("one-step", "realized")


def lsmc_backward(bundle: PathBundle, gen: GeneratorSpec, xi_raw: np.ndarray, L: np.ndarray,
                  stop_idx: Optional[np.ndarray] = None, degree: int = 3, picard: int = 1,
                  control: bool = True, reflect: bool = True, n_penalty: float = 0.0,
                  scheme: str = "one-step"):
    """Backward regression scheme on simulated paths.

    ``stop_idx[p]`` is the horizon node of path ``p`` (default: last node);
    the path's value is frozen at its reflected terminal value afterwards, and
    the barrier is frozen at its stopped value.

    ``scheme="one-step"`` regresses the fitted values ``Y_{i+1}``.
    ``scheme="realized"`` regresses realised path values (Longstaff-Schwartz):
    each path carries the value of following the estimated exercise rule,
    and the exercise decision is fitted on the paths where the barrier is
    above its cross-sectional floor.
    """
    if scheme not in LSMC_SCHEMES:
        raise ConfigurationError(f"unknown LSMC scheme {scheme!r}")
    grid = bundle.grid
    P, N = bundle.n_paths, grid.n_steps
    d = bundle.d
    i0 = bundle.origin_idx
    if stop_idx is None:
        stop_idx = np.full(P, N, dtype=np.int64)
    rows = np.arange(P)
    after = np.arange(N + 1)[None, :] > stop_idx[:, None]
    L = np.where(after, L[rows, stop_idx][:, None], L)

    # node-major copies: every backward step reads one contiguous row
    Xn = np.ascontiguousarray(bundle.X.transpose(1, 0, 2))
    dWn = np.ascontiguousarray(bundle.dW.transpose(1, 0, 2))
    Ln = np.ascontiguousarray(L.T)
    Yn = np.empty((N + 1, P))
    Zn = np.zeros((N, P, d))
    dKn = np.zeros((N + 1, P))
    L_stop = L[rows, stop_idx]
    y_stop = np.maximum(xi_raw, L_stop) if reflect else np.asarray(xi_raw, dtype=float)
    if reflect:
        dKn[stop_idx, rows] = y_stop - xi_raw
    Yn[:] = np.where(np.arange(N + 1)[:, None] >= stop_idx[None, :], y_stop[None, :], np.nan)
    realized = y_stop.copy()
    mart = np.zeros(P)
    log = RegressionLog()
    nodes, dts = grid.nodes, grid.dt
    everyone = slice(None)
    for i in range(N - 1, i0 - 1, -1):
        act = stop_idx > i
        n_act = int(np.count_nonzero(act))
        if n_act == 0:
            continue
        if n_act == P:
            act = everyone
        x = Xn[i][act]
        dw = dWn[i][act]
        Li = Ln[i][act]
        if scheme == "one-step":
            target = Yn[i + 1][act]
        elif i == i0 and control:
            # pathwise martingale control: sum of Z dW up to each path's exercise
            target = realized[act] - mart[act]
        else:
            target = realized[act]
        E, Zi = conditional_moments(x, target, dw, dts[i], degree, control, log, i)
        Yt, pen = driver_step(gen, float(nodes[i]), E, Zi, dts[i], Li if reflect else None,
                              picard, n_penalty, Li)
        if reflect:
            Yi = np.maximum(Yt, Li)
            dKn[i][act] = Yi - Yt
        else:
            Yi = Yt
            if pen is not None:
                dKn[i][act] = pen
        Yn[i][act] = Yi
        Zn[i][act] = Zi
        if scheme == "realized":
            if reflect and i > i0:
                region = Li > Li.min()
                n_reg = int(region.sum())
                if 0 < n_reg < Li.size and n_reg >= 10 * (degree + 2):
                    E_r, Z_r = conditional_moments(x[region], target[region], dw[region], dts[i],
                                                   degree, control, log, i, extra=Li[region])
                    Yt_r, _ = driver_step(gen, float(nodes[i]), E_r, Z_r, dts[i], Li[region], picard)
                    exercise = np.zeros(Li.size, dtype=bool)
                    exercise[region] = Yt_r < Li[region]
                else:
                    exercise = Yt < Li
                cont = np.where(exercise, Li, target + (Yt - E))
                mart[act] = np.where(exercise, 0.0, mart[act] + np.einsum("pd,pd->p", Zi, dw))
            elif i == i0:
                cont = Yi
            else:
                cont = target + (Yi - E)
                mart[act] += np.einsum("pd,pd->p", Zi, dw)
            realized[act] = cont
    Yn[:i0] = Yn[i0]
    return Yn.T, Zn.transpose(1, 0, 2), dKn.T, L, log


def solve_lsmc(prob: RBSDEProblem, bundle: PathBundle, degree: int = 3, picard: int = 1,
               control: bool = True, reflect: bool = True, scheme: str = "one-step",
               skorokhod_tol: float = 1e-6) -> DiscreteSolution:
    """Discretely reflected least-squares Monte Carlo scheme.

    Parameters
    ----------
    prob : RBSDEProblem
        Generator, terminal map, barrier. ``bundle`` must be simulated under
        ``prob.coeffs`` on ``prob.grid``.
    bundle : PathBundle
    degree : int
        Total degree of the polynomial regression basis in ``X``.
    control : bool
        Estimate ``E`` and ``Z`` jointly (martingale control variate). With
        ``False`` the two regressions are run separately.
    scheme : {"one-step", "realized"}
        Regress fitted next-node values, or realised path values under the
        estimated exercise rule (lower bias for American-type barriers).

    Returns
    -------
    DiscreteSolution
        Path layout; ``flags["regression_fallbacks"]`` lists ``(node, degree)``
        for every rank-deficient regression that was retried at lower degree.
    """
    if bundle.n_paths < 10 * (degree + 1):
        raise ConfigurationError(f"need at least {10 * (degree + 1)} paths for degree {degree}")
    L = bundle.obstacle_values(prob.obs)
    xi = prob.terminal_values(bundle.X[:, -1])
    if reflect:
        check_terminal(xi, L[:, -1])
    Y, Z, dK, L, log = lsmc_backward(bundle, prob.gen, xi, L, None, degree, picard, control, reflect,
                                     scheme=scheme)
    flags = {"solver": "lsmc", "scheme": scheme, "degree": degree, "picard": picard,
             "control": control, "reflect": reflect, "regression_fallbacks": log.fallbacks}
    sol = DiscreteSolution(bundle.grid, Y, Z, dK, L, layout="paths", flags=flags)
    if reflect:
        assert_solution(sol, skorokhod_tol)
    return sol


def solve_lsmc_stopped(bundle: PathBundle, gen: GeneratorSpec, xi_raw: np.ndarray, L: np.ndarray,
                       stop_idx: np.ndarray, degree: int = 3, picard: int = 1, control: bool = True,
                       scheme: str = "one-step", skorokhod_tol: float = 1e-6) -> DiscreteSolution:
    """Reflected LSMC scheme with a per-path stopped horizon.

    ``xi_raw[p]`` is the raw terminal value at node ``stop_idx[p]``; it is
    reflected onto the barrier there and the push is booked in ``dK``.
    """
    stop_idx = np.asarray(stop_idx, dtype=np.int64)
    if stop_idx.shape != (bundle.n_paths,):
        raise ConfigurationError("stop_idx needs one node per path")
    if np.any(stop_idx <= bundle.origin_idx) or np.any(stop_idx > bundle.grid.n_steps):
        raise ConfigurationError("stop nodes must lie strictly after the origin")
    if bundle.n_paths < 10 * (degree + 1):
        raise ConfigurationError(f"need at least {10 * (degree + 1)} paths for degree {degree}")
    Y, Z, dK, Lf, log = lsmc_backward(bundle, gen, np.asarray(xi_raw, dtype=float), L, stop_idx, degree,
                                      picard, control, True, scheme=scheme)
    flags = {"solver": "lsmc", "scheme": scheme, "degree": degree, "picard": picard,
             "control": control, "reflect": True, "regression_fallbacks": log.fallbacks}
    sol = DiscreteSolution(bundle.grid, Y, Z, dK, Lf, layout="paths", stop_idx=stop_idx, flags=flags)
    assert_solution(sol, skorokhod_tol)
    return sol


def solve_tree_stopped(tree: TreeModel, gen: GeneratorSpec, xi_raw: np.ndarray, L: list,
                       stop: list, stop_raw: list, picard: int = 1,
                       skorokhod_tol: float = 1e-6) -> DiscreteSolution:
    """Reflected lattice scheme where ``stop[i]`` marks absorbing nodes.

    Stopped nodes take the reflected raw value ``max(stop_raw[i], L[i])``;
    expectations of ``K`` use the absorbed node probabilities.
    """
    Y, Z, dK = tree_backward(tree, gen, xi_raw, L, stop=stop, stop_raw=stop_raw, reflect=True,
                             picard=picard)
    sol = DiscreteSolution(tree.grid, Y, Z, dK, L, layout="tree", stop_idx=list(stop),
                           flags={"solver": "tree", "picard": picard, "reflect": True})
    assert_solution(sol, skorokhod_tol)
    return sol


# ---------------------------------------------------------------------------
# penalisation


def solve_penalized(prob: RBSDEProblem, backend, n_penalty: float, degree: int = 3,
                    picard: int = 1) -> DiscreteSolution:
    """Unreflected scheme with driver ``g + n_penalty (L - y)^+``.

    ``backend`` is a :class:`TreeModel` or a :class:`PathBundle`. ``dK`` holds
    the penalty increments ``n (L - Y)^+ dt``. The result may sit below the
    barrier (it approximates the minimal solution from below), so only the
    sign and monotonicity of ``K`` are asserted.
    """
    if n_penalty < 0:
        raise ConfigurationError("n_penalty must be >= 0")
    dt = float(np.max(backend.grid.dt))
    if n_penalty * dt >= 1.0:
        raise StabilityError(f"explicit penalty scheme unstable: n_penalty*dt = {n_penalty * dt:g} >= 1")
    if isinstance(backend, TreeModel):
        L = _tree_obstacle(backend, prob.obs)
        xi = prob.terminal_values(backend.level(backend.n_steps)[:, None])
        check_terminal(xi, L[-1])
        Y, Z, dK = tree_backward(backend, prob.gen, xi, L, reflect=False, picard=picard, n_penalty=n_penalty)
        sol = DiscreteSolution(backend.grid, Y, Z, dK, L, layout="tree",
                               flags={"solver": "penalized-tree", "n_penalty": n_penalty})
    elif isinstance(backend, PathBundle):
        L = backend.obstacle_values(prob.obs)
        xi = prob.terminal_values(backend.X[:, -1])
        check_terminal(xi, L[:, -1])
        Y, Z, dK, L, log = lsmc_backward(backend, prob.gen, xi, L, None, degree, picard, True,
                                         reflect=False, n_penalty=n_penalty)
        sol = DiscreteSolution(backend.grid, Y, Z, dK, L, layout="paths",
                               flags={"solver": "penalized-lsmc", "n_penalty": n_penalty,
                                      "regression_fallbacks": log.fallbacks})
    else:
        raise ConfigurationError("backend must be a TreeModel or a PathBundle")
    chk = check_solution(sol)
    if chk.min_dK < 0 or not chk.K_nondecreasing:
        raise SolutionInvariantError(f"penalty increments invalid: {chk}")
    sol.flags["min_obstacle_gap"] = chk.min_gap
    return sol


# ---------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class ComparisonResult:
    holds: bool
    worst_gap: float
    worst_node: tuple
    root_gap: float


def comparison_check(sol1: DiscreteSolution, sol2: DiscreteSolution, tol: float = 0.0) -> ComparisonResult:
    """Check ``Y1 >= Y2 - tol`` at every node (tree) or path-node (paths).

    Both solutions must live on the same lattice or the same simulated paths.
    """
    if sol1.layout != sol2.layout or sol1.grid.n_steps != sol2.grid.n_steps:
        raise ConfigurationError("solutions must share their grid and layout")
    worst, where = np.inf, (0, 0)
    for (i, Y1, _, _), (_, Y2, _, _) in zip(sol1.iter_levels(), sol2.iter_levels()):
        if Y1.shape != Y2.shape:
            raise ConfigurationError("solutions must share paths / lattice nodes")
        gap = Y1 - Y2
        ok = np.isfinite(gap)
        if not np.any(ok):
            continue
        k = int(np.argmin(np.where(ok, gap, np.inf)))
        if gap[k] < worst:
            worst, where = float(gap[k]), (i, k)
    return ComparisonResult(bool(worst >= -tol), worst, where, sol1.y0 - sol2.y0)


def pointwise_ordered(gen1: GeneratorSpec, gen2: GeneratorSpec, n_samples: int = 512, seed: int = 0,
                      box: float = 10.0, t_range=(0.0, 1.0), y_min: Optional[float] = None) -> bool:
    """Sampled check ``g1 >= g2``; restricted to ``y >= y_min`` when given."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(*t_range, n_samples)
    lo = -box if y_min is None else y_min
    y = rng.uniform(lo, lo + 2 * box, n_samples)
    z = rng.uniform(-box, box, (n_samples, gen1.d))
    return all(gen1(t[k], y[k:k + 1], z[k:k + 1])[0] >= gen2(t[k], y[k:k + 1], z[k:k + 1])[0]
               for k in range(n_samples))
