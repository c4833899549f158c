"""Short-horizon difference quotients and their limit as the horizon shrinks.

At a deterministic point ``(t, x)`` with value ``eta > L(t, x)`` and
direction ``q``, the reflected equation with terminal time ``t + eps ^ tau``
and terminal value ``eta + q.(X_{t + eps ^ tau} - x)`` is solved for a
decreasing schedule of horizons ``eps``. Here ``tau`` is the first time the
candidate value ``eta + q.(X - x)`` falls to the barrier. The quotient

    (Y_t - eta - E[K_{t + eps ^ tau} - K_t]) / eps

is compared with ``g(t, eta, sigma(t, x)^T q) + q.b(t, x)``.

Monte Carlo runs use common random numbers: for each seed one Brownian
sample is drawn on a fine grid of step ``eps_min / n_sub`` and every horizon
coarsens a prefix of it to its own ``n_sub``-step grid.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (ConfigurationError, GeneratorSpec, ObstacleSpec, PreconditionError, SDECoeffs,
                   SolutionInvariantError, TimeGrid)
from .pathsim import _CHUNK_PATHS, PathBundle, euler_maruyama, hitting_time_index, standard_normals
from .solvers import TreeModel, solve_lsmc_stopped, solve_tree_stopped

DEFAULT_EPS_FACTORS = (0.2, 0.1, 0.05, 0.025, 0.0125)
BACKENDS = ("lsmc", "tree")
VERDICTS = ("converged", "inconclusive", "failed")


def barrier_at_origin(obs: ObstacleSpec, t: float, x) -> float:
    """Barrier value at the evaluation point; Itô barriers start at ``L0`` there."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if obs.kind == "ito":
        return float(obs.L0)
    return float(obs.at(t, x[None, :])[0])


def representation_target(gen: GeneratorSpec, coeffs: SDECoeffs, t: float, x, eta: float, q) -> float:
    """``g(t, eta, sigma(t,x)^T q) + q.b(t,x)`` by direct evaluation."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    z = coeffs.sigma_at(t, x).T @ q
    return gen.scalar(t, eta, z) + float(q @ coeffs.drift_at(t, x))


@dataclass(frozen=True)
class RepresentationInstance:
    """One evaluation point of the representation limit.

    Parameters
    ----------
    gen, coeffs, obs
        Generator, forward SDE and barrier.
    t, x, eta, q
        Evaluation time and state, value ``eta > L(t, x)`` and direction ``q``.
    T : float
        Horizon of the underlying problem; every ``eps`` is at most ``T - t``.
    epsilons : tuple, optional
        Strictly decreasing schedule; each entry must be an integer multiple of
        the smallest. Defaults to ``DEFAULT_EPS_FACTORS * (T - t)``.
    p_norm : float
        Exponent of the error norm across seed replicates, ``1 <= p < 2``.
    backend : {"lsmc", "tree"}
        The tree needs a 1-d state with constant coefficients and is noiseless.
    n_paths, seed, n_seeds
        Monte Carlo size; replicate ``r`` uses Philox key ``seed + r``.
    n_sub : int
        Steps of each horizon's own grid.
    abs_tol : float, optional
        Convergence tolerance, default ``0.02 (1 + |target|)``.
    stop_cap : int, optional
        Replace the hitting node by ``min(tau, stop_cap)`` on every horizon grid
        (an earlier stopping time).
    stop_level : float, optional
        Constant used instead of the barrier when locating ``tau``.
    terminal_floor : float, optional
        Floor applied to the raw terminal value (with ``stop_level`` this
        builds the bounded-barrier construction).
    """

    gen: GeneratorSpec
    coeffs: SDECoeffs
    obs: ObstacleSpec
    t: float
    x: tuple
    eta: float
    q: tuple
    T: float = 1.0
    epsilons: Optional[tuple] = None
    p_norm: float = 1.0
    backend: str = "lsmc"
    n_paths: int = 100_000
    seed: int = 0
    n_seeds: int = 8
    n_sub: int = 20
    degree: int = 3
    picard: int = 1
    abs_tol: Optional[float] = None
    stop_cap: Optional[int] = None
    stop_level: Optional[float] = None
    terminal_floor: Optional[float] = None
    noise_sigmas: float = 3.0
    monotone_slack: float = 0.25

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        q = tuple(float(v) for v in np.atleast_1d(self.q))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "q", q)
        n = self.coeffs.n
        if len(x) != n or len(q) != n:
            raise ConfigurationError(f"x and q must have dimension {n}")
        if self.gen.d != self.coeffs.d:
            raise ConfigurationError("generator and SDE disagree on the Brownian dimension")
        if not 0 <= self.t < self.T:
            raise ConfigurationError("need 0 <= t < T")
        if not 1.0 <= self.p_norm < 2.0:
            raise ConfigurationError("p_norm must lie in [1, 2)")
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if self.backend == "tree" and not (n == 1 and self.coeffs.d == 1):
            raise ConfigurationError("the tree backend needs a 1-d state")
        if self.n_sub < 1 or self.n_seeds < 1 or self.n_paths < 1:
            raise ConfigurationError("n_sub, n_seeds and n_paths must be positive")
        if self.stop_cap is not None and not 1 <= self.stop_cap <= self.n_sub:
            raise ConfigurationError("stop_cap must be a node of the horizon grid (1..n_sub)")
        eps = self.epsilons
        if eps is None:
            eps = tuple(f * (self.T - self.t) for f in DEFAULT_EPS_FACTORS)
        eps = tuple(float(e) for e in eps)
        object.__setattr__(self, "epsilons", eps)
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("epsilon schedule must be positive and strictly decreasing")
        if eps[0] > self.T - self.t + 1e-12:
            raise ConfigurationError("largest epsilon exceeds T - t")
        ratios = np.array(eps) / eps[-1]
        if np.any(np.abs(ratios - np.round(ratios)) > 1e-9 * ratios):
            raise ConfigurationError("every epsilon must be an integer multiple of the smallest")
        L0 = barrier_at_origin(self.obs, self.t, x)
        if not self.eta > L0:
            raise PreconditionError(f"eta={self.eta} must exceed the barrier {L0} at (t, x)")
        if self.stop_level is not None and not self.eta > self.stop_level:
            raise PreconditionError(f"eta={self.eta} must exceed the stopping level {self.stop_level}")

    @property
    def target(self) -> float:
        return representation_target(self.gen, self.coeffs, self.t, self.x, self.eta, self.q)

    @property
    def tolerance(self) -> float:
        return self.abs_tol if self.abs_tol is not None else 0.02 * (1.0 + abs(self.target))

    @property
    def multiples(self) -> list:
        return [int(round(e / self.epsilons[-1])) for e in self.epsilons]

    @property
    def seeds(self) -> list:
        if self.backend == "tree":
            return [self.seed]
        return [self.seed + r for r in range(self.n_seeds)]

    def with_(self, **changes) -> "RepresentationInstance":
        return replace(self, **changes)

    def describe(self) -> dict:
        return {
            "generator": self.gen.name, "formula": self.gen.formula, "obstacle": self.obs.name,
            "t": self.t, "x": list(self.x), "eta": self.eta, "q": list(self.q), "T": self.T,
            "epsilons": list(self.epsilons), "p_norm": self.p_norm, "backend": self.backend,
            "n_paths": self.n_paths, "seeds": self.seeds, "n_sub": self.n_sub, "degree": self.degree,
            "picard": self.picard, "abs_tol": self.tolerance, "stop_cap": self.stop_cap,
            "stop_level": self.stop_level, "terminal_floor": self.terminal_floor,
            "noise_sigmas": self.noise_sigmas, "monotone_slack": self.monotone_slack,
        }


# ---------------------------------------------------------------------------
# terminal values and Brownian samples


def short_horizon_terminal(bundle: PathBundle, eta_t: float, q, tau_idx: np.ndarray, eps_idx: int,
                           L_values: Optional[np.ndarray] = None, obs: Optional[ObstacleSpec] = None):
    """Raw terminal values ``eta_t + q.(X_{min(eps_idx, tau_idx)} - x)`` and stop nodes.

    The stopped candidate dominates the barrier at every node strictly before
    its stop node, and at the stop node itself unless the stop is a barrier
    hit (where grid overshoot is allowed and later reflected). A violation
    raises :class:`SolutionInvariantError`.

    Returns
    -------
    xi : ndarray (P,)
    stop_idx : ndarray (P,)
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    tau_idx = np.asarray(tau_idx, dtype=np.int64)
    stop = np.minimum(tau_idx, eps_idx)
    rows = np.arange(bundle.n_paths)
    cand = eta_t + (bundle.X - bundle.origin_x) @ q
    xi = cand[rows, stop]
    if L_values is None and obs is not None:
        L_values = bundle.obstacle_values(obs)
    if L_values is not None:
        i0 = bundle.origin_idx
        nodes = np.arange(bundle.grid.n_steps + 1)[None, :]
        before = (nodes >= i0) & (nodes < stop[:, None])
        at_free_stop = (nodes == stop[:, None]) & (stop[:, None] < tau_idx[:, None])
        gap = np.where(before | at_free_stop, cand - L_values, np.inf)
        if np.min(gap) < 0:
            p, i = np.unravel_index(int(np.argmin(gap)), gap.shape)
            raise SolutionInvariantError(f"stopped candidate below the barrier at path {p}, node {i}; "
                                         f"refine the grid near the barrier")
    return xi, stop


def crn_increments(seed: int, n_paths: int, d: int, eps_min: float, n_sub: int, multiples) -> list:
    """Brownian increments on each horizon grid, sharing one fine sample.

    The fine grid has step ``eps_min / n_sub`` and ``n_sub * max(multiples)``
    steps. Horizon ``k`` sums the first ``n_sub * multiples[k]`` fine
    increments in groups of ``multiples[k]``. The fine sample equals
    ``simulate_brownian`` on the fine grid with the same seed.
    """
    n_fine = n_sub * max(multiples)
    scale = np.sqrt(eps_min / n_sub)
    out = [np.empty((n_paths, n_sub, d)) for _ in multiples]
    for c0 in range(0, n_paths, _CHUNK_PATHS):
        c1 = min(n_paths, c0 + _CHUNK_PATHS)
        fine = standard_normals(seed, c0, c1 - c0, n_fine, d) * scale
        for k, m in enumerate(multiples):
            out[k][c0:c1] = fine[:, : n_sub * m].reshape(c1 - c0, n_sub, m, d).sum(axis=2)
    return out


# ---------------------------------------------------------------------------
# one quotient


@dataclass(frozen=True)
class QuotientEstimate:
    """Quotient at one horizon (one seed).

    ``estimate`` includes the ``K`` correction, ``estimate_no_k`` drops it.
    ``stderr`` is the path-sampling standard error (0 on the tree).
    """

    eps: float
    estimate: float
    estimate_no_k: float
    stderr: float
    y_origin: float
    k_mean: float
    tau_fraction: float
    min_y: float
    max_dK_interior: float


def _horizon_grid(inst: RepresentationInstance, eps: float) -> TimeGrid:
    return TimeGrid.uniform_grid(inst.t, inst.t + eps, inst.n_sub)


def _quotient_lsmc(inst: RepresentationInstance, eps: float, dW: np.ndarray, seed: int,
                   keep: bool = False):
    grid = _horizon_grid(inst, eps)
    x = np.array(inst.x)
    q = np.array(inst.q)
    bundle = euler_maruyama(inst.coeffs, (inst.t, x), grid, dW, seed)
    L = bundle.obstacle_values(inst.obs)
    level = L if inst.stop_level is None else np.full_like(L, inst.stop_level)
    tau = hitting_time_index(bundle, inst.eta, q, inst.obs, level)
    if inst.stop_cap is not None:
        tau = np.minimum(tau, inst.stop_cap)
    N = grid.n_steps
    xi, stop = short_horizon_terminal(bundle, inst.eta, q, tau, N, level)
    if inst.terminal_floor is not None:
        xi = np.maximum(xi, inst.terminal_floor)
    sol = solve_lsmc_stopped(bundle, inst.gen, xi, L, stop, inst.degree, inst.picard)
    P = bundle.n_paths
    k_path = sol.dK.sum(axis=1)
    y0 = sol.y0
    # pathwise value xi + sum g dt - sum Z dW: its mean is Y_t - E[K], its spread the noise
    value = xi.copy()
    dts = grid.dt
    for i in range(N):
        live = stop > i
        if not np.any(live):
            break
        g = inst.gen(float(grid.nodes[i]), sol.Y[live, i], sol.Z[live, i])
        value[live] += g * dts[i] - np.einsum("pd,pd->p", sol.Z[live, i], dW[live, i])
    stderr = float(np.std(value, ddof=1) / np.sqrt(P)) / eps if P > 1 else float("nan")
    k_mean = float(np.mean(k_path))
    before_stop = np.arange(N + 1)[None, :] < stop[:, None]
    interior = float(np.max(sol.dK[before_stop], initial=0.0))
    est = QuotientEstimate(eps, (y0 - inst.eta - k_mean) / eps, (y0 - inst.eta) / eps, stderr, y0, k_mean,
                           float(np.mean(stop < N)), float(np.min(sol.Y)), interior)
    return (est, sol) if keep else est


def _quotient_tree(inst: RepresentationInstance, eps: float, keep: bool = False):
    grid = _horizon_grid(inst, eps)
    tree = TreeModel.from_coeffs(inst.coeffs, inst.x[0], grid)
    q = inst.q[0]
    N = grid.n_steps
    L = [tree.obstacle_level(inst.obs, i) for i in range(N + 1)]
    cand = [inst.eta + q * (tree.level(i) - inst.x[0]) for i in range(N + 1)]
    stop = [None] * (N + 1)
    for i in range(1, N):
        level = L[i] if inst.stop_level is None else inst.stop_level
        mask = cand[i] <= level
        if inst.stop_cap is not None and i >= inst.stop_cap:
            mask = np.ones(i + 1, dtype=bool)
        stop[i] = mask
    raw = [c if inst.terminal_floor is None else np.maximum(c, inst.terminal_floor) for c in cand]
    sol = solve_tree_stopped(tree, inst.gen, raw[N], L, stop, raw, inst.picard)
    probs = sol.level_probabilities()
    k_mean = sol.K_total
    y0 = sol.y0
    reached_end = float(probs[N].sum())
    stopped_push = 0.0
    for i in range(1, N):
        if stop[i] is not None:
            stopped_push = max(stopped_push, float(np.max(np.where(stop[i], 0.0, sol.dK[i]))))
    reach = [p > 0 for p in probs]
    min_y = min(float(np.min(y[r])) for y, r in zip(sol.Y, reach) if np.any(r))
    est = QuotientEstimate(eps, (y0 - inst.eta - k_mean) / eps, (y0 - inst.eta) / eps, 0.0, y0, k_mean,
                           1.0 - reached_end, min_y, stopped_push)
    return (est, sol) if keep else est


def difference_quotient(inst: RepresentationInstance, eps: float, seed: Optional[int] = None) -> QuotientEstimate:
    """Quotient at horizon ``eps`` (a schedule entry) for one seed.

    The Brownian sample is the same one :func:`representation_sweep` uses
    for this seed, so the result matches the corresponding sweep replicate.
    """
    return short_horizon_solution(inst, eps, seed)[0]


def short_horizon_solution(inst: RepresentationInstance, eps: float, seed: Optional[int] = None):
    """``(QuotientEstimate, DiscreteSolution)`` of the stopped problem at horizon ``eps``."""
    k = _schedule_index(inst, eps)
    try:
        if inst.backend == "tree":
            return _quotient_tree(inst, inst.epsilons[k], keep=True)
        seed = inst.seed if seed is None else int(seed)
        # the per-path stream block depends on the fine length, so draw the full sample
        dW = crn_increments(seed, inst.n_paths, inst.coeffs.d, inst.epsilons[-1], inst.n_sub,
                            inst.multiples)[k]
        return _quotient_lsmc(inst, inst.epsilons[k], dW, seed, keep=True)
    except (SolutionInvariantError, ConfigurationError, PreconditionError) as exc:
        raise type(exc)(f"eps={eps:g}: {exc}") from exc


def _schedule_index(inst: RepresentationInstance, eps: float) -> int:
    for k, e in enumerate(inst.epsilons):
        if abs(e - eps) <= 1e-12 * max(1.0, e):
            return k
    raise ConfigurationError(f"eps={eps} is not in the schedule {inst.epsilons}")


# ---------------------------------------------------------------------------
# sweep and verdict


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    estimate: float
    estimate_no_k: float
    target: float
    abs_error: float
    abs_error_no_k: float
    stderr: float
    stderr_no_k: float
    tau_truncated_fraction: float
    k_over_eps: float
    min_y: float
    per_seed: tuple


CSV_COLUMNS = ("epsilon", "estimate", "target", "abs_error", "stderr", "tau_truncated_fraction",
               "estimate_no_k", "abs_error_no_k", "k_over_eps")


@dataclass
class RepresentationReport:
    """Result of a sweep over the horizon schedule.

    ``verdict`` judges the quotient with the ``K`` correction and
    ``verdict_no_k`` the quotient without it.
    """

    target: float
    abs_tol: float
    rows: list
    verdict: str
    verdict_no_k: str
    richardson: Optional[float]
    slope: Optional[float]
    instance: dict = field(default_factory=dict)

    @property
    def final(self) -> SweepRow:
        return self.rows[-1]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([repr(float(getattr(r, c))) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "abs_tol": self.abs_tol,
            "verdict": self.verdict,
            "verdict_no_k": self.verdict_no_k,
            "richardson_limit": self.richardson,
            "loglog_slope": self.slope,
            "rows": [dict(asdict(r), per_seed=list(r.per_seed)) for r in self.rows],
            "instance": self.instance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)


def lp_error(values, target: float, p: float) -> float:
    v = np.abs(np.asarray(values, dtype=float) - target)
    return float(np.mean(v ** p) ** (1.0 / p))


def convergence_verdict(errors, stderrs, abs_tol: float, sigmas: float = 3.0,
                        slack: float = 0.25) -> str:
    """``converged`` / ``inconclusive`` / ``failed`` for an error sequence.

    Converged: the last error is within ``abs_tol + sigmas * stderr`` and the
    errors over the final three horizons never grow by more than
    ``sigmas`` combined standard errors plus ``slack * abs_tol``.
    Inconclusive: the noise band ``sigmas * stderr`` at the last horizon
    already exceeds ``abs_tol``.
    """
    e = np.asarray(errors, dtype=float)
    s = np.asarray(stderrs, dtype=float)
    if not np.all(np.isfinite(e)):
        return "failed"
    if sigmas * s[-1] > abs_tol:
        return "inconclusive"
    ok_last = e[-1] <= abs_tol + sigmas * s[-1]
    tail = slice(max(0, e.size - 3), e.size)
    et, st = e[tail], s[tail]
    grow = et[1:] - et[:-1]
    band = sigmas * np.sqrt(st[1:] ** 2 + st[:-1] ** 2) + slack * abs_tol
    return "converged" if ok_last and bool(np.all(grow <= band)) else "failed"


def richardson_limit(eps, estimates) -> Optional[float]:
    """Linear-in-eps extrapolation from the two smallest horizons."""
    if len(eps) < 2:
        return None
    e1, e0 = eps[-1], eps[-2]
    y1, y0 = estimates[-1], estimates[-2]
    return float(y1 + (y1 - y0) * e1 / (e0 - e1))


def loglog_slope(eps, errors, floor: float = 1e-9) -> Optional[float]:
    """Fitted slope of log error against log eps; ``None`` when errors sit at roundoff."""
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(errors, dtype=float)
    keep = err > floor
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.log(eps[keep]), np.log(err[keep]), 1)[0])


def _replicates(inst: RepresentationInstance) -> list:
    """``out[k][r]``: quotient at horizon ``k`` for seed replicate ``r``."""
    out = [[] for _ in inst.epsilons]
    if inst.backend == "tree":
        for k, eps in enumerate(inst.epsilons):
            out[k].append(_quotient_tree(inst, eps))
        return out
    for seed in inst.seeds:
        incs = crn_increments(seed, inst.n_paths, inst.coeffs.d, inst.epsilons[-1], inst.n_sub,
                              inst.multiples)
        for k, eps in enumerate(inst.epsilons):
            try:
                out[k].append(_quotient_lsmc(inst, eps, incs[k], seed))
            except (SolutionInvariantError, ConfigurationError, PreconditionError) as exc:
                raise type(exc)(f"eps={eps:g}, seed={seed}: {exc}") from exc
    return out


def _spread(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0


def summarize(inst: RepresentationInstance, reps: list) -> RepresentationReport:
    target = inst.target
    p = inst.p_norm
    rows = []
    for eps, qs in zip(inst.epsilons, reps):
        est = [qe.estimate for qe in qs]
        est_nk = [qe.estimate_no_k for qe in qs]
        if len(qs) > 1:
            se, se_nk = _spread(est), _spread(est_nk)
        else:
            se = se_nk = qs[0].stderr
        rows.append(SweepRow(
            epsilon=eps, estimate=float(np.mean(est)), estimate_no_k=float(np.mean(est_nk)), target=target,
            abs_error=lp_error(est, target, p), abs_error_no_k=lp_error(est_nk, target, p),
            stderr=se, stderr_no_k=se_nk,
            tau_truncated_fraction=float(np.mean([qe.tau_fraction for qe in qs])),
            k_over_eps=float(np.mean([qe.k_mean for qe in qs])) / eps,
            min_y=float(min(qe.min_y for qe in qs)),
            per_seed=tuple(float(v) for v in est)))
    tol = inst.tolerance
    eps = [r.epsilon for r in rows]
    verdict = convergence_verdict([r.abs_error for r in rows], [r.stderr for r in rows], tol,
                                  inst.noise_sigmas, inst.monotone_slack)
    verdict_nk = convergence_verdict([r.abs_error_no_k for r in rows], [r.stderr_no_k for r in rows], tol,
                                     inst.noise_sigmas, inst.monotone_slack)
    return RepresentationReport(target, tol, rows, verdict, verdict_nk,
                                richardson_limit(eps, [r.estimate for r in rows]),
                                loglog_slope(eps, [r.abs_error for r in rows]), inst.describe())


def representation_sweep(inst: RepresentationInstance) -> RepresentationReport:
    """Run the quotient over the whole schedule and judge convergence.

    Rows are ordered by decreasing ``eps``; Monte Carlo rows average the
    seed replicates, with the L^p error taken across replicates and the
    standard error from their spread.
    """
    return summarize(inst, _replicates(inst))


# ---------------------------------------------------------------------------
# special barrier shapes


@dataclass
class CorollaryReport:
    name: str
    passed: bool
    sweep: RepresentationReport
    checks: dict

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "checks": self.checks, "sweep": self.sweep.to_dict()}


def _ito_condition_gap(inst: RepresentationInstance, n_check_paths: int = 2000) -> float:
    """Smallest sampled ``g(s, L_s, V_s) + U_s`` along barrier paths over the longest horizon."""
    obs = inst.obs
    P = min(n_check_paths, inst.n_paths)
    eps = inst.epsilons[0]
    n = inst.n_sub * inst.multiples[0]
    grid = TimeGrid.uniform_grid(inst.t, inst.t + eps, n)
    dW = standard_normals(inst.seed, 0, P, n, inst.coeffs.d) * np.sqrt(grid.delta)
    bundle = euler_maruyama(inst.coeffs, (inst.t, np.array(inst.x)), grid, dW, inst.seed)
    L = bundle.obstacle_values(obs)
    worst = np.inf
    for i, s in enumerate(grid.nodes):
        V = np.broadcast_to(np.atleast_1d(obs.V(s)), (P, inst.coeffs.d))
        val = inst.gen(float(s), L[:, i], V) + float(obs.U(s))
        worst = min(worst, float(np.min(val)))
    return worst


def corollary32_check(inst: RepresentationInstance, k_rel_tol: float = 0.01,
                      n_check_paths: int = 2000) -> CorollaryReport:
    """Itô-form barrier with ``g(t, L_t, V_t) + U_t >= 0``: ``K`` vanishes.

    Raises
    ------
    PreconditionError
        If the barrier is not Itô-form or the sampled condition fails.
    """
    if inst.obs.kind != "ito":
        raise PreconditionError("this check needs an Itô-form barrier")
    gap = _ito_condition_gap(inst, n_check_paths)
    if gap < 0:
        raise PreconditionError(f"sampled g(t, L, V) + U reaches {gap:g} < 0")
    rep = representation_sweep(inst)
    k_ratio = rep.final.k_over_eps
    k_bound = k_rel_tol * (1.0 + abs(rep.target))
    checks = {"min_condition": gap, "k_over_eps_final": k_ratio, "k_bound": k_bound,
              "k_vanishes": k_ratio <= k_bound, "simplified_verdict": rep.verdict_no_k,
              "verdict": rep.verdict}
    passed = checks["k_vanishes"] and rep.verdict_no_k == "converged" and rep.verdict == "converged"
    return CorollaryReport("ito-barrier", passed, rep, checks)


def corollary33_check(inst: RepresentationInstance, C: Optional[float] = None, k_rel_tol: float = 0.01,
                      y_tol: float = 1e-3) -> CorollaryReport:
    """Barrier bounded by ``C`` and ``g(t, y, 0) = 0``: ``Y >= C`` and ``K`` vanishes.

    The hitting time uses the level ``C`` and the raw terminal value is
    floored at ``C`` (``y + q.(X_{s ^ tau} - x) >= C`` on continuous paths).
    """
    C = inst.obs.upper_bound if C is None else float(C)
    if C is None:
        raise PreconditionError("the barrier needs a declared upper bound C")
    if not inst.gen.satisfies_a3:
        raise PreconditionError("the generator must satisfy g(t, y, 0) = 0")
    if not inst.eta > C:
        raise PreconditionError(f"eta={inst.eta} must exceed C={C}")
    inst = inst.with_(stop_level=C, terminal_floor=C)
    rep = representation_sweep(inst)
    min_y = min(r.min_y for r in rep.rows)
    k_ratio = rep.final.k_over_eps
    k_bound = k_rel_tol * (1.0 + abs(rep.target))
    checks = {"C": C, "min_y": min_y, "y_above_C": min_y >= C - y_tol * (1.0 + abs(C)),
              "k_over_eps_final": k_ratio, "k_bound": k_bound, "k_vanishes": k_ratio <= k_bound,
              "simplified_verdict": rep.verdict_no_k, "verdict": rep.verdict}
    passed = checks["y_above_C"] and checks["k_vanishes"] and rep.verdict_no_k == "converged"
    return CorollaryReport("bounded-barrier", passed, rep, checks)


def corollary34_config(gen: GeneratorSpec, z, eta: float, obs: ObstacleSpec, t: float = 0.0,
                       T: float = 1.0, **options) -> RepresentationInstance:
    """Preset ``n = d``, ``b = 0``, ``sigma = I``, ``x = 0``, ``q = z``.

    The target reduces to ``g(t, eta, z)`` and the terminal value to
    ``eta + z.(B_{t + eps ^ tau} - B_t)``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    d = z.size
    if gen.d != d:
        raise ConfigurationError(f"generator dimension {gen.d} differs from len(z) = {d}")
    return RepresentationInstance(gen, SDECoeffs.brownian(d), obs, t, tuple(np.zeros(d)), eta, tuple(z),
                                  T=T, **options)
