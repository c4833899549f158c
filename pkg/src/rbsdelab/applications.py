"""Structural consequences of the representation limit, run as experiments.

* converse comparison: order two generators from their estimated limits
* self-financing, zero-interest and flatness biconditionals on the lattice
* the a priori estimate ``E[sup|Y|^2 + int|Z|^2 + |K|^2] <= C E[|Y_tau|^2 + (int gamma)^2 + sup (L^+)^2]``

Every biconditional is checked in both directions: the generator condition
is sampled directly, the solution condition is read off a lattice solve, and
the converse direction goes through short-horizon representation probes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (ConfigurationError, DiscreteSolution, GeneratorSpec, ObstacleSpec, PreconditionError,
                   TimeGrid)
from .representation import (RepresentationInstance, _replicates, barrier_at_origin, corollary34_config,
                             short_horizon_solution, summarize)
from .solvers import RBSDEProblem, TreeModel, comparison_check, pointwise_ordered, solve_tree


def _brownian_tree(grid: TimeGrid) -> TreeModel:
    return TreeModel(grid, 0.0, 0.0, 1.0)


def _constant_terminal(value: float):
    def xi(x):
        return np.full(np.shape(x)[:-1], float(value))

    return xi


# ---------------------------------------------------------------------------
# converse comparison


@dataclass
class ProbeResult:
    t: float
    eta: float
    z: tuple
    status: str
    limit1: Optional[float] = None
    limit2: Optional[float] = None
    difference: Optional[float] = None
    margin: Optional[float] = None
    forward_ordered: Optional[bool] = None
    forward_worst_gap: Optional[float] = None
    k_ordered: Optional[bool] = None
    message: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__, z=list(self.z))


@dataclass
class ConverseReport:
    verdict: str
    probes: list
    consistent: bool
    whole_space_ordered: bool
    region_ordered: Optional[bool]

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "consistent": self.consistent,
                "whole_space_ordered": self.whole_space_ordered, "region_ordered": self.region_ordered,
                "probes": [p.to_dict() for p in self.probes]}


def converse_comparison(gen1: GeneratorSpec, gen2: GeneratorSpec, obs: ObstacleSpec, probes: Sequence,
                        T: float = 1.0, noise_sigmas: float = 3.0, margin_floor: float = 1e-9,
                        forward_tol: Optional[float] = None, **options) -> ConverseReport:
    """Estimate ``g1 - g2`` at each probe ``(t, eta, z)`` from the two limits.

    Both generators run on the Brownian preset with the same seeds, so the
    per-seed differences are paired. The noise margin is ``noise_sigmas``
    standard errors of the paired difference (at least ``margin_floor``).
    The forward direction solves the two stopped problems at the smallest
    horizon on shared paths and checks ``Y1 >= Y2`` node-wise and
    ``E[K1] <= E[K2]``. Probes with ``eta`` not above the barrier are
    recorded as rejected.
    """
    results = []
    for t, eta, z in probes:
        z = tuple(float(v) for v in np.atleast_1d(z))
        try:
            inst1 = corollary34_config(gen1, z, eta, obs, t=t, T=T, **options)
            inst2 = corollary34_config(gen2, z, eta, obs, t=t, T=T, **options)
        except PreconditionError as exc:
            results.append(ProbeResult(float(t), float(eta), z, "rejected", message=str(exc)))
            continue
        rep1 = summarize(inst1, _replicates(inst1))
        rep2 = summarize(inst2, _replicates(inst2))
        d1 = np.array(rep1.final.per_seed)
        d2 = np.array(rep2.final.per_seed)
        diff = d1 - d2
        se = float(np.std(diff, ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
        margin = max(noise_sigmas * se, margin_floor)
        eps = inst1.epsilons[-1]
        q1, s1 = short_horizon_solution(inst1, eps)
        q2, s2 = short_horizon_solution(inst2, eps)
        tol = forward_tol if forward_tol is not None else (0.0 if inst1.backend == "tree" else 1e-8)
        fwd = comparison_check(s1, s2, tol)
        status = "ok"
        if "inconclusive" in (rep1.verdict, rep2.verdict):
            status = "inconclusive"
        results.append(ProbeResult(float(t), float(eta), z, status, rep1.final.estimate, rep2.final.estimate,
                                   float(np.mean(diff)), margin, fwd.holds, fwd.worst_gap,
                                   bool(q1.k_mean <= q2.k_mean + tol)))
    used = [p for p in results if p.status == "ok"]
    if not used:
        verdict = "inconclusive"
    elif all(abs(p.difference) <= p.margin for p in used):
        verdict = "equal"
    elif all(p.difference >= -p.margin for p in used):
        verdict = "g1 >= g2 on probed region"
    elif all(p.difference <= p.margin for p in used):
        verdict = "g1 <= g2 on probed region"
    else:
        verdict = "not ordered"
    # forward ordering of solutions must come with ordered limits
    consistent = all(p.difference >= -p.margin for p in used if p.forward_ordered and p.k_ordered)
    floor = obs.upper_bound
    region = pointwise_ordered(gen1, gen2, y_min=floor) if floor is not None else None
    return ConverseReport(verdict, results, consistent, pointwise_ordered(gen1, gen2), region)


# ---------------------------------------------------------------------------
# biconditionals


@dataclass
class PropositionReport:
    """Both sides of a biconditional and the probes used for the converse.

    ``statement_i`` is the generator condition, ``statement_ii`` the solution
    condition. ``consistent`` means both sides and the probes agree.
    """

    name: str
    statement_i: bool
    statement_ii: bool
    probes_vanish: Optional[bool]
    max_generator_value: float
    max_deviation: float
    probe_limits: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.statement_i and self.statement_ii

    @property
    def consistent(self) -> bool:
        agree = self.statement_i == self.statement_ii
        if self.probes_vanish is not None:
            agree = agree and self.probes_vanish == self.statement_ii
        return agree

    def to_dict(self) -> dict:
        return {"name": self.name, "statement_i": self.statement_i, "statement_ii": self.statement_ii,
                "probes_vanish": self.probes_vanish, "holds": self.holds, "consistent": self.consistent,
                "max_generator_value": self.max_generator_value, "max_deviation": self.max_deviation,
                "probe_limits": self.probe_limits, "details": self.details}


def _probe_limits(gen, obs, eta, times, T, probe_tol: float = 0.02, **options) -> list:
    """Zero-direction representation limits ``~ g(t, eta, 0)`` on the lattice.

    A limit counts as vanishing within ``probe_tol`` (the sweep tolerance
    for a zero target).
    """
    out = []
    for t in times:
        inst = corollary34_config(gen, np.zeros(gen.d), eta, obs, t=t, T=T, backend="tree", **options)
        rep = summarize(inst, _replicates(inst))
        out.append({"t": float(t), "eta": float(eta), "limit": rep.final.estimate, "tolerance": probe_tol,
                    "verdict_vs_g": rep.verdict})
    return out


def _vanish(limits: list) -> bool:
    return all(abs(p["limit"]) <= p["tolerance"] for p in limits)


def self_financing_check(gen: GeneratorSpec, level: float = -1.0, T: float = 1.0, n_steps: int = 200,
                         tol: float = 1e-8, probe_times=(0.0, 0.25, 0.5), **probe_options) -> PropositionReport:
    """Barrier ``L = level < 0``: ``g(t,0,0) = 0``  iff  the zero terminal gives ``Y = 0``."""
    if not level < 0:
        raise PreconditionError("the barrier must stay strictly below 0")
    if gen.d != 1:
        raise ConfigurationError("lattice checks use one Brownian dimension")
    grid = TimeGrid.uniform_grid(0.0, T, n_steps)
    obs = ObstacleSpec.constant(level)
    g0 = max(abs(gen.scalar(float(s), 0.0, [0.0])) for s in grid.nodes[:-1])
    sol = solve_tree(RBSDEProblem(gen, _constant_terminal(0.0), obs, grid), _brownian_tree(grid))
    dev = max(float(np.max(np.abs(y))) for y in sol.Y)
    k_total = sol.K_total
    limits = _probe_limits(gen, obs, 0.0, probe_times, T, **probe_options)
    return PropositionReport("self-financing", g0 <= tol, dev <= tol and k_total <= tol, _vanish(limits),
                             g0, dev, limits, {"K_total": k_total, "tol": tol, "level": level})


def zero_interest_check(gen: GeneratorSpec, obs: ObstacleSpec, y_values: Sequence[float],
                        C: Optional[float] = None, T: float = 1.0, n_steps: int = 200, tol: float = 1e-8,
                        probe_times=(0.0, 0.25, 0.5), box: float = 10.0, n_y: int = 41,
                        **probe_options) -> PropositionReport:
    """Barrier below ``C``: ``g(t,y,0) = 0`` for ``y >= C``  iff  every ``Y^y`` stays at ``y``."""
    C = obs.upper_bound if C is None else float(C)
    if C is None:
        raise PreconditionError("the barrier needs an upper bound C")
    if gen.d != 1:
        raise ConfigurationError("lattice checks use one Brownian dimension")
    ys = [float(y) for y in y_values]
    if any(y < C for y in ys):
        raise PreconditionError(f"every y must be >= C = {C}")
    grid = TimeGrid.uniform_grid(0.0, T, n_steps)
    tree = _brownian_tree(grid)
    y_grid = np.union1d(np.linspace(C, C + box, n_y), ys)
    g0 = max(float(np.max(np.abs(gen(float(s), y_grid, np.zeros((y_grid.size, 1))))))
             for s in grid.nodes[:-1])
    devs, limits = {}, []
    for y in ys:
        sol = solve_tree(RBSDEProblem(gen, _constant_terminal(y), obs, grid), tree)
        devs[repr(y)] = max(float(np.max(np.abs(v - y))) for v in sol.Y)
        if y > barrier_at_origin(obs, 0.0, [0.0]):
            limits.extend(_probe_limits(gen, obs, y, probe_times, T, **probe_options))
    dev = max(devs.values())
    return PropositionReport("zero-interest", g0 <= tol, dev <= tol, _vanish(limits) if limits else None,
                             g0, dev, limits, {"C": C, "deviation_by_y": devs, "tol": tol})


def sigma_index(eta: float, L_nodes: np.ndarray, i_t: int) -> int:
    """Last node of ``[t, sigma_t]``: first node after ``t`` where ``eta <= L``, or the horizon.

    When the barrier jumps strictly above ``eta`` between nodes the
    preceding node is used, so that ``eta >= L`` holds on the whole interval.
    """
    N = L_nodes.size - 1
    after = np.flatnonzero(eta <= L_nodes[i_t + 1:])
    if after.size == 0:
        return N
    j = i_t + 1 + int(after[0])
    if eta < L_nodes[j]:
        j -= 1
    if j <= i_t:
        raise PreconditionError("the barrier crosses eta within one step; refine the grid")
    return j


def flatness_check(gen: GeneratorSpec, obs: ObstacleSpec, eta: float, t: float = 0.0, T: float = 1.0,
                   n_steps: int = 200, tol: float = 1e-8, probe: bool = True,
                   **probe_options) -> PropositionReport:
    """``g(s, eta, 0) = 0`` on ``[t, sigma_t]``  iff  ``Y = eta`` there.

    ``sigma_t`` is the first time the deterministic barrier reaches ``eta``
    (capped at ``T``); the problem is solved on the lattice over ``[t, sigma_t]``
    with terminal value ``eta``.
    """
    if obs.kind not in ("constant", "time"):
        raise ConfigurationError("flatness needs a barrier that depends on time only")
    if gen.d != 1:
        raise ConfigurationError("lattice checks use one Brownian dimension")
    grid = TimeGrid.uniform_grid(0.0, T, n_steps)
    i_t = grid.index_of(t)
    L_nodes = np.array([float(obs.at(float(s), np.zeros((1, 1)))[0]) for s in grid.nodes])
    if not eta > L_nodes[i_t]:
        raise PreconditionError(f"eta={eta} must exceed the barrier {L_nodes[i_t]} at t={t}")
    j = sigma_index(eta, L_nodes, i_t)
    sub = TimeGrid.from_nodes(grid.nodes[i_t:j + 1])
    g0 = max(abs(gen.scalar(float(s), eta, [0.0])) for s in sub.nodes[:-1])
    sol = solve_tree(RBSDEProblem(gen, _constant_terminal(eta), obs, sub), _brownian_tree(sub))
    dev = max(float(np.max(np.abs(y - eta))) for y in sol.Y)
    limits = _probe_limits(gen, obs, eta, [t], float(sub.T), **probe_options) if probe else []
    return PropositionReport("flatness", g0 <= tol, dev <= tol, _vanish(limits) if limits else None, g0, dev,
                             limits, {"sigma_time": float(sub.T), "sigma_index": j, "tol": tol})


# ---------------------------------------------------------------------------
# a priori estimate


@dataclass
class AprioriReport:
    lhs: float
    rhs: float
    ratio: float
    flagged: bool
    parts: dict

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio, "flagged": self.flagged, "parts": self.parts}


def lattice_paths(sol: DiscreteSolution, n_paths: int, seed: int = 0):
    """Sample lattice paths of a tree solution as path arrays ``(Y, Z, dK, L)``."""
    N = sol.grid.n_steps
    rng = np.random.default_rng(seed)
    ups = rng.integers(0, 2, size=(n_paths, N))
    j = np.zeros((n_paths, N + 1), dtype=np.int64)
    j[:, 1:] = np.cumsum(ups, axis=1)
    Y = np.stack([sol.Y[i][j[:, i]] for i in range(N + 1)], axis=1)
    dK = np.stack([sol.dK[i][j[:, i]] for i in range(N + 1)], axis=1)
    L = np.stack([sol.L[i][j[:, i]] for i in range(N + 1)], axis=1)
    Z = np.stack([sol.Z[i][j[:, i]] for i in range(N)], axis=1)
    return Y, Z, dK, L


def apriori_check(prob: RBSDEProblem, sol: DiscreteSolution, sigma_idx: int = 0, tau_idx: Optional[int] = None,
                  n_sample_paths: int = 20_000, seed: int = 0, lhs_tol: float = 1e-8) -> AprioriReport:
    """Sample both sides of the a priori estimate between nodes ``sigma < tau``.

    ``ratio = LHS / RHS`` is the empirical constant. With ``RHS = 0`` the
    ratio is 0 when ``LHS <= lhs_tol`` and the report is flagged otherwise.
    Tree solutions are evaluated along seeded lattice paths.
    """
    N = sol.grid.n_steps
    tau_idx = N if tau_idx is None else int(tau_idx)
    if not 0 <= sigma_idx < tau_idx <= N:
        raise ConfigurationError("need 0 <= sigma_idx < tau_idx <= n_steps")
    if sol.layout == "tree":
        Y, Z, dK, L = lattice_paths(sol, n_sample_paths, seed)
    else:
        Y, Z, dK, L = sol.Y, sol.Z, sol.dK, sol.L
    dt = sol.grid.dt[sigma_idx:tau_idx]
    win = slice(sigma_idx, tau_idx + 1)
    sup_y = np.max(Y[:, win] ** 2, axis=1)
    int_z = np.sum(np.sum(Z[:, sigma_idx:tau_idx] ** 2, axis=2) * dt, axis=1)
    k_inc = np.sum(dK[:, sigma_idx:tau_idx], axis=1)
    gam = np.array([float(prob.gen.gamma(float(s))) for s in sol.grid.nodes[sigma_idx:tau_idx]])
    int_gamma = float(np.sum(gam * dt))
    sup_l = np.max(np.maximum(L[:, win], 0.0) ** 2, axis=1)
    parts = {"sup_Y2": float(np.mean(sup_y)), "int_Z2": float(np.mean(int_z)), "K_inc2": float(np.mean(k_inc ** 2)),
             "Y_tau2": float(np.mean(Y[:, tau_idx] ** 2)), "int_gamma_sq": int_gamma ** 2,
             "sup_Lplus2": float(np.mean(sup_l))}
    lhs = parts["sup_Y2"] + parts["int_Z2"] + parts["K_inc2"]
    rhs = parts["Y_tau2"] + parts["int_gamma_sq"] + parts["sup_Lplus2"]
    if rhs > 0:
        return AprioriReport(lhs, rhs, lhs / rhs, False, parts)
    flagged = lhs > lhs_tol
    return AprioriReport(lhs, rhs, float("inf") if flagged else 0.0, flagged, parts)
