"""Brownian increments, Euler-Maruyama forward flow and grid hitting times."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .core import ConfigurationError, ObstacleSpec, PreconditionError, SDECoeffs, SimulationError, TimeGrid

_CHUNK_PATHS = 1 << 14


def _block_words(n_steps: int, d: int) -> int:
    # Philox4x64 emits 4 words per counter value; each path owns whole counter blocks.
    return 4 * -(-(n_steps * d) // 4)


def _uniform_to_normal(raw: np.ndarray) -> np.ndarray:
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u)


def _path_runs(paths: np.ndarray):
    """Split sorted unique path ids into contiguous runs ``(start, stop)``."""
    if paths.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(paths) != 1) + 1
    starts = np.concatenate([[0], breaks])
    stops = np.concatenate([breaks, [paths.size]])
    return [(int(paths[a]), int(paths[b - 1]) + 1) for a, b in zip(starts, stops)]


def standard_normals(seed: int, first_path: int, n_paths: int, n_steps: int, d: int) -> np.ndarray:
    """Unit normals for paths ``first_path .. first_path + n_paths - 1``.

    Path ``p`` reads its own fixed block of the Philox stream keyed by
    ``seed``, so the values for a path never depend on which other paths
    are generated alongside it.
    """
    words = _block_words(n_steps, d)
    out = np.empty((n_paths, n_steps, d))
    for c0 in range(0, n_paths, _CHUNK_PATHS):
        c1 = min(n_paths, c0 + _CHUNK_PATHS)
        bitgen = np.random.Philox(key=int(seed))
        bitgen.advance((first_path + c0) * words // 4)
        raw = bitgen.random_raw((c1 - c0) * words).reshape(c1 - c0, words)
        out[c0:c1] = _uniform_to_normal(raw[:, : n_steps * d]).reshape(c1 - c0, n_steps, d)
    return out


def simulate_brownian(grid: TimeGrid, n_paths: int, d: int, seed: int,
                      paths: Optional[Sequence[int]] = None) -> np.ndarray:
    """Brownian increments of shape ``(n_paths, n_steps, d)``.

    Entry ``[p, i, k]`` is ``Normal(0, dt_i)``, drawn from a counter-based
    stream keyed by ``(seed, p)``. Pass ``paths`` to regenerate an arbitrary
    subset of path indices; the rows match the full run bit-for-bit.
    """
    if n_paths < 1 or d < 1:
        raise ConfigurationError("n_paths and d must be >= 1")
    if seed < 0:
        raise ConfigurationError("seed must be non-negative")
    scale = np.sqrt(grid.dt)[None, :, None]
    if paths is None:
        return standard_normals(seed, 0, n_paths, grid.n_steps, d) * scale
    ids = np.asarray(paths, dtype=np.int64)
    if ids.size != n_paths or np.any(ids < 0):
        raise ConfigurationError("paths must list n_paths non-negative indices")
    uniq, inverse = np.unique(ids, return_inverse=True)
    block = np.concatenate([standard_normals(seed, a, b - a, grid.n_steps, d)
                            for a, b in _path_runs(uniq)])
    return block[inverse] * scale


def coarsen(dW: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` increments along the step axis."""
    P, N, d = dW.shape
    if factor < 1 or N % factor:
        raise ConfigurationError(f"cannot coarsen {N} steps by factor {factor}")
    return dW.reshape(P, N // factor, factor, d).sum(axis=2)


@dataclass(frozen=True)
class PathBundle:
    grid: TimeGrid
    dW: np.ndarray
    X: np.ndarray
    origin_t: float
    origin_x: np.ndarray
    origin_idx: int
    seed: int

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[2]

    @property
    def d(self) -> int:
        return self.dW.shape[2]

    def restrict(self, i_end: int) -> "PathBundle":
        """The same paths on nodes ``0..i_end`` (a shorter horizon)."""
        if i_end <= self.origin_idx:
            raise ConfigurationError("restriction must end after the origin")
        return PathBundle(self.grid.restrict(i_end), self.dW[:, :i_end], self.X[:, : i_end + 1],
                          self.origin_t, self.origin_x, self.origin_idx, self.seed)

    def brownian_displacement(self) -> np.ndarray:
        """``B_{t_i} - B_{origin}`` per path and node, shape ``(P, N+1, d)``."""
        W = np.zeros((self.n_paths, self.grid.n_steps + 1, self.d))
        W[:, self.origin_idx + 1:] = np.cumsum(self.dW[:, self.origin_idx:], axis=1)
        return W

    def obstacle_values(self, obs: ObstacleSpec) -> np.ndarray:
        """Barrier along every path, ``(P, N+1)``; Itô barriers start at the origin."""
        if obs.kind != "ito":
            return obs.on_paths(self.grid.nodes, self.X, self.dW)
        out = np.full((self.n_paths, self.grid.n_steps + 1), obs.L0)
        i0 = self.origin_idx
        out[:, i0:] = obs.on_paths(self.grid.nodes[i0:], self.X[:, i0:], self.dW[:, i0:])
        return out

    def to_csv(self, path) -> None:
        """Debug dump with columns ``path, node, time, x0..x{n-1}``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "node", "time"] + [f"x{k}" for k in range(self.n)])
            for p in range(self.n_paths):
                for i, t in enumerate(self.grid.nodes):
                    w.writerow([p, i, repr(float(t))] + [repr(float(v)) for v in self.X[p, i]])


def euler_maruyama(coeffs: SDECoeffs, origin, grid: TimeGrid, increments: np.ndarray,
                   seed: int = -1) -> PathBundle:
    """Simulate ``X^{t,x}`` on ``grid`` driven by ``increments``.

    ``origin = (t, x)``; ``t`` is clamped to the first node at or after it and
    every node before the origin carries ``x``.
    """
    t, x = origin
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (coeffs.n,):
        raise ConfigurationError(f"origin state must have dimension {coeffs.n}")
    P, N, d = increments.shape
    if N != grid.n_steps or d != coeffs.d:
        raise ConfigurationError("increments do not match grid / Brownian dimension")
    i0 = grid.first_index_at_or_after(float(t))
    X = np.empty((P, N + 1, coeffs.n))
    X[:, : i0 + 1] = x
    nodes, dts = grid.nodes, grid.dt
    for i in range(i0, N):
        xi = X[:, i]
        drift = np.asarray(coeffs.b(nodes[i], xi), dtype=float)
        vol = np.asarray(coeffs.sigma(nodes[i], xi), dtype=float)
        if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(vol))):
            raise SimulationError(f"non-finite SDE coefficient at node {i} (t={nodes[i]:g})")
        X[:, i + 1] = xi + drift * dts[i] + np.einsum("pnd,pd->pn", vol, increments[:, i])
    if not np.all(np.isfinite(X)):
        node = int(np.argwhere(~np.isfinite(X))[0][1])
        raise SimulationError(f"simulated state overflowed at node {node}")
    return PathBundle(grid, increments, X, float(grid.nodes[i0]), x, i0, seed)


def simulate_paths(coeffs: SDECoeffs, origin, grid: TimeGrid, n_paths: int, seed: int) -> PathBundle:
    dW = simulate_brownian(grid, n_paths, coeffs.d, seed)
    return euler_maruyama(coeffs, origin, grid, dW, seed)


def hitting_time_index(bundle: PathBundle, eta_t: float, q, obs: ObstacleSpec,
                       L_values: Optional[np.ndarray] = None) -> np.ndarray:
    """First node after the origin where ``eta_t + q.(X - x) <= L``, else the last node.

    The returned index is always strictly after the origin.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if L_values is None:
        L_values = bundle.obstacle_values(obs)
    i0 = bundle.origin_idx
    if not np.all(eta_t > L_values[:, i0]):
        raise PreconditionError(f"eta_t={eta_t} must exceed the obstacle at the origin "
                                f"({float(np.max(L_values[:, i0]))})")
    cand = eta_t + (bundle.X[:, i0 + 1:] - bundle.origin_x) @ q
    hit = cand <= L_values[:, i0 + 1:]
    N = bundle.grid.n_steps
    return np.where(hit.any(axis=1), i0 + 1 + np.argmax(hit, axis=1), N).astype(np.int64)
