"""Built-in generators, barriers, SDE coefficient sets and presets.

Every entry builds a spec from a parameter mapping. Generator entries carry
the structural marks used by the experiments: linear growth (A1),
continuity (A2), ``g(t, y, 0) = 0`` (A3), and whether the driver is
Lipschitz.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ConfigurationError, GeneratorSpec, ObstacleSpec, SDECoeffs

LOW_BARRIER = -1e9


@dataclass(frozen=True)
class Entry:
    id: str
    formula: str
    build: Callable
    defaults: dict = field(default_factory=dict)
    marks: tuple = ()
    exercises: str = ""

    def describe(self) -> dict:
        return {"id": self.id, "formula": self.formula, "defaults": dict(self.defaults),
                "marks": list(self.marks), "exercises": self.exercises}


def _params(entry: Entry, given: Optional[dict]) -> dict:
    given = dict(given or {})
    unknown = set(given) - set(entry.defaults)
    if unknown:
        raise ConfigurationError(f"{entry.id}: unknown parameter(s) {sorted(unknown)}; "
                                 f"allowed: {sorted(entry.defaults)}")
    out = dict(entry.defaults)
    out.update(given)
    return out


def _vec(v, d: int, what: str) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.size == 1:
        return np.full(d, float(a[0]))
    if a.size != d:
        raise ConfigurationError(f"{what} must have length {d}")
    return a


def _zn(z):
    return np.sqrt(np.sum(z * z, axis=-1))


# ---------------------------------------------------------------------------
# generators


def _gen_zero(p, d):
    return GeneratorSpec(lambda t, y, z: np.zeros_like(y), 0.0, satisfies_a3=True, d=d, name="zero", formula="0")


def _gen_constant(p, d):
    c = float(p["c"])
    lam = 1.0
    return GeneratorSpec(lambda t, y, z: np.full_like(y, c), lam, lambda t: abs(c), c == 0.0, d,
                         "constant", f"{c:g}")


def _gen_linear(p, d):
    a, c = float(p["a"]), float(p["c"])
    beta = _vec(p["beta"], d, "beta")
    lam = max(abs(a), float(np.linalg.norm(beta)), 1.0 if c else 0.0)
    lam = lam or 1.0

    def g(t, y, z):
        return a * y + z @ beta + c

    return GeneratorSpec(g, lam, lambda t: abs(c) / lam, a == 0.0 and c == 0.0, d, "linear",
                         f"{a:g}*y + {list(beta)}.z + {c:g}")


def _gen_abs_z(p, d):
    k = float(p["k"])
    return GeneratorSpec(lambda t, y, z: k * _zn(z), abs(k) or 1.0, satisfies_a3=True, d=d, name="abs-z",
                         formula=f"{k:g}*|z|")


def _gen_sqrt_cap(p, d):
    return GeneratorSpec(lambda t, y, z: np.sqrt(np.minimum(np.abs(y), 1.0)), 1.0, lambda t: 1.0, False, d,
                         "sqrt-cap", "sqrt(min(|y|, 1))")


def _gen_discount(p, d):
    r = float(p["r"])
    return GeneratorSpec(lambda t, y, z: -r * y, abs(r) or 1.0, satisfies_a3=(r == 0.0), d=d, name="discount",
                         formula=f"-{r:g}*y")


_SAFE_FUNCS = {
    "abs": np.abs, "sqrt": np.sqrt, "exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos,
    "tanh": np.tanh, "minimum": np.minimum, "maximum": np.maximum, "sign": np.sign,
}
_SAFE_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
               ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod)


def compile_expression(expr: str, d: int) -> Callable:
    """Compile ``expr`` in ``t, y, z`` into a vectorised ``g(t, y, z)``.

    Allowed names: ``t``, ``y``, ``z`` (first component), ``z0..z{d-1}``,
    ``znorm``, ``pi`` and the functions in ``_SAFE_FUNCS``. Anything else
    (attributes, subscripts, keywords, other names) is rejected.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"expression {expr!r}: {exc.msg}") from exc
    names = {"t", "y", "z", "znorm", "pi"} | {f"z{k}" for k in range(d)}
    for node in ast.walk(tree):
        if not isinstance(node, _SAFE_NODES):
            raise ConfigurationError(f"expression {expr!r}: {type(node).__name__} is not allowed")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _SAFE_FUNCS or node.keywords:
                raise ConfigurationError(f"expression {expr!r}: only plain calls of {sorted(_SAFE_FUNCS)}")
        elif isinstance(node, ast.Name) and node.id not in names and node.id not in _SAFE_FUNCS:
            raise ConfigurationError(f"expression {expr!r}: unknown name {node.id!r}")
        elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigurationError(f"expression {expr!r}: only numeric constants")
    code = compile(tree, "<generator>", "eval")

    def g(t, y, z):
        env = dict(_SAFE_FUNCS, t=t, y=y, z=z[..., 0], znorm=_zn(z), pi=np.pi)
        for k in range(d):
            env[f"z{k}"] = z[..., k]
        return eval(code, {"__builtins__": {}}, env)

    return g


def _gen_custom(p, d):
    expr = str(p["expr"])
    if not expr:
        raise ConfigurationError("custom-expression needs a non-empty expr")
    lam = float(p["lam"])
    gam = float(p["gamma"])
    return GeneratorSpec(compile_expression(expr, d), lam, lambda t: gam, bool(p["a3"]), d, "custom-expression",
                         expr)


GENERATORS = {e.id: e for e in [
    Entry("zero", "g = 0", _gen_zero, {}, ("A1", "A2", "A3", "Lipschitz"),
          "zero target; Snell envelope; self-financing and zero-interest"),
    Entry("constant", "g = c", _gen_constant, {"c": 0.1}, ("A1", "A2", "Lipschitz", "A3 iff c = 0"),
          "constant driver ODE solution; violating self-financing"),
    Entry("linear", "g = a y + beta.z + c", _gen_linear, {"a": 0.5, "beta": 0.5, "c": 0.0},
          ("A1", "A2", "Lipschitz", "A3 iff a = c = 0"), "smooth representation target; converse comparison"),
    Entry("abs-z", "g = k |z|", _gen_abs_z, {"k": 1.0}, ("A1", "A2", "A3", "Lipschitz"),
          "nonsmooth-in-z target; bounded-barrier and zero-interest checks"),
    Entry("sqrt-cap", "g = sqrt(min(|y|, 1))", _gen_sqrt_cap, {}, ("A1", "A2", "continuous non-Lipschitz"),
          "continuity beyond Lipschitz in the representation limit"),
    Entry("discount", "g = -r y", _gen_discount, {"r": 0.06}, ("A1", "A2", "Lipschitz"),
          "American put as a reflected equation"),
    Entry("custom-expression", "g = expr(t, y, z)", _gen_custom,
          {"expr": "", "lam": 1.0, "gamma": 0.0, "a3": False}, ("declared by user",),
          "user-supplied drivers (assumptions checked by sampling)"),
]}


# ---------------------------------------------------------------------------
# barriers


def _obs_constant(p, n, d):
    return ObstacleSpec.constant(float(p["value"]), name="constant")


def _obs_low(p, n, d):
    return ObstacleSpec.constant(LOW_BARRIER, name="low")


def _obs_time_linear(p, n, d):
    L0, slope, T = float(p["L0"]), float(p["slope"]), float(p["T"])
    return ObstacleSpec.of_time(lambda t: L0 + slope * t, upper_bound=max(L0, L0 + slope * T), name="time-linear")


def _obs_put(p, n, d):
    K = float(p["strike"])
    if p["log_state"]:
        return ObstacleSpec.of_state(lambda t, x: np.maximum(K - np.exp(x[..., 0]), 0.0), upper_bound=K, name="put")
    return ObstacleSpec.of_state(lambda t, x: np.maximum(K - x[..., 0], 0.0), upper_bound=K, name="put")


def _obs_ito(p, n, d):
    U = float(p["U"])
    V = _vec(p["V"], d, "V")
    V.setflags(write=False)
    return ObstacleSpec.ito(float(p["L0"]), lambda t: U, lambda t: V, name="ito")


def _obs_state_linear(p, n, d):
    a = _vec(p["a"], n, "a")
    c = float(p["c"])
    return ObstacleSpec.of_state(lambda t, x: c + x @ a, name="state-linear")


OBSTACLES = {e.id: e for e in [
    Entry("constant", "L = value", _obs_constant, {"value": 0.0}, ("bounded",),
          "binding barrier; bounded barrier sup L <= C"),
    Entry("low", f"L = {LOW_BARRIER:g}", _obs_low, {}, ("bounded",), "plain BSDE limit (no reflection)"),
    Entry("time-linear", "L = L0 + slope t", _obs_time_linear, {"L0": 1.0, "slope": -1.0, "T": 1.0}, ("bounded",),
          "closed-form flat case; flatness stopping time"),
    Entry("put", "L = (strike - S)^+", _obs_put, {"strike": 100.0, "log_state": True}, ("bounded",),
          "American put"),
    Entry("ito", "L = L0 + U t + V.B_t", _obs_ito, {"L0": 0.0, "U": 0.0, "V": 0.0}, ("ito-form",),
          "Itô-form barrier with g(t, L, V) + U >= 0"),
    Entry("state-linear", "L = c + a.x", _obs_state_linear, {"a": 0.0, "c": 0.0}, (), "state barrier"),
]}


# ---------------------------------------------------------------------------
# SDE coefficients


def _sde_brownian(p, n, d):
    if n != d:
        raise ConfigurationError("brownian coefficients need n = d")
    return SDECoeffs.brownian(d)


def _sde_constant(p, n, d):
    b = _vec(p["b"], n, "b")
    s = np.asarray(p["sigma"], dtype=float)
    if s.ndim == 0:
        if n != d:
            raise ConfigurationError("scalar sigma needs n = d")
        s = float(s) * np.eye(n)
    elif s.ndim == 1:
        s = np.diag(_vec(s, n, "sigma"))
    if s.shape != (n, d):
        raise ConfigurationError(f"sigma must be {n}x{d}")
    return SDECoeffs.constant_coeffs(b, s)


def _sde_gbm_log(p, n, d):
    if n != 1 or d != 1:
        raise ConfigurationError("gbm-log is one-dimensional")
    r, vol = float(p["r"]), float(p["vol"])
    return SDECoeffs.constant_coeffs([r - 0.5 * vol * vol], [[vol]])


def _sde_gbm(p, n, d):
    if n != 1 or d != 1:
        raise ConfigurationError("gbm is one-dimensional")
    mu, vol = float(p["mu"]), float(p["vol"])
    return SDECoeffs(lambda t, x: mu * x, lambda t, x: (vol * x)[..., None], abs(mu) + abs(vol),
                     abs(mu) + abs(vol), 1, 1)


def _sde_ou(p, n, d):
    if n != 1 or d != 1:
        raise ConfigurationError("ou is one-dimensional")
    kappa, theta, vol = float(p["kappa"]), float(p["theta"]), float(p["vol"])

    def sig(t, x):
        return np.full(np.shape(x) + (1,), vol)

    return SDECoeffs(lambda t, x: kappa * (theta - x), sig, abs(kappa), abs(kappa) * (1 + abs(theta)) + abs(vol),
                     1, 1)


COEFFICIENTS = {e.id: e for e in [
    Entry("brownian", "b = 0, sigma = I", _sde_brownian, {}, ("constant",), "Brownian preset"),
    Entry("constant", "b, sigma constant", _sde_constant, {"b": 0.0, "sigma": 1.0}, ("constant",),
          "general (b, sigma) representation target"),
    Entry("gbm-log", "d log S = (r - vol^2/2) dt + vol dB", _sde_gbm_log, {"r": 0.06, "vol": 0.4}, ("constant",),
          "American put on a log-price lattice"),
    Entry("gbm", "dX = mu X dt + vol X dB", _sde_gbm, {"mu": 0.05, "vol": 0.2}, (), "Euler mean check"),
    Entry("ou", "dX = kappa (theta - X) dt + vol dB", _sde_ou, {"kappa": 1.0, "theta": 0.0, "vol": 1.0}, (),
          "state-dependent drift in the representation target"),
]}


PRESETS = {
    "corollary34": {"formula": "n=d, q=z, b=0, σ=1", "sde": "brownian", "x": "0",
                    "exercises": "target g(t, eta, z); terminal eta + z.(B_{t+eps^tau} - B_t)"},
    "american-put": {"formula": "g=-r y, L=(K-S)^+, log-price GBM", "sde": "gbm-log",
                     "exercises": "tree vs dense lattice vs LSMC"},
    "flat-barrier": {"formula": "g=0, xi=0, L=1-t", "sde": "brownian",
                     "exercises": "Y(t)=1-t and K(t)=t"},
}


def build_generator(gid: str, params: Optional[dict] = None, d: int = 1) -> GeneratorSpec:
    if gid not in GENERATORS:
        raise ConfigurationError(f"unknown generator {gid!r}; known: {sorted(GENERATORS)}")
    e = GENERATORS[gid]
    return e.build(_params(e, params), d)


def build_obstacle(oid: str, params: Optional[dict] = None, n: int = 1, d: int = 1) -> ObstacleSpec:
    if oid not in OBSTACLES:
        raise ConfigurationError(f"unknown obstacle {oid!r}; known: {sorted(OBSTACLES)}")
    e = OBSTACLES[oid]
    return e.build(_params(e, params), n, d)


def build_coefficients(cid: str, params: Optional[dict] = None, n: int = 1, d: int = 1) -> SDECoeffs:
    if cid not in COEFFICIENTS:
        raise ConfigurationError(f"unknown coefficient set {cid!r}; known: {sorted(COEFFICIENTS)}")
    e = COEFFICIENTS[cid]
    return e.build(_params(e, params), n, d)


def list_registry() -> dict:
    """Catalog of every built-in entry with its marks and what it exercises."""
    return {
        "generators": [e.describe() for e in GENERATORS.values()],
        "obstacles": [e.describe() for e in OBSTACLES.values()],
        "coefficients": [e.describe() for e in COEFFICIENTS.values()],
        "presets": [dict(id=k, **v) for k, v in PRESETS.items()],
    }


def format_registry(catalog: Optional[dict] = None) -> str:
    catalog = catalog or list_registry()
    lines = []
    for section in ("generators", "obstacles", "coefficients"):
        lines.append(f"[{section}]")
        for e in catalog[section]:
            marks = "".join(f"({m})" for m in e["marks"])
            lines.append(f"  {e['id']:<18} {e['formula']:<40} {marks}  -- {e['exercises']}")
    lines.append("[presets]")
    for p in catalog["presets"]:
        lines.append(f"  {p['id']:<18} {p['formula']:<40} -- {p['exercises']}")
    return "\n".join(lines) + "\n"
