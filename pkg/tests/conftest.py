import math

import numpy as np
import pytest

from rbsdelab.core import GeneratorSpec, ObstacleSpec, SDECoeffs, TimeGrid
from rbsdelab.solvers import RBSDEProblem, TreeModel

PUT = dict(S0=100.0, K=100.0, r=0.06, vol=0.4, T=0.5)


def zero_gen(d=1):
    return GeneratorSpec(lambda t, y, z: np.zeros_like(y), 0.0, satisfies_a3=True, d=d, name="zero")


def abs_z(d=1):
    return GeneratorSpec(lambda t, y, z: np.sqrt(np.sum(z * z, axis=-1)), 1.0, satisfies_a3=True, d=d, name="abs-z")


def linear(a=0.5, beta=0.5, c=0.2):
    return GeneratorSpec(lambda t, y, z: a * y + beta * z[..., 0] + c, 1.0, lambda t: abs(c), False, 1, "linear")


def const_terminal(v):
    return lambda x: np.full(np.shape(x)[:-1], float(v))


def brownian_tree(T=1.0, n=50, t0=0.0):
    return TreeModel(TimeGrid.uniform_grid(t0, T, n), 0.0, 0.0, 1.0)


def put_problem(n_steps):
    p = PUT
    grid = TimeGrid.uniform_grid(0.0, p["T"], n_steps)
    gen = GeneratorSpec(lambda t, y, z: -p["r"] * y, p["r"], name="discount")
    payoff = lambda x: np.maximum(p["K"] - np.exp(x[..., 0]), 0.0)  # noqa: E731
    obs = ObstacleSpec.of_state(lambda t, x: payoff(x), upper_bound=p["K"])
    co = SDECoeffs.constant_coeffs([p["r"] - 0.5 * p["vol"] ** 2], [[p["vol"]]])
    x0 = np.array([math.log(p["S0"])])
    return RBSDEProblem(gen, payoff, obs, grid, co, x0), TreeModel.from_coeffs(co, x0, grid)


@pytest.fixture
def flat_problem():
    grid = TimeGrid.uniform_grid(0.0, 1.0, 200)
    obs = ObstacleSpec.of_time(lambda t: 1.0 - t, upper_bound=1.0)
    return RBSDEProblem(zero_gen(), const_terminal(0.0), obs, grid, SDECoeffs.brownian(1), np.zeros(1))


def pytest_terminal_summary(terminalreporter):
    from _acceptance import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
