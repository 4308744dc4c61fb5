import numpy as np
import pytest

from mfhjb.errors import InvalidInputError, ResourceError
from mfhjb.lift import (
    convergence_table,
    default_measure_set,
    linear_derivative_grid,
    lipschitz_profile,
    project_vhat,
    richardson,
    sample_pairs,
    vhat_linear_derivative,
)
from mfhjb.measures import EmpiricalMeasure, GridMeasure
from mfhjb.problems import make_problem
from mfhjb.solver import SolverConfig, solve_hjbn
from mfhjb.torus import GridSpec, TorusGridFn, interpolate, sample_on_grid


def _pair_function(M=16):
    # V(x1, x2) = cos(2 pi x1) cos(2 pi x2) + sin(2 pi x1) + sin(2 pi x2)
    grid = GridSpec(1, 2, M)
    return sample_on_grid(grid, lambda y: np.cos(2 * np.pi * y[..., 0]) * np.cos(2 * np.pi * y[..., 1])
                          + np.sin(2 * np.pi * y[..., 0]) + np.sin(2 * np.pi * y[..., 1]))


def test_dirac_at_node_reads_the_diagonal():
    f = _pair_function()
    m = EmpiricalMeasure([[3 / 16]])
    assert project_vhat(f, 0.0, m).value == pytest.approx(f.values[3, 3], abs=1e-14)


def test_exact_is_the_mc_expectation():
    f = _pair_function()
    m = EmpiricalMeasure([[0.1], [0.37], [0.8]], [0.5, 0.3, 0.2])
    exact = project_vhat(f, 0.0, m).value
    # brute force: expectation of the interpolant over the product measure
    pts = np.array([[a, b] for a in m.atoms[:, 0] for b in m.atoms[:, 0]])
    w = np.outer(m.weights, m.weights).reshape(-1)
    assert exact == pytest.approx(float(w @ interpolate(f, pts)), abs=1e-13)
    mc = project_vhat(f, 0.0, m, method="mc", samples=40_000, seed=2)
    assert abs(mc.value - exact) <= 4 * mc.stderr
    with pytest.raises(InvalidInputError):
        project_vhat(f, 0.0, m, method="other")
    with pytest.raises(ResourceError):
        project_vhat(f, 0.0, m, budget_bytes=10)


def test_grid_measure_lift_of_product():
    f = _pair_function(32)
    m = GridMeasure.from_function(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x[..., 0]), 32)
    # int cos dm = 1/4, int sin dm = 0: Vhat = 1/16; interpolation bias is O(dx^2)
    assert project_vhat(f, 0.0, m).value == pytest.approx(1 / 16, abs=5e-3)
    with pytest.raises(InvalidInputError):
        project_vhat(f, 0.0, EmpiricalMeasure([[0.1, 0.2]]))


def test_linear_derivative_matches_formula_and_mc():
    f = _pair_function(32)
    m = EmpiricalMeasure([[0.0], [0.25]])
    # dVhat/dm(x) = 2 (c cos 2 pi x + sin 2 pi x) recentred, with c = int cos dm = 1/2
    xs = np.arange(32)[:, None] / 32
    expect = 2 * (0.5 * np.cos(2 * np.pi * xs[:, 0]) + np.sin(2 * np.pi * xs[:, 0]))
    F = linear_derivative_grid(f, 0.0, m)
    assert np.max(np.abs(F - (expect - expect.mean()))) <= 1e-12
    assert abs(F.mean()) <= 1e-14
    pts = np.array([[0.1], [0.6]])
    ex = vhat_linear_derivative(f, 0.0, m, pts)
    mc = vhat_linear_derivative(f, 0.0, m, pts, method="mc", samples=4000, seed=1)
    assert np.max(np.abs(ex - mc)) <= 0.1


def test_linear_derivative_is_the_directional_derivative():
    f = _pair_function(32)
    m = EmpiricalMeasure([[0.1], [0.45], [0.7]])
    nu = EmpiricalMeasure([[0.3], [0.9]])
    eps = 1e-6
    atoms = np.vstack([m.atoms, nu.atoms])
    mix = EmpiricalMeasure(atoms, np.concatenate([(1 - eps) * m.weights, eps * nu.weights]))
    fd = (project_vhat(f, 0.0, mix).value - project_vhat(f, 0.0, m).value) / eps
    deriv = vhat_linear_derivative(f, 0.0, m, atoms)
    w = np.concatenate([-m.weights, nu.weights])
    assert fd == pytest.approx(float(w @ deriv), abs=1e-5)


def test_lipschitz_profile_linear_functional():
    # Vhat(m) = int cos(2 pi x) dm is 2 pi Lipschitz in d1
    f = sample_on_grid(GridSpec(1, 2, 64), lambda y: np.mean(np.cos(2 * np.pi * y), axis=-1))
    prof = lipschitz_profile(f, 0.0, "d1", P=60, seed=3)
    assert 0 < prof.max_ratio <= 2 * np.pi + 1e-9
    assert prof.pairs + prof.skipped == 60
    hk = lipschitz_profile(f, 0.0, "h_neg_k", P=20, seed=3)
    assert hk.max_ratio > 0
    with pytest.raises(InvalidInputError):
        lipschitz_profile(f, 0.0, "d1", P=0)
    assert len(sample_pairs(2, 10, 0, uniform=True)) == 10


def test_richardson():
    assert richardson([1, 2], [1.0, 0.5]) == (0.5, None)
    assert richardson([1, 2, 3], [1.0, 2.0, 4.0]) == (4.0, None)
    Ns = [2, 4, 8]
    vals = [1 + 1 / n for n in Ns]
    est, order = richardson(Ns, vals)
    assert order == pytest.approx(1.0)
    assert abs(est - 1) < abs(vals[-1] - 1)


def test_convergence_table_linear_terminal_has_no_gap():
    prob = make_problem("heat-linear-G")
    ms = default_measure_set(1, 16, seed=0)
    rep = convergence_table(prob.H, prob.G, [1, 2], [0.0, 0.05], ms, T=prob.T, a0=prob.a0, M=16,
                            lip_pairs=10)
    conv = rep.stages["convergence"]
    assert conv["solved_N"] == [1, 2]
    assert len(conv["rows"]) == 2 * 2 * len(ms)
    # V^N is the particle mean of one function, so the lift does not depend on N
    assert conv["gaps"]["1"] <= 1e-10


def test_convergence_table_resource_handling():
    prob = make_problem("quadratic-control")
    ms = default_measure_set(1, 16)
    with pytest.raises(InvalidInputError):
        convergence_table(prob.H, prob.G, [2, 1], [0.0], ms, T=prob.T, a0=prob.a0, M=16)
    with pytest.raises(ResourceError):
        convergence_table(prob.H, prob.G, [1, 2], [0.0], ms, T=prob.T, a0=prob.a0, M=16, budget_bytes=2000)
    rep = convergence_table(prob.H, prob.G, [1, 2], [0.0], ms, T=prob.T, a0=prob.a0, M=16,
                            budget_bytes=2000, skip_resource_errors=True, lip_pairs=10)
    assert rep.stages["convergence"]["solved_N"] == [1]
    assert len(rep.errors) == 1 and "N=2" in rep.errors[0]
