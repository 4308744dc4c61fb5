import numpy as np
import pytest

from mfhjb.errors import ConfigError, InvalidInputError, ResourceError, UnsupportedOperationError
from mfhjb.hamiltonians import TerminalSpec
from mfhjb.problems import closed_form, make_problem
from mfhjb.solver import (
    SolverConfig,
    derivative_sup_norms,
    digest,
    extract_policy,
    extract_saddle_policies,
    holder_ratio,
    node_positions,
    residual,
    resolve,
    solve_hjbn,
    solve_hjbz,
    write_snapshots,
)
from mfhjb import gridio
from mfhjb.torus import GridSpec


def _solve(prob, N=2, M=32, **kw):
    return solve_hjbn(prob.H, prob.G, SolverConfig(GridSpec(prob.d, N, M), T=prob.T, a0=prob.a0, **kw))


def _exact(prob, traj, t):
    f = traj.at(t)
    return closed_form(prob, node_positions(f.spec), t).reshape(f.values.shape)


@pytest.mark.parametrize("a0", [0.0, 0.5])
def test_heat_matches_closed_form(a0):
    prob = make_problem("heat-linear-G", a0=a0)
    # backward Euler in time: the error is O(dt) with rate 4 pi^2 (1 + a0)
    errs = []
    for dt in (1e-3, 1e-4):
        traj = _solve(prob, dt=dt, keep_all=True)
        errs.append(max(np.max(np.abs(traj.at(t).values - _exact(prob, traj, t))) for t in (0.0, 0.05)))
    assert errs[1] <= 2e-3
    assert errs[1] < errs[0] / 3


def test_colehopf_matches_closed_form():
    prob = make_problem("colehopf")
    errs = []
    for M in (64, 128):
        traj = _solve(prob, N=1, M=M)
        errs.append(np.max(np.abs(traj.at(0.0).values - _exact(prob, traj, 0.0))))
    assert errs[1] <= 1e-2
    assert errs[1] < errs[0]


def test_terminal_snapshot_is_G_and_times_are_ordered():
    prob = make_problem("quadratic-control")
    traj = _solve(prob, snapshot_times=[0.05])
    # snapshot times snap to the nearest time step
    assert len(traj.times) == 3 and traj.times[0] == prob.T and traj.times[2] == 0.0
    assert abs(traj.times[1] - 0.05) <= 0.5 * traj.config.dt + 1e-12
    pos = node_positions(traj.snapshots[0].spec)
    assert np.allclose(traj.at(prob.T).values.reshape(-1), prob.G.func(pos, None))
    with pytest.raises(InvalidInputError):
        traj.at(0.031)


def test_constant_shift_of_G_shifts_V():
    prob = make_problem("quadratic-control")
    shifted = TerminalSpec("s", 1, lambda at, w=None: prob.G.func(at, w) + 0.75, C_G=prob.G.C_G)
    a = _solve(prob)
    b = solve_hjbn(prob.H, shifted, a.config)
    assert np.allclose(b.at(0.0).values - a.at(0.0).values, 0.75, atol=1e-12)


def test_comparison_and_exchangeability():
    prob = make_problem("quadratic-control")
    lower = TerminalSpec("l", 1, lambda at, w=None: prob.G.func(at, w) - 0.1 * np.sin(2 * np.pi * at[..., 0, 0]) ** 2,
                         C_G=prob.G.C_G + 1.0)
    hi = _solve(prob)
    lo = solve_hjbn(prob.H, lower, hi.config)
    assert np.all(lo.at(0.0).values <= hi.at(0.0).values + 1e-12)
    V = hi.at(0.0).values
    assert np.allclose(V, V.T, atol=1e-12)


def test_determinism_and_dump_roundtrip(tmp_path):
    prob = make_problem("quadratic-control")
    a, b = _solve(prob), _solve(prob)
    assert digest(a) == digest(b)
    paths = write_snapshots(a, tmp_path)
    assert len(paths) == len(a.times)
    back = gridio.read_grid(paths[-1])
    assert np.array_equal(back.values, a.snapshots[-1].values)
    meta = gridio.read_meta(paths[-1].with_suffix(".meta"))
    assert meta["problem"] == "quadratic-control" and float(meta["t"]) == 0.0


def test_cfl_violation_is_reported():
    prob = make_problem("quadratic-control")
    with pytest.raises(ConfigError, match="CFL"):
        _solve(prob, dt=0.05)
    with pytest.raises(ConfigError):
        _solve(prob, dt=0.03)  # T is not a multiple of dt
    cfg = resolve(SolverConfig(GridSpec(1, 2, 32), T=prob.T, a0=prob.a0), prob.H, prob.G)
    assert cfg.cfl_number() <= 0.5 + 1e-12
    assert cfg.p_clip == pytest.approx(1.2 * np.e ** (2 * prob.H.C_H * prob.T) * prob.G.C_G)


def test_budget_error():
    prob = make_problem("quadratic-control")
    with pytest.raises(ResourceError):
        _solve(prob, budget_bytes=1000)


def test_residual_shrinks_under_refinement():
    prob = make_problem("quadratic-control")
    res = [np.max(np.abs(residual(_solve(prob, M=M, keep_all=True), 0.05, prob.H).values)) for M in (32, 64)]
    assert res[1] < res[0]


def test_z_grid_agrees_with_x_grid():
    prob = make_problem("heat-linear-G", a0=0.5)
    tz = solve_hjbz(prob.H, prob.G, SolverConfig(GridSpec(1, 1, 32, has_z=True), T=prob.T, a0=prob.a0))
    tx = _solve(prob, N=1)
    assert np.max(np.abs(tz.at(0.0).values[0] - tx.at(0.0).values)) <= 1e-12
    with pytest.raises(InvalidInputError):
        solve_hjbz(prob.H, prob.G, tx.config)
    with pytest.raises(InvalidInputError):
        solve_hjbn(prob.H, prob.G, tz.config)


def test_derivatives_and_holder():
    prob = make_problem("heat-linear-G", a0=0.0)
    traj = _solve(prob, N=1, M=64, keep_all=True)
    norms = derivative_sup_norms(traj, prob.T, 2)["norms"]
    # G = cos(2 pi x): |G'| = 2 pi, |G''| = 4 pi^2 up to difference error
    assert norms[0] == pytest.approx(2 * np.pi, rel=2e-3)
    assert norms[1] == pytest.approx(4 * np.pi**2, rel=2e-3)
    assert holder_ratio(traj, [0.0, prob.T]) > 0
    with pytest.raises(InvalidInputError):
        derivative_sup_norms(traj, 0.0, 0)


def test_policies():
    prob = make_problem("quadratic-control")
    traj = _solve(prob, keep_all=True)
    pol = extract_policy(traj, prob.H)
    X = np.random.default_rng(0).random((7, 2, 1))
    acts = pol(0.0, X)
    assert acts.shape == (7, 2, 1)
    assert np.allclose(acts, -np.clip(pol.momenta(0.0, X), -1, 1))
    with pytest.raises(UnsupportedOperationError):
        extract_saddle_policies(traj, prob.H)
    game = make_problem("separated-game")
    gt = _solve(game, keep_all=True)
    pa, pb = extract_saddle_policies(gt, game.H)
    assert pa(0.0, X).shape == pb(0.0, X).shape == (7, 2, 1)
