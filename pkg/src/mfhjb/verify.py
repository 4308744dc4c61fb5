"""Monte-Carlo simulation of controlled N-particle systems with common noise.

Dynamics, per path and particle ``i``::

    X^i <- wrap(X^i + b dt + sqrt(2 dt) xi^i + sqrt(2 a0 dt) xi^0)

with ``xi^0`` shared by all particles of a path.  The running cost uses the
left endpoint of each step; the terminal cost is ``G`` of the final
empirical measure.  Paths are simulated in fixed blocks, each with its own
RNG stream spawned from the master seed, so results do not depend on how the
blocks are scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, InvalidInputError
from .hamiltonians import ControlData, TerminalSpec
from .measures import EmpiricalMeasure, GridMeasure, draw
from .torus import wrap

BLOCK = 1024

Policy = Callable[[float, np.ndarray], np.ndarray]


@dataclass
class SimConfig:
    N: int
    d: int
    T: float
    t0: float = 0.0
    a0: float = 0.0
    dt_sim: float = 1e-3
    paths: int = 10_000
    seed: int = 0
    x0: np.ndarray | None = None
    m0: EmpiricalMeasure | GridMeasure | None = None
    shared_common: bool = True

    def __post_init__(self):
        if not self.dt_sim > 0:
            raise InvalidInputError("dt_sim must be positive")
        if self.paths < 1:
            raise InvalidInputError("paths must be >= 1")
        if not self.T > self.t0:
            raise InvalidInputError("T must exceed t0")
        if self.x0 is None and self.m0 is None:
            raise InvalidInputError("give an initial state x0 or an initial law m0")
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float).reshape(self.N, self.d)
            self.x0 = wrap(x0)

    @property
    def n_steps(self) -> int:
        return max(1, int(round((self.T - self.t0) / self.dt_sim)))


@dataclass
class CostEstimate:
    mean: float
    stderr: float
    paths: int
    costs: np.ndarray | None = field(default=None, repr=False)


def _estimate(costs: np.ndarray) -> CostEstimate:
    P = costs.size
    mean = float(np.sum(costs) / P)
    sd = float(np.std(costs, ddof=1)) if P > 1 else 0.0
    return CostEstimate(mean, sd / math.sqrt(P), P, costs)


def _initial(sim: SimConfig, n: int, rng) -> np.ndarray:
    if sim.x0 is not None:
        return np.broadcast_to(sim.x0, (n, sim.N, sim.d)).copy()
    return draw(sim.m0, n * sim.N, rng).reshape(n, sim.N, sim.d)


def _run(step_fn: Callable, G: TerminalSpec, sim: SimConfig, final: Callable | None = None) -> CostEstimate:
    """Simulate all paths; ``step_fn(t, X) -> (drift, running_cost)``."""
    n_blocks = math.ceil(sim.paths / BLOCK)
    streams = np.random.SeedSequence(sim.seed).spawn(n_blocks)
    dt = (sim.T - sim.t0) / sim.n_steps
    out = np.empty(sim.paths)
    stats = []
    for j, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        lo = j * BLOCK
        n = min(BLOCK, sim.paths - lo)
        X = _initial(sim, n, rng)
        cost = np.zeros(n)
        for k in range(sim.n_steps):
            t = sim.t0 + k * dt
            drift, run = step_fn(t, X)
            cost += dt * run
            dW = rng.standard_normal((n, sim.N, sim.d))
            if sim.shared_common:
                dW0 = rng.standard_normal((n, 1, sim.d))
            else:
                dW0 = rng.standard_normal((n, sim.N, sim.d))
            X = X + drift * dt + math.sqrt(2 * dt) * dW + math.sqrt(2 * sim.a0 * dt) * dW0
            if not np.all(np.isfinite(X)):
                raise DivergenceError(f"non-finite state at step {k} in block {j}")
            X = np.mod(X, 1.0)
        cost += G.func(X, None)
        out[lo:lo + n] = cost
        if final is not None:
            stats.append(final(X))
    est = _estimate(out)
    if final is not None:
        est.final_stats = np.concatenate(stats)
    return est


def simulate_cost(b: Callable, L: Callable, G: TerminalSpec, policy: Policy, sim: SimConfig,
                  final: Callable | None = None) -> CostEstimate:
    """Expected cost of a feedback policy for the N-particle control problem."""

    def step(t, X):
        a = policy(t, X)
        drift = np.stack([b(X[:, i], a[:, i], X, None) for i in range(sim.N)], axis=1)
        run = sum(L(X[:, i], a[:, i], X, None) for i in range(sim.N)) / sim.N
        return drift, run

    return _run(step, G, sim, final)


def simulate_game(b: Callable, L: Callable, G: TerminalSpec, policy_a: Policy, policy_b: Policy,
                  sim: SimConfig) -> CostEstimate:
    """Expected cost when player a (maximizer) and player b (minimizer) use feedback policies."""

    def step(t, X):
        a = policy_a(t, X)
        bb = policy_b(t, X)
        drift = np.stack([b(X[:, i], a[:, i], bb[:, i], X, None) for i in range(sim.N)], axis=1)
        run = sum(L(X[:, i], a[:, i], bb[:, i], X, None) for i in range(sim.N)) / sim.N
        return drift, run

    return _run(step, G, sim)


# ------------------------------------------------------------------ policies

def constant_policy(action, N: int) -> Policy:
    a = np.atleast_1d(np.asarray(action, dtype=float))

    def policy(t, X):
        return np.broadcast_to(a, X.shape[:2] + a.shape).copy()

    return policy


def anti_policy(control: ControlData, momenta: Callable[[float, np.ndarray], np.ndarray]) -> Policy:
    """Feedback choosing the grid action that minimizes ``-L - b.p`` (the worst response).

    Ties go to the lowest action index.
    """
    pts = control.actions.points

    def policy(t, X):
        q = momenta(t, X)
        out = []
        for i in range(X.shape[1]):
            x = X[:, None, i]
            atoms = X[:, None]
            val = control.L(x, pts, atoms, None) + np.sum(control.b(x, pts, atoms, None) * q[:, None, i], axis=-1)
            out.append(pts[np.argmax(val, axis=1)])
        return np.stack(out, axis=1)

    return policy


# ------------------------------------------------------------------ probes

@dataclass
class ProbeRow:
    policy_id: str
    mean: float
    stderr: float
    margin: float
    violation: bool


@dataclass
class ProbeReport:
    reference: float
    tolerance: float
    rows: list[ProbeRow]

    @property
    def violations(self) -> list[ProbeRow]:
        return [r for r in self.rows if r.violation]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["policy-id", "mean", "stderr", "margin"])
            for r in self.rows:
                w.writerow([r.policy_id, repr(r.mean), repr(r.stderr), repr(r.margin)])


def suboptimality_probe(
    b: Callable, L: Callable, G: TerminalSpec, reference: float, policies: dict[str, Policy],
    sim: SimConfig, tolerance: float = 2e-2, sigmas: float = 4.0,
) -> ProbeReport:
    """Cost of each alternative policy and its margin over the reference value.

    A policy is flagged when its margin falls below ``-(sigmas * stderr + tolerance)``.
    """
    rows = []
    for name, pol in policies.items():
        est = simulate_cost(b, L, G, pol, sim)
        margin = est.mean - reference
        rows.append(ProbeRow(name, est.mean, est.stderr, margin, margin < -(sigmas * est.stderr + tolerance)))
    return ProbeReport(reference, tolerance, rows)


def common_noise_statistic(X: np.ndarray) -> np.ndarray:
    """Per-path mean over particles of ``cos(2 pi x_1)``; its spread reflects the common noise."""
    return np.mean(np.cos(2 * np.pi * X[..., 0]), axis=1)


def default_alternatives(d: int, N: int, levels: Sequence[float] = (-1.0, -0.5, 0.0, 0.5, 1.0)) -> dict[str, Policy]:
    return {f"const{v:+.1f}": constant_policy(np.full(d, v), N) for v in levels}
