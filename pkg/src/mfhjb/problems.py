"""Built-in problem registry.

Every problem ships a Hamiltonian with declared constants, terminal data, a
default horizon and common-noise intensity, plus the control or game data
needed to simulate it.  Hamiltonians are given in closed form; the closed
forms are checked against the generic grid constructions in the tests.

Registry names: ``quadratic-control``, ``separated-game``,
``nonisaacs-game``, ``heat-linear-G``, ``colehopf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, UnsupportedOperationError
from .hamiltonians import (
    ActionGrid,
    ControlData,
    GameData,
    HamiltonianSpec,
    TerminalSpec,
    weighted_mean,
)
from .torus import heat_convolve


@dataclass
class Problem:
    name: str
    d: int
    H: HamiltonianSpec
    G: TerminalSpec
    T: float
    a0: float
    params: dict = field(default_factory=dict)
    H_upper: HamiltonianSpec | None = None
    control: ControlData | None = None
    game: GameData | None = None
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def is_game(self) -> bool:
        return self.H_upper is not None


# ------------------------------------------------------------------ shared pieces

def _interaction(kappa: float, lam: float):
    """``f(x, m) = kappa int sum_a sin^2(pi (x_a - y_a)) dm + lam (int sum_a cos 2 pi y_a dm)^2``."""

    def f(x, atoms, weights):
        x = np.asarray(x, dtype=float)
        atoms = np.asarray(atoms, dtype=float)
        pair = np.sum(np.sin(np.pi * (x[..., None, :] - atoms)) ** 2, axis=-1)
        mean_cos = weighted_mean(np.sum(np.cos(2 * np.pi * atoms), axis=-1), weights)
        return kappa * weighted_mean(pair, weights) + lam * mean_cos**2

    return f


def _huber(p):
    """``sum_a h(p_a)`` with ``h = p^2/2`` on [-1, 1] and ``|p| - 1/2`` outside."""
    ap = np.abs(p)
    return np.sum(np.where(ap <= 1.0, 0.5 * p * p, ap - 0.5), axis=-1)


def _cos_sin_terminal(alpha: float, beta: float, offset: float = 0.0):
    def g(atoms, weights=None):
        atoms = np.asarray(atoms, dtype=float)
        c = weighted_mean(np.sum(np.cos(2 * np.pi * atoms), axis=-1), weights)
        s = weighted_mean(np.sum(np.sin(2 * np.pi * atoms), axis=-1), weights)
        return offset + alpha * c + beta * s * s

    return g


def _grid_extreme(fn: Callable, grid: np.ndarray, p, reducer):
    """Reduce ``fn(a, p)`` over scalar grid actions, vectorized over ``p``."""
    p = np.asarray(p, dtype=float)
    vals = fn(grid.reshape((-1,) + (1,) * p.ndim), p[None])
    return reducer(vals, axis=0)


# ------------------------------------------------------------------ problems

def quadratic_control(
    d: int = 1, kappa: float = 0.5, lam: float = 1.0, beta: float = 0.5,
    T: float = 0.1, a0: float = 1.0, n_actions: int = 201,
) -> Problem:
    """Drift ``b = a``, cost ``|a|^2/2 + f(x, m)``, actions in [-1, 1]^d."""
    f = _interaction(kappa, lam)

    def H(x, p, atoms, weights=None):
        return _huber(np.asarray(p, dtype=float)) - f(x, atoms, weights)

    def argmax(x, p, atoms, weights=None):
        return -np.clip(np.asarray(p, dtype=float), -1.0, 1.0)

    def b(x, a, atoms, weights=None):
        return np.asarray(a, dtype=float)

    def L(x, a, atoms, weights=None):
        a = np.asarray(a, dtype=float)
        return 0.5 * np.sum(a * a, axis=-1) + f(x, atoms, weights)

    grid_1d = np.linspace(-1.0, 1.0, n_actions)
    pts = np.stack(np.meshgrid(*([grid_1d] * d), indexing="ij"), axis=-1).reshape(-1, d)
    ctrl = ControlData(b, L, ActionGrid(pts))
    # x-Lipschitz of f is kappa*pi*sqrt(d); m-Lipschitz is kappa*pi*sqrt(d) + 4*pi*lam*d^1.5
    C_H = max(1.0, 2 * kappa * math.pi * math.sqrt(d) + 4 * math.pi * lam * d**1.5)
    C_G = 2 * math.pi * math.sqrt(d) * (1.0 + 2 * beta * d)
    ham = HamiltonianSpec(
        name="quadratic-control", d=d, func=H, C_H=C_H,
        dp_bound=lambda R: min(R, math.sqrt(d)), argmax_action=argmax, control=ctrl,
        split=(_huber, f),
    )
    term = TerminalSpec("quadratic-control", d, _cos_sin_terminal(1.0, beta), C_G=C_G)
    params = dict(d=d, kappa=kappa, lam=lam, beta=beta, T=T, a0=a0, n_actions=n_actions)
    return Problem("quadratic-control", d, ham, term, T, a0, params, control=ctrl)


def separated_game(
    d: int = 1, kappa: float = 1.0, lam: float = 0.5, beta: float = 0.5,
    T: float = 0.2, a0: float = 0.0, n_actions: int = 41,
) -> Problem:
    """Drift ``a + b``, cost ``|b|^2/2 - |a|^2 + f``; player a maximizes, b minimizes.

    The optimizations over ``a`` and ``b`` decouple, so the Isaacs condition
    holds exactly on the action grids.
    """
    if d != 1:
        raise ConfigError("separated-game is defined for d = 1")
    f = _interaction(kappa, lam)
    grid = np.linspace(-1.0, 1.0, n_actions)

    def part_b(bb, p):
        return -0.5 * bb * bb - bb * p

    def part_a(a, p):
        return a * a - a * p

    def kinetic(p):
        q = np.asarray(p, dtype=float)[..., 0]
        return _grid_extreme(part_b, grid, q, np.max) + _grid_extreme(part_a, grid, q, np.min)

    def H(x, p, atoms, weights=None):
        return kinetic(p) - f(x, atoms, weights)

    def saddle(x, p, atoms, weights=None):
        q = np.asarray(p, dtype=float)[..., 0]
        ia = np.argmin(part_a(grid.reshape(-1, *([1] * q.ndim)), q[None]), axis=0)
        ib = np.argmax(part_b(grid.reshape(-1, *([1] * q.ndim)), q[None]), axis=0)
        return grid[ia][..., None], grid[ib][..., None]

    def b(x, a, bb, atoms, weights=None):
        return np.asarray(a, dtype=float) + np.asarray(bb, dtype=float)

    def L(x, a, bb, atoms, weights=None):
        a = np.asarray(a, dtype=float)[..., 0]
        bb = np.asarray(bb, dtype=float)[..., 0]
        return 0.5 * bb * bb - a * a + f(x, atoms, weights)

    game = GameData(b, L, ActionGrid(grid), ActionGrid(grid))
    C_H = max(1.0, 2 * kappa * math.pi + 4 * math.pi * lam)
    common = dict(d=d, C_H=C_H, dp_bound=lambda R: min(R, 0.5), saddle_actions=saddle, game=game,
                  split=(kinetic, f))
    hm = HamiltonianSpec(name="separated-game-lower", func=H, **common)
    hp = HamiltonianSpec(name="separated-game-upper", func=H, **common)
    term = TerminalSpec("separated-game", d, _cos_sin_terminal(1.0, beta), C_G=2 * math.pi * (1 + 2 * beta))
    params = dict(d=d, kappa=kappa, lam=lam, beta=beta, T=T, a0=a0, n_actions=n_actions)
    return Problem("separated-game", d, hm, term, T, a0, params, H_upper=hp, game=game)


def nonisaacs_game(
    d: int = 1, kappa: float = 1.0, lam: float = 0.5, beta: float = 0.5,
    T: float = 0.2, a0: float = 0.0,
) -> Problem:
    """Drift ``a * b`` with ``a, b in {-1, 1}`` and action-free cost ``f``.

    ``H- = |p| - f`` and ``H+ = -|p| - f``: the Isaacs condition fails
    wherever ``p != 0``.
    """
    if d != 1:
        raise ConfigError("nonisaacs-game is defined for d = 1")
    f = _interaction(kappa, lam)
    grid = np.array([-1.0, 1.0])

    def kin_minus(p):
        return np.abs(np.asarray(p, dtype=float)[..., 0])

    def kin_plus(p):
        return -np.abs(np.asarray(p, dtype=float)[..., 0])

    def h_minus(x, p, atoms, weights=None):
        return kin_minus(p) - f(x, atoms, weights)

    def h_plus(x, p, atoms, weights=None):
        return kin_plus(p) - f(x, atoms, weights)

    # ties broken towards the lowest grid index (-1)
    def saddle_minus(x, p, atoms, weights=None):
        q = np.asarray(p, dtype=float)[..., :1]
        return -np.ones_like(q), np.where(q > 0, 1.0, -1.0)

    def saddle_plus(x, p, atoms, weights=None):
        q = np.asarray(p, dtype=float)[..., :1]
        return np.where(q < 0, 1.0, -1.0), -np.ones_like(q)

    def b(x, a, bb, atoms, weights=None):
        return np.asarray(a, dtype=float) * np.asarray(bb, dtype=float)

    def L(x, a, bb, atoms, weights=None):
        return f(x, atoms, weights)

    game = GameData(b, L, ActionGrid(grid), ActionGrid(grid))
    C_H = max(1.0, 2 * kappa * math.pi + 4 * math.pi * lam)
    common = dict(d=d, C_H=C_H, dp_bound=lambda R: 1.0, game=game)
    hm = HamiltonianSpec(name="nonisaacs-game-lower", func=h_minus, saddle_actions=saddle_minus,
                         split=(kin_minus, f), **common)
    hp = HamiltonianSpec(name="nonisaacs-game-upper", func=h_plus, saddle_actions=saddle_plus,
                         split=(kin_plus, f), **common)
    term = TerminalSpec("nonisaacs-game", d, _cos_sin_terminal(1.0, beta), C_G=2 * math.pi * (1 + 2 * beta))
    params = dict(d=d, kappa=kappa, lam=lam, beta=beta, T=T, a0=a0)
    return Problem("nonisaacs-game", d, hm, term, T, a0, params, H_upper=hp, game=game)


def heat_linear(
    d: int = 1, amplitude: float = 1.0, offset: float = 0.0, T: float = 0.1, a0: float = 1.0
) -> Problem:
    """``H = 0`` and ``G(m) = offset + amplitude * int sum_a cos(2 pi x_a) dm``."""

    def H(x, p, atoms, weights=None):
        return np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(p)[:-1], np.shape(atoms)[:-2]))

    def argmax(x, p, atoms, weights=None):
        return np.zeros(np.shape(p))

    def b(x, a, atoms, weights=None):
        return np.zeros(np.shape(x))

    def L(x, a, atoms, weights=None):
        return np.zeros(np.shape(x)[:-1])

    ctrl = ControlData(b, L, ActionGrid(np.zeros((1, d))))
    ham = HamiltonianSpec(
        name="heat-linear-G", d=d, func=H, C_H=0.0, dp_bound=lambda R: 0.0,
        argmax_action=argmax, depends_on_m=False, depends_on_x=False, control=ctrl,
        split=(lambda p: np.zeros(np.shape(p)[:-1]), lambda x, atoms, weights=None: np.zeros(np.shape(x)[:-1])),
    )
    term = TerminalSpec("heat-linear-G", d, _cos_sin_terminal(amplitude, 0.0, offset),
                        C_G=2 * math.pi * abs(amplitude) * math.sqrt(d))
    params = dict(d=d, amplitude=amplitude, offset=offset, T=T, a0=a0)
    return Problem("heat-linear-G", d, ham, term, T, a0, params, control=ctrl)


def colehopf(T: float = 0.1, c1: float = 0.5, c2: float = 0.2) -> Problem:
    """Single particle on T^1, ``H(p) = p^2`` and ``G(m) = int g dm`` with a smooth ``g``.

    ``g(x) = c1 cos(2 pi x) + c2 sin(4 pi x)``.
    """

    def H(x, p, atoms, weights=None):
        p = np.asarray(p, dtype=float)
        return np.sum(p * p, axis=-1) + 0.0 * np.asarray(x)[..., 0]

    def g_point(x):
        return c1 * np.cos(2 * np.pi * x) + c2 * np.sin(4 * np.pi * x)

    def G(atoms, weights=None):
        return weighted_mean(g_point(np.asarray(atoms, dtype=float)[..., 0]), weights)

    def argmax(x, p, atoms, weights=None):
        return -2.0 * np.asarray(p, dtype=float)

    ham = HamiltonianSpec(
        name="colehopf", d=1, func=H, C_H=1.0, dp_bound=lambda R: 2.0 * R,
        argmax_action=argmax, depends_on_m=False, depends_on_x=False,
        split=(lambda p: np.sum(np.asarray(p) ** 2, axis=-1), lambda x, atoms, weights=None: np.zeros(np.shape(x)[:-1])),
    )
    term = TerminalSpec("colehopf", 1, G, C_G=2 * math.pi * (abs(c1) + 2 * abs(c2)))
    params = dict(T=T, c1=c1, c2=c2)
    return Problem("colehopf", 1, ham, term, T, 0.0, params, extras={"g": g_point})


def closed_form(problem: Problem, pos: np.ndarray, t: float) -> np.ndarray:
    """Exact ``V^N(t, .)`` at node positions ``pos`` of shape (*M^{dN}, N, d).

    Available for ``heat-linear-G`` (any N, d, a0) and for ``colehopf``
    (N = 1, via ``V = -log(heat * exp(-g))``).
    """
    tau = problem.T - t
    if problem.name == "heat-linear-G":
        p = problem.params
        decay = math.exp(-4 * math.pi**2 * (1 + problem.a0) * tau)
        modes = np.sum(np.cos(2 * np.pi * pos), axis=-1).mean(axis=-1)
        return p["offset"] + p["amplitude"] * decay * modes
    if problem.name == "colehopf":
        if pos.shape[-2:] != (1, 1):
            raise UnsupportedOperationError("the colehopf closed form needs N = 1, d = 1")
        g = problem.extras["g"](pos[..., 0, 0])
        return -np.log(heat_convolve(np.exp(-g), 2.0 * tau))
    raise UnsupportedOperationError(f"no closed form for {problem.name!r}")


REGISTRY: dict[str, Callable[..., Problem]] = {
    "quadratic-control": quadratic_control,
    "separated-game": separated_game,
    "nonisaacs-game": nonisaacs_game,
    "heat-linear-G": heat_linear,
    "colehopf": colehopf,
}


def make_problem(name: str, **params) -> Problem:
    if name not in REGISTRY:
        raise ConfigError(f"unknown problem {name!r}; known: {', '.join(sorted(REGISTRY))}")
    try:
        return REGISTRY[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from exc
