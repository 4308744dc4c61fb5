"""Hamiltonians, terminal data, control/game constructions and constant estimation.

Evaluator conventions (all vectorized, leading dimensions broadcast):

* ``H.func(x, p, atoms, weights)`` with ``x`` and ``p`` of shape ``(..., d)``,
  ``atoms`` of shape ``(..., n, d)`` and ``weights`` of shape ``(..., n)`` or
  ``None`` for uniform weights.  Returns shape ``(...)``.
* ``G.func(atoms, weights)`` returns shape ``(...)``.
* Control data ``b(x, a, atoms, weights) -> (..., d)`` and
  ``L(x, a, atoms, weights) -> (...)`` with actions ``a`` of shape ``(..., da)``.
  Game data take two action arguments ``(x, a, b, atoms, weights)``.

Sign conventions: the controller minimizes cost and ``H = sup_a {-L - b.p}``.
In games player ``a`` maximizes the cost and player ``b`` minimizes it, so
``H- = min_a max_b`` and ``H+ = max_b min_a`` of ``-L - drift.p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.stats import truncnorm

from .errors import InvalidInputError
from .measures import EmpiricalMeasure, d1
from .torus import wrap

HFunc = Callable[..., np.ndarray]


def weighted_mean(vals: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    """Integrate per-atom values ``(..., n)`` against the weights."""
    if weights is None:
        return vals.mean(axis=-1)
    return np.sum(vals * weights, axis=-1)


@dataclass(frozen=True)
class ActionGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidInputError("ActionGrid must be nonempty")
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, lo: float, hi: float, n: int) -> "ActionGrid":
        return cls(np.linspace(lo, hi, n))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ControlData:
    b: Callable
    L: Callable
    actions: ActionGrid


@dataclass(frozen=True)
class GameData:
    b: Callable
    L: Callable
    A: ActionGrid
    B: ActionGrid


@dataclass(frozen=True)
class HamiltonianSpec:
    """Hamiltonian ``H(x, p, m)`` with declared structural constants.

    Parameters
    ----------
    func : callable
        Vectorized evaluator (see module docstring).
    C_H : float, optional
        Declared constant of the structural bound
        ``|H(x,p,m) - H(x',p',m')| <= C_H (1+|p|+|p'|)(|x-x'| + |p-p'| + d1(m,m'))``.
    dp_bound : callable, optional
        ``R -> sup_{|p| <= R} |D_p H|``; used to size the dissipation.
    argmax_action, saddle_actions : callable, optional
        Optimizers for control / game Hamiltonians.
    split : (kinetic, potential), optional
        Declares ``H = kinetic(p) - potential(x, atoms, weights)`` so solvers
        can evaluate the time-independent potential once.
    """

    name: str
    d: int
    func: HFunc
    C_H: float | None = None
    C_H_k: dict = field(default_factory=dict)
    dp_bound: Callable[[float], float] | None = None
    argmax_action: Callable | None = None
    saddle_actions: Callable | None = None
    depends_on_m: bool = True
    depends_on_x: bool = True
    control: ControlData | None = None
    game: GameData | None = None
    split: tuple[Callable, Callable] | None = None
    extras: dict = field(default_factory=dict, repr=False)

    def __call__(self, x, p, atoms, weights=None) -> np.ndarray:
        return self.func(x, p, atoms, weights)

    def evaluate(self, x, p, m: EmpiricalMeasure) -> float:
        x = np.asarray(x, dtype=float).reshape(self.d)
        p = np.asarray(p, dtype=float).reshape(self.d)
        return float(self.func(x, p, m.atoms, m.weights))


@dataclass(frozen=True)
class TerminalSpec:
    name: str
    d: int
    func: Callable
    C_G: float | None = None
    C_G_k: dict = field(default_factory=dict)

    def __call__(self, atoms, weights=None) -> np.ndarray:
        return self.func(atoms, weights)

    def evaluate(self, m: EmpiricalMeasure) -> float:
        return float(self.func(m.atoms, m.weights))


def declared_rstar(H: HamiltonianSpec, G: TerminalSpec, T: float) -> float | None:
    """``e^{2 C_H T} C_G`` from declared constants, or None if undeclared."""
    if H.C_H is None or G.C_G is None:
        return None
    return math.exp(2.0 * H.C_H * T) * G.C_G


# ------------------------------------------------------------------ control

def control_hamiltonian(
    b: Callable, L: Callable, actions: ActionGrid, d: int = 1, name: str = "control", **kw
) -> HamiltonianSpec:
    """``H(x,p,m) = max_{a in grid} {-L(x,a,m) - b(x,a,m).p}``; ties go to the lowest index."""
    if actions.size == 0:
        raise InvalidInputError("empty action grid")

    def _scan(x, p, atoms, weights):
        best = None
        arg = None
        for j, a in enumerate(actions.points):
            aa = np.broadcast_to(a, np.shape(x)[:-1] + (actions.dim,))
            val = -L(x, aa, atoms, weights) - np.sum(b(x, aa, atoms, weights) * p, axis=-1)
            if best is None:
                best = np.array(val, dtype=float)
                arg = np.zeros(np.shape(val), dtype=np.int64)
            else:
                better = val > best
                best = np.where(better, val, best)
                arg = np.where(better, j, arg)
        return best, arg

    def func(x, p, atoms, weights=None):
        return _scan(x, p, atoms, weights)[0]

    def argmax_action(x, p, atoms, weights=None):
        return actions.points[_scan(x, p, atoms, weights)[1]]

    return HamiltonianSpec(
        name=name, d=d, func=func, argmax_action=argmax_action,
        control=ControlData(b, L, actions), **kw,
    )


def isaacs_pair(
    b: Callable, L: Callable, A: ActionGrid, B: ActionGrid, d: int = 1, name: str = "game", **kw
) -> tuple[HamiltonianSpec, HamiltonianSpec]:
    """Lower and upper Hamiltonians ``(H-, H+)`` of a zero-sum game over action grids.

    ``saddle_actions`` returns ``(a, b)``: the outer optimizer and its inner
    best response.
    """
    if A.size == 0 or B.size == 0:
        raise InvalidInputError("empty action grid")

    def payoff(x, p, atoms, weights, a, bb):
        lead = np.shape(x)[:-1]
        aa = np.broadcast_to(a, lead + (A.dim,))
        bv = np.broadcast_to(bb, lead + (B.dim,))
        return -L(x, aa, bv, atoms, weights) - np.sum(b(x, aa, bv, atoms, weights) * p, axis=-1)

    def _nested(x, p, atoms, weights, outer_is_a: bool):
        outer, inner = (A, B) if outer_is_a else (B, A)
        # lower value: min over a of max over b; upper: max over b of min over a
        inner_max = outer_is_a
        best = best_o = best_i = None
        for jo, o in enumerate(outer.points):
            val = arg_i = None
            for ji, i in enumerate(inner.points):
                v = payoff(x, p, atoms, weights, o, i) if outer_is_a else payoff(x, p, atoms, weights, i, o)
                if val is None:
                    val = np.array(v, dtype=float)
                    arg_i = np.zeros(np.shape(v), dtype=np.int64)
                else:
                    better = v > val if inner_max else v < val
                    val = np.where(better, v, val)
                    arg_i = np.where(better, ji, arg_i)
            if best is None:
                best, best_o, best_i = val, np.zeros_like(arg_i), arg_i
            else:
                better = val < best if outer_is_a else val > best
                best = np.where(better, val, best)
                best_o = np.where(better, jo, best_o)
                best_i = np.where(better, arg_i, best_i)
        if outer_is_a:
            return best, A.points[best_o], B.points[best_i]
        return best, A.points[best_i], B.points[best_o]

    def h_minus(x, p, atoms, weights=None):
        return _nested(x, p, atoms, weights, True)[0]

    def h_plus(x, p, atoms, weights=None):
        return _nested(x, p, atoms, weights, False)[0]

    def saddle_minus(x, p, atoms, weights=None):
        return _nested(x, p, atoms, weights, True)[1:]

    def saddle_plus(x, p, atoms, weights=None):
        return _nested(x, p, atoms, weights, False)[1:]

    game = GameData(b, L, A, B)
    hm = HamiltonianSpec(name=f"{name}-lower", d=d, func=h_minus, saddle_actions=saddle_minus, game=game, **kw)
    hp = HamiltonianSpec(name=f"{name}-upper", d=d, func=h_plus, saddle_actions=saddle_plus, game=game, **kw)
    return hm, hp


# ------------------------------------------------------------------ mollification

@dataclass(frozen=True)
class _CommonNoise:
    """Fixed draws shared by every evaluation of a mollified functional."""

    u: np.ndarray       # (S, n) uniforms for categorical draws
    eta: np.ndarray     # (S, n, d) atom perturbations
    eta_x: np.ndarray   # (S, d)
    eta_p: np.ndarray   # (S, d)


def _common_noise(n: int, S: int, d: int, seed) -> _CommonNoise:
    rng = np.random.default_rng(seed)
    eps = 1.0 / n
    # Gaussian of std eps/2 truncated to |eta| <= eps: compact mollifier of bandwidth eps
    tn = truncnorm(-2.0, 2.0, scale=eps / 2.0)
    u = rng.random((S, n))
    eta = tn.rvs(size=(S, n, d), random_state=rng)
    eta_x = tn.rvs(size=(S, d), random_state=rng)
    eta_p = tn.rvs(size=(S, d), random_state=rng)
    return _CommonNoise(u, eta, eta_x, eta_p)


def _draw_atoms(atoms, weights, u):
    """Categorical draws of atoms by inverse CDF with fixed uniforms ``u`` (S, n)."""
    k = atoms.shape[-2]
    lead = atoms.shape[:-2]
    if weights is None:
        idx = np.minimum((u * k).astype(np.int64), k - 1)
        idx = np.broadcast_to(idx, lead + u.shape)
    else:
        cdf = np.cumsum(weights, axis=-1)
        cdf = cdf / cdf[..., -1:]
        idx = np.sum(cdf[..., None, None, :] <= u[..., None], axis=-1)
        idx = np.minimum(idx, k - 1)
    flat_atoms = atoms.reshape((-1, k, atoms.shape[-1]))
    flat_idx = idx.reshape((flat_atoms.shape[0],) + u.shape)
    rows = np.arange(flat_atoms.shape[0])[:, None, None]
    out = flat_atoms[rows, flat_idx]
    return out.reshape(lead + u.shape + (atoms.shape[-1],))


def mollified_h_stats(H: HamiltonianSpec, noise: _CommonNoise, x, p, atoms, weights=None, chunk: int = 4096):
    """Mean and standard error over the replicates of the mollified Hamiltonian."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    atoms = np.asarray(atoms, dtype=float)
    lead = np.broadcast_shapes(x.shape[:-1], p.shape[:-1], atoms.shape[:-2])
    x = np.broadcast_to(x, lead + x.shape[-1:])
    p = np.broadcast_to(p, lead + p.shape[-1:])
    atoms = np.broadcast_to(atoms, lead + atoms.shape[-2:])
    if weights is not None:
        weights = np.broadcast_to(np.asarray(weights, dtype=float), lead + atoms.shape[-2:-1])
    S = noise.u.shape[0]
    s1 = np.zeros(lead)
    s2 = np.zeros(lead)
    for lo in range(0, S, chunk):
        sl = slice(lo, min(S, lo + chunk))
        ys = _draw_atoms(atoms, weights, noise.u[sl])            # (..., s, n, d)
        ys = wrap(ys + noise.eta[sl])
        xs = wrap(x[..., None, :] + noise.eta_x[sl])
        ps = p[..., None, :] + noise.eta_p[sl]
        vals = H.func(xs, ps, ys, None)
        s1 += vals.sum(axis=-1)
        s2 += (vals * vals).sum(axis=-1)
    mean = s1 / S
    var = np.maximum(s2 / S - mean * mean, 0.0)
    return mean, np.sqrt(var / max(S - 1, 1))


def mollified_g_stats(G: TerminalSpec, noise: _CommonNoise, atoms, weights=None, chunk: int = 4096):
    atoms = np.asarray(atoms, dtype=float)
    lead = atoms.shape[:-2]
    S = noise.u.shape[0]
    s1 = np.zeros(lead)
    s2 = np.zeros(lead)
    for lo in range(0, S, chunk):
        sl = slice(lo, min(S, lo + chunk))
        ys = wrap(_draw_atoms(atoms, weights, noise.u[sl]) + noise.eta[sl])
        vals = G.func(ys, None)
        s1 += vals.sum(axis=-1)
        s2 += (vals * vals).sum(axis=-1)
    mean = s1 / S
    var = np.maximum(s2 / S - mean * mean, 0.0)
    return mean, np.sqrt(var / max(S - 1, 1))


def mollify_data(
    H: HamiltonianSpec, G: TerminalSpec, n: int, S: int, seed: int = 0
) -> tuple[HamiltonianSpec, TerminalSpec]:
    """Finite-dimensional mollified data ``(H^n, G^n)``.

    ``H^n(x,p,m)`` averages ``H(x+eta0, p+eta1, m^n_{Y+eta})`` over ``S``
    replicates with ``Y ~ m^{(x)n}`` and perturbations of bandwidth ``1/n``.
    The replicate draws are fixed by ``seed``, so ``H^n`` is a deterministic
    function shared by every evaluation point.
    """
    if n < 1 or S < 1:
        raise InvalidInputError("mollify_data needs n >= 1 and S >= 1")
    noise = _common_noise(n, S, H.d, seed)

    def h_func(x, p, atoms, weights=None):
        return mollified_h_stats(H, noise, x, p, atoms, weights)[0]

    def g_func(atoms, weights=None):
        return mollified_g_stats(G, noise, atoms, weights)[0]

    def dp_bound(R):
        # mollification in p widens the momentum range by at most 1/n
        return H.dp_bound(R + 1.0 / n) if H.dp_bound is not None else None

    Hn = HamiltonianSpec(
        name=f"{H.name}-moll{n}", d=H.d, func=h_func, C_H=H.C_H,
        dp_bound=dp_bound if H.dp_bound is not None else None,
        depends_on_m=H.depends_on_m, depends_on_x=H.depends_on_x,
        extras={"noise": noise, "base": H},
    )
    Gn = TerminalSpec(name=f"{G.name}-moll{n}", d=G.d, func=g_func, C_G=G.C_G)
    return Hn, Gn


# ------------------------------------------------------------------ constants

@dataclass(frozen=True)
class ConstantsEstimate:
    """Empirical lower bounds on the structural constants."""

    C_H: float
    C_G: float
    R_star: float
    T: float
    probes: int


def _random_measure_pair(rng, d: int):
    n = int(rng.integers(1, 5))
    atoms = rng.random((n, d))
    mode = rng.integers(0, 3)
    scale = 10.0 ** rng.uniform(-3, -0.3)
    if mode == 0:
        other = atoms + scale * rng.standard_normal((n, d))
    elif mode == 1:
        other = atoms.copy()
        j = rng.integers(n)
        other[j] += scale * rng.standard_normal(d)
    else:
        other = rng.random((n, d))
    return EmpiricalMeasure(atoms), EmpiricalMeasure(other)


def probe_set(P: int, d: int, p_max: float, seed):
    """Random probe quadruples ``(x, x', p, p', m, m')`` mixing near and far pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(P):
        x = rng.random(d)
        scale = 10.0 ** rng.uniform(-3, -0.3)
        near = rng.random() < 0.5
        x2 = x + scale * rng.standard_normal(d) if near else rng.random(d)
        p = rng.uniform(-p_max, p_max, d)
        p2 = p + scale * rng.standard_normal(d) if near else rng.uniform(-p_max, p_max, d)
        m, m2 = _random_measure_pair(rng, d)
        which = rng.integers(0, 4)
        # isolate one argument at a time in a share of the probes
        if which == 1:
            x2, p2 = x.copy(), p.copy()
        elif which == 2:
            x2, m2 = x.copy(), m
        elif which == 3:
            p2, m2 = p.copy(), m
        out.append((wrap(x), wrap(x2), p, p2, m, EmpiricalMeasure(wrap(m2.atoms), m2.weights)))
    return out


def estimate_constants(
    H: HamiltonianSpec, G: TerminalSpec, P: int = 1000, seed: int = 0, T: float = 1.0,
    p_max: float = 4.0,
) -> ConstantsEstimate:
    """Empirical maxima of the structural ratios over ``P`` random probes."""
    if P < 1:
        raise InvalidInputError("P must be >= 1")
    d = H.d
    ch = 0.0
    cg = 0.0
    for x, x2, p, p2, m, m2 in probe_set(P, d, p_max, seed):
        dm = d1(m, m2) if m.n == m2.n else 0.0
        denom = (1 + np.linalg.norm(p) + np.linalg.norm(p2)) * (
            float(np.linalg.norm(_torus_diff(x, x2))) + float(np.linalg.norm(p - p2)) + dm
        )
        if denom > 1e-12:
            dh = abs(H.evaluate(x, p, m) - H.evaluate(x2, p2, m2))
            ch = max(ch, dh / denom)
        if dm > 1e-12:
            cg = max(cg, abs(G.evaluate(m) - G.evaluate(m2)) / dm)
    return ConstantsEstimate(ch, cg, math.exp(2.0 * ch * T) * cg, T, P)


def _torus_diff(x, y):
    diff = np.mod(np.asarray(x) - np.asarray(y) + 0.5, 1.0) - 0.5
    return diff


def estimate_dp_bound(H: HamiltonianSpec, R: float, P: int = 400, seed: int = 0) -> float:
    """Empirical ``sup_{|p| <= R} |D_p H|`` by centered finite differences."""
    rng = np.random.default_rng(seed)
    d = H.d
    n = 4
    x = rng.random((P, d))
    atoms = rng.random((P, n, d))
    dirs = rng.standard_normal((P, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = R * np.sqrt(rng.random(P))
    radii[: P // 8] = R
    p = dirs * radii[:, None]
    step = 1e-6 * (1.0 + R)
    grad = np.zeros((P, d))
    for a in range(d):
        e = np.zeros(d)
        e[a] = step
        grad[:, a] = (H.func(x, p + e, atoms, None) - H.func(x, p - e, atoms, None)) / (2 * step)
    return float(np.max(np.linalg.norm(grad, axis=1)))


def dissipation(H: HamiltonianSpec, p_clip: float, seed: int = 0) -> float:
    """Per-axis Lax-Friedrichs coefficient: 1.1 times the momentum sensitivity bound."""
    bound = H.dp_bound(p_clip) if H.dp_bound is not None else None
    if bound is None:
        bound = estimate_dp_bound(H, p_clip, seed=seed)
    return 1.1 * float(bound)


def with_name(H: HamiltonianSpec, name: str) -> HamiltonianSpec:
    return replace(H, name=name)
