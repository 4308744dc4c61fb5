"""Backward IMEX scheme for the N-particle equation and its z-shifted form.

One step from ``t + dt`` to ``t``::

    W   = V - dt * (1/N) sum_i Hhat_i(V)                      (explicit)
    V'  = (1 + dt * sigma)^-1 W                               (implicit, Fourier)

with the Lax-Friedrichs numerical Hamiltonian per particle block

    Hhat_i = H(x^i, clip(N pbar_i), m_x) - (theta N / 2) sum_a (p+_ia - p-_ia).

The explicit part is monotone when ``dt * N * d * theta / dx <= 1`` and
``theta >= sup |D_p H|`` on the clipping ball; the default safety factor
keeps the left side at 1/2.  ``sigma`` is the lattice symbol of the diffusion
operator, whose resolvent has a nonnegative kernel, so the full step is
monotone and commutes with constants.
"""

from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from . import __version__, gridio
from .errors import ConfigError, DivergenceError, InvalidInputError, ResourceError, UnsupportedOperationError
from .hamiltonians import HamiltonianSpec, TerminalSpec, declared_rstar, dissipation
from .torus import (
    DEFAULT_BUDGET_BYTES,
    GridSpec,
    TorusGridFn,
    _diff,
    apply_multiplier,
    diffusion_symbol,
    interpolate,
    particle_positions,
)

log = logging.getLogger(__name__)

CFL_LIMIT = 0.5


@dataclass
class SolverConfig:
    """Discretization of one backward solve.

    ``dt`` may be left unset, in which case the largest uniform step with
    ``dt * N * d * theta / dx <= cfl_safety`` is used.  ``theta`` and
    ``p_clip`` default to values derived from the Hamiltonian (see
    :func:`resolve`).
    """

    grid: GridSpec
    T: float
    a0: float = 0.0
    dt: float | None = None
    cfl_safety: float = CFL_LIMIT
    theta: float | None = None
    p_clip: float | None = None
    snapshot_times: Sequence[float] | None = None
    keep_all: bool = False
    symbol: str = "lattice"
    budget_bytes: int | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.a0 < 0:
            raise ConfigError("a0 must be nonnegative")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.theta is not None and self.theta < 0:
            raise ConfigError("theta must be nonnegative")
        if not 0 < self.cfl_safety <= 1:
            raise ConfigError("cfl_safety must lie in (0, 1]")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def cfl_number(self) -> float:
        g = self.grid
        return self.dt * g.N * g.d * self.theta / g.dx


def resolve(cfg: SolverConfig, H: HamiltonianSpec, G: TerminalSpec | None = None, seed: int = 0) -> SolverConfig:
    """Fill in ``p_clip``, ``theta`` and ``dt`` and validate the CFL condition."""
    rstar = declared_rstar(H, G, cfg.T) if G is not None else None
    p_clip = cfg.p_clip
    if p_clip is None:
        p_clip = 1.2 * rstar if rstar is not None else 50.0
    elif rstar is not None and p_clip < rstar:
        warnings.warn(f"p_clip={p_clip} below declared R*={rstar:.4g}", stacklevel=2)
    theta = cfg.theta if cfg.theta is not None else dissipation(H, p_clip, seed=seed)
    g = cfg.grid
    dt = cfg.dt
    if dt is None:
        if theta > 0:
            dt_max = cfg.cfl_safety * g.dx / (g.N * g.d * theta)
            n = max(1, math.ceil(cfg.T / dt_max - 1e-9))
        else:
            n = max(1, math.ceil(cfg.T / 1e-3 - 1e-9))
        dt = cfg.T / n
    n = cfg.T / dt
    if abs(n - round(n)) > 1e-6:
        raise ConfigError(f"T={cfg.T} is not an integer multiple of dt={dt}")
    out = SolverConfig(
        grid=g, T=cfg.T, a0=cfg.a0, dt=cfg.T / round(n), cfl_safety=cfg.cfl_safety,
        theta=theta, p_clip=p_clip, snapshot_times=cfg.snapshot_times,
        keep_all=cfg.keep_all, symbol=cfg.symbol, budget_bytes=cfg.budget_bytes,
    )
    cfl = out.cfl_number()
    if cfl > CFL_LIMIT * (1 + 1e-9):
        raise ConfigError(
            f"CFL violated: dt*N*d*theta/dx = {cfl:.4g} > {CFL_LIMIT} "
            f"(dt={out.dt:.3g}, theta={theta:.3g}, dx={g.dx:.3g})"
        )
    return out


@dataclass
class SolutionTrajectory:
    config: SolverConfig
    times: list[float]
    snapshots: list[TorusGridFn]
    diagnostics: list[dict] = field(default_factory=list)
    problem: str = ""

    def index(self, t: float) -> int:
        """Index of the snapshot nearest to ``t``."""
        arr = np.asarray(self.times)
        return int(np.argmin(np.abs(arr - t)))

    def at(self, t: float, tol: float | None = None) -> TorusGridFn:
        i = self.index(t)
        tol = 0.5 * self.config.dt + 1e-12 if tol is None else tol
        if abs(self.times[i] - t) > tol:
            raise InvalidInputError(f"no snapshot at t={t} (nearest {self.times[i]})")
        return self.snapshots[i]

    def bracket(self, t: float) -> tuple[int, int]:
        """Indices ``(lo, hi)`` of consecutive snapshots with ``t_lo <= t < t_hi``."""
        arr = np.asarray(self.times)
        for j in range(len(arr) - 1):
            hi, lo = arr[j], arr[j + 1]
            if lo - 1e-12 <= t <= hi + 1e-12 and hi > lo:
                return j + 1, j
        raise InvalidInputError(f"no pair of snapshots brackets t={t}")


# ------------------------------------------------------------------ grid data

def node_positions(grid: GridSpec) -> np.ndarray:
    """Particle positions per node, shape (size, N, d); z-grids get ``x^i + z``."""
    x, z = particle_positions(grid)
    if z is not None:
        x = np.mod(x + z[:, None, :], 1.0)
    return x


def terminal_grid(G: TerminalSpec, grid: GridSpec) -> TorusGridFn:
    """``G`` of each node's empirical measure (shifted by ``z`` on z-grids)."""
    pos = node_positions(grid)
    return TorusGridFn(grid, G.func(pos, None))


def clip_norm(q: np.ndarray, radius: float) -> np.ndarray:
    """Project momenta (..., d) onto the closed ball of the given radius."""
    norm = np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    scale = np.minimum(1.0, radius / np.maximum(norm, 1e-300))
    return q * scale


def hamiltonian_term(
    V: np.ndarray, grid: GridSpec, pos: np.ndarray, H: HamiltonianSpec, theta: float, p_clip: float,
    potentials: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, float]:
    """``(1/N) sum_i Hhat_i`` on the grid and the largest ``|N pbar|`` seen.

    ``potentials`` holds precomputed ``potential(x^i, m_x)`` per particle for
    Hamiltonians declaring a ``split``.
    """
    N, d, h = grid.N, grid.d, grid.dx
    total = np.zeros(grid.shape)
    pmax = 0.0
    for i in range(N):
        axes = grid.block_axes(i)
        pbar = np.empty((grid.size, d))
        jump = np.zeros(grid.shape)
        for a, ax in enumerate(axes):
            up = np.roll(V, -1, axis=ax)
            down = np.roll(V, 1, axis=ax)
            # pbar = (p+ + p-)/2 and p+ - p- from the same two neighbours
            pbar[:, a] = ((up - down) / (2.0 * h)).reshape(-1)
            jump += (up - 2.0 * V + down) / h
        q = N * pbar
        norm = np.sqrt(np.einsum("ij,ij->i", q, q))
        top = float(norm.max())
        pmax = max(pmax, top)
        if top > p_clip:
            q *= np.minimum(1.0, p_clip / np.maximum(norm, 1e-300))[:, None]
        if potentials is not None:
            hval = H.split[0](q) - potentials[i]
        else:
            hval = H.func(pos[:, i, :], q, pos, None)
        total += np.asarray(hval).reshape(grid.shape) - (0.5 * theta * N) * jump
    return total / N, pmax


def split_potentials(H: HamiltonianSpec, pos: np.ndarray) -> list[np.ndarray] | None:
    if H.split is None:
        return None
    return [np.asarray(H.split[1](pos[:, i, :], pos, None), dtype=float) * np.ones(pos.shape[0])
            for i in range(pos.shape[1])]


# ------------------------------------------------------------------ solve

def _snapshot_steps(cfg: SolverConfig) -> set[int]:
    n = cfg.n_steps
    if cfg.keep_all:
        return set(range(n + 1))
    wanted = {0, n}
    for t in cfg.snapshot_times or ():
        if not -1e-12 <= t <= cfg.T + 1e-12:
            raise ConfigError(f"snapshot time {t} outside [0, T]")
        wanted.add(int(round(t / cfg.dt)))
    return wanted


def _check_budget(cfg: SolverConfig, n_snap: int) -> None:
    """Working set plus stored snapshots must fit the budget."""
    g = cfg.grid
    budget = DEFAULT_BUDGET_BYTES if cfg.budget_bytes is None else cfg.budget_bytes
    need = g.memory_bytes() + 8 * g.size * n_snap
    if need > budget:
        raise ResourceError(
            f"grid d={g.d} N={g.N} M={g.M} has_z={g.has_z} with {n_snap} snapshots needs "
            f"~{need} bytes, budget is {budget}"
        )


def _solve(H, G, cfg: SolverConfig, grid: GridSpec, name: str, workers: int | None) -> SolutionTrajectory:
    steps = _snapshot_steps(cfg)
    _check_budget(cfg, len(steps))
    pos = node_positions(grid)
    sym = diffusion_symbol(grid, cfg.a0, cfg.symbol)
    resolvent = 1.0 / (1.0 + cfg.dt * sym)
    V = terminal_grid(G, grid).values
    potentials = split_potentials(H, pos)
    n = cfg.n_steps
    times, snaps, diags = [], [], []
    if n in steps:
        times.append(cfg.T)
        snaps.append(TorusGridFn(grid, V.copy()))
    with sfft.set_workers(workers or 1):
        for k in range(n - 1, -1, -1):
            ham, pmax = hamiltonian_term(V, grid, pos, H, cfg.theta, cfg.p_clip, potentials)
            W = V - cfg.dt * ham
            V_new = apply_multiplier(W, resolvent)
            if not np.all(np.isfinite(V_new)):
                raise DivergenceError(f"non-finite values at step {n - k} (t={k * cfg.dt:.6g})")
            diags.append({"t": k * cfg.dt, "max_update": float(np.max(np.abs(V_new - V))),
                          "lip": pmax})
            V = V_new
            if k in steps:
                times.append(k * cfg.dt)
                snaps.append(TorusGridFn(grid, V.copy()))
    return SolutionTrajectory(cfg, times, snaps, diags, name)


def solve_hjbn(
    H: HamiltonianSpec, G: TerminalSpec, cfg: SolverConfig, seed: int = 0, workers: int | None = None
) -> SolutionTrajectory:
    """Solve the N-particle equation backward from ``T`` on ``(T^d)^N``."""
    if cfg.grid.has_z:
        raise InvalidInputError("solve_hjbn expects a grid without z; use solve_hjbz")
    cfg = resolve(cfg, H, G, seed)
    return _solve(H, G, cfg, cfg.grid, H.name, workers)


def solve_hjbz(
    H: HamiltonianSpec, G: TerminalSpec, cfg: SolverConfig, seed: int = 0, workers: int | None = None
) -> SolutionTrajectory:
    """Solve the z-shifted equation on ``T^d x (T^d)^N``.

    Data are evaluated at the shifted particles ``x^i + z``; the common noise
    acts as ``a0 Delta_z``.
    """
    if not cfg.grid.has_z:
        raise InvalidInputError("solve_hjbz needs a grid with has_z")
    cfg = resolve(cfg, H, G, seed)
    return _solve(H, G, cfg, cfg.grid, H.name, workers)


# ------------------------------------------------------------------ diagnostics

def spectral_generator(V: np.ndarray, grid: GridSpec, a0: float) -> np.ndarray:
    """``L V`` with the exact Fourier symbol of the diffusion operator."""
    return apply_multiplier(V, -diffusion_symbol(grid, a0, "spectral"))


def hamiltonian_centered(V: np.ndarray, grid: GridSpec, pos: np.ndarray, H: HamiltonianSpec) -> np.ndarray:
    """``(1/N) sum_i H(x^i, N D_i V, m_x)`` with centered differences and no clipping."""
    N, d, h = grid.N, grid.d, grid.dx
    total = np.zeros(grid.shape)
    for i in range(N):
        axes = grid.block_axes(i)
        p = np.stack([_diff(V, ax, "centered", h).reshape(-1) for ax in axes], axis=-1)
        total += np.asarray(H.func(pos[:, i, :], N * p, pos, None)).reshape(grid.shape)
    return total / N


def residual(traj: SolutionTrajectory, t: float, H: HamiltonianSpec) -> TorusGridFn:
    """Discrete residual ``-D_t V - L V + (1/N) sum_i H`` at the snapshot pair bracketing ``t``.

    ``D_t`` is the difference quotient of the bracketing snapshots, the
    diffusion is applied to the earlier snapshot and the Hamiltonian to the
    later one, mirroring the splitting of the scheme.
    """
    lo, hi = traj.bracket(t)
    t_lo, t_hi = traj.times[lo], traj.times[hi]
    V_lo, V_hi = traj.snapshots[lo].values, traj.snapshots[hi].values
    grid = traj.snapshots[lo].spec
    dt = t_hi - t_lo
    pos = node_positions(grid)
    res = -(V_hi - V_lo) / dt - spectral_generator(V_lo, grid, traj.config.a0)
    res = res + hamiltonian_centered(V_hi, grid, pos, H)
    return TorusGridFn(grid, res)


def derivative_sup_norms(traj: SolutionTrajectory | TorusGridFn, t: float | None = None, k_max: int = 2) -> dict:
    """``max_n ||D^k_{x^n} V||_inf`` for ``k = 1..k_max`` by periodic differences.

    Order 1 uses the Euclidean norm of the centered gradient of each block;
    higher orders take the largest entry over all multi-indices of that order,
    built from second differences (even part) and one centered difference.
    Returns ``{"norms": [...], "scaled": [N * ...]}``.
    """
    f = traj if isinstance(traj, TorusGridFn) else traj.at(t)
    grid, V, h = f.spec, f.values, f.spec.dx
    if k_max < 1:
        raise InvalidInputError("k_max must be >= 1")
    if k_max > grid.M // 2:
        raise InvalidInputError(f"order {k_max} stencil exceeds M/2 = {grid.M // 2}")
    norms = []
    for k in range(1, k_max + 1):
        best = 0.0
        for i in range(grid.N):
            axes = grid.block_axes(i)
            if k == 1:
                g2 = sum(_diff(V, ax, "centered", h) ** 2 for ax in axes)
                best = max(best, float(np.sqrt(np.max(g2))))
                continue
            for j in _multi(len(axes), k):
                D = V
                for a, ja in zip(axes, j):
                    for _ in range(ja // 2):
                        D = _diff(D, a, "second", h)
                    if ja % 2:
                        D = _diff(D, a, "centered", h)
                best = max(best, float(np.max(np.abs(D))))
        norms.append(best)
    return {"norms": norms, "scaled": [grid.N * v for v in norms]}


def _multi(n: int, k: int):
    if n == 1:
        yield (k,)
        return
    for first in range(k + 1):
        for rest in _multi(n - 1, k - first):
            yield (first,) + rest


def holder_ratio(traj: SolutionTrajectory, times: Sequence[float] | None = None) -> float:
    """``max |V(t) - V(s)| / sqrt(|t - s|)`` over pairs of the given snapshot times."""
    idx = sorted({traj.index(t) for t in times}) if times is not None else range(len(traj.times))
    idx = list(idx)
    best = 0.0
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            i, j = idx[a], idx[b]
            gap = abs(traj.times[i] - traj.times[j])
            if gap <= 0:
                continue
            diff = float(np.max(np.abs(traj.snapshots[i].values - traj.snapshots[j].values)))
            best = max(best, diff / math.sqrt(gap))
    return best


# ------------------------------------------------------------------ policies

class FeedbackPolicy:
    """Feedback actions from a value trajectory.

    ``policy(t, X)`` with ``X`` of shape (P, N, d) returns per-particle actions
    of shape (P, N, da), reading the snapshot nearest to ``t``.
    """

    def __init__(self, traj: SolutionTrajectory, chooser: Callable):
        self.traj = traj
        self.chooser = chooser
        self._grads: dict[int, list[np.ndarray]] = {}

    def gradients(self, k: int) -> list[np.ndarray]:
        if k not in self._grads:
            f = self.traj.snapshots[k]
            g = f.spec
            self._grads[k] = [_diff(f.values, ax, "centered", g.dx) for ax in range(g.n_axes)]
        return self._grads[k]

    def momenta(self, t: float, X: np.ndarray) -> np.ndarray:
        """Clipped ``N D_{x^i} V`` at states ``X``, shape (P, N, d)."""
        k = self.traj.index(t)
        grid = self.traj.snapshots[k].spec
        P, N, d = X.shape
        pts = X.reshape(P, N * d)
        grads = self.gradients(k)
        q = np.stack([interpolate(gr, pts) for gr in grads], axis=-1).reshape(P, N, d)
        return clip_norm(N * q, self.traj.config.p_clip)

    def __call__(self, t: float, X: np.ndarray):
        X = np.asarray(X, dtype=float)
        q = self.momenta(t, X)
        out = [self.chooser(X[:, i, :], q[:, i, :], X, None) for i in range(X.shape[1])]
        if isinstance(out[0], tuple):
            return tuple(np.stack([o[j] for o in out], axis=1) for j in range(len(out[0])))
        return np.stack(out, axis=1)


def extract_policy(traj: SolutionTrajectory, H: HamiltonianSpec) -> FeedbackPolicy:
    """Optimal feedback ``a*_i = argmax_action(x^i, clip(N D_i V), m_x)``."""
    if H.argmax_action is None:
        raise UnsupportedOperationError(f"Hamiltonian {H.name!r} has no argmax_action")
    if traj.config.grid.has_z:
        raise UnsupportedOperationError("policies are extracted from x-grid trajectories")
    return FeedbackPolicy(traj, H.argmax_action)


def extract_saddle_policies(traj: SolutionTrajectory, H: HamiltonianSpec) -> tuple[Callable, Callable]:
    """Feedback policies ``(a, b)`` for both players from a game Hamiltonian."""
    if H.saddle_actions is None:
        raise UnsupportedOperationError(f"Hamiltonian {H.name!r} has no saddle_actions")
    joint = FeedbackPolicy(traj, H.saddle_actions)
    return (lambda t, X: joint(t, X)[0]), (lambda t, X: joint(t, X)[1])


# ------------------------------------------------------------------ output

def config_meta(traj: SolutionTrajectory, seed: int = 0) -> dict:
    c = traj.config
    g = c.grid
    return {
        "problem": traj.problem, "N": g.N, "M": g.M, "d": g.d, "has_z": int(g.has_z),
        "a0": repr(c.a0), "T": repr(c.T), "dt": repr(c.dt), "theta": repr(c.theta),
        "p_clip": repr(c.p_clip), "symbol": c.symbol, "seed": seed, "version": __version__,
    }


def write_snapshots(traj: SolutionTrajectory, out_dir, seed: int = 0, stem: str = "V") -> list[Path]:
    """One dump per snapshot plus a ``.meta`` sidecar; returns the dump paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, (t, f) in enumerate(zip(traj.times, traj.snapshots)):
        p = out / f"{stem}_{k:04d}.mfhj"
        gridio.write_grid(p, f)
        meta = dict(config_meta(traj, seed), t=repr(t), index=k)
        gridio.write_meta(p.with_suffix(".meta"), meta)
        paths.append(p)
    return paths


def digest(traj: SolutionTrajectory) -> str:
    h = hashlib.sha256()
    for f in traj.snapshots:
        h.update(gridio.dumps(f))
    return h.hexdigest()
