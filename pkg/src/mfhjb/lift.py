"""Lift of particle values to measures, its linear derivative and cross-N diagnostics.

``Vhat(t, m) = int V(t, y) m^{(x)N}(dy)`` where ``V`` is the multilinear
interpolant of the grid solution.  The exact-tensor method contracts the grid
with the node weights of :func:`mfhjb.measures.grid_weights`, so it is the
expectation that the Monte-Carlo method estimates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DiagnosticError, InvalidInputError, ResourceError
from .measures import (
    EmpiricalMeasure,
    GridMeasure,
    SobolevParams,
    c_neg_k_gap,
    d1,
    draw,
    empirical_coeffs,
    grid_weights,
    h_neg_k_norm,
)
from .report import RunReport
from .solver import SolutionTrajectory, SolverConfig, derivative_sup_norms, holder_ratio, solve_hjbn
from .torus import DEFAULT_BUDGET_BYTES, GridSpec, TorusGridFn, interpolate

Method = Literal["exact", "mc"]
Measure = EmpiricalMeasure | GridMeasure


@dataclass
class LiftEvaluation:
    t: float
    value: float
    method: str
    samples: int = 0
    stderr: float = 0.0


def _values(traj_or_fn, t) -> TorusGridFn:
    if isinstance(traj_or_fn, TorusGridFn):
        return traj_or_fn
    return traj_or_fn.at(t)


def _contract(V: np.ndarray, w: np.ndarray, blocks: int) -> np.ndarray:
    """Contract the leading ``blocks`` particle blocks of ``V`` with weights ``w``."""
    wf = w.reshape(-1)
    R = V.reshape(-1)
    for _ in range(blocks):
        R = wf @ R.reshape(wf.size, -1)
    return R


def _check_exact(f: TorusGridFn, budget: int | None) -> None:
    need = f.spec.size * 8 * 2
    limit = DEFAULT_BUDGET_BYTES if budget is None else budget
    if need > limit:
        raise ResourceError(f"exact-tensor lift needs ~{need} bytes, budget is {limit}")


def project_vhat(
    traj: SolutionTrajectory | TorusGridFn, t: float, m: Measure, method: Method = "exact",
    samples: int = 100_000, seed: int = 0, budget_bytes: int | None = None, chunk: int = 20_000,
) -> LiftEvaluation:
    """``Vhat(t, m)`` by exact tensor contraction or by Monte Carlo."""
    f = _values(traj, t)
    grid = f.spec
    if grid.has_z:
        raise InvalidInputError("the lift is defined on x-grids")
    if m.d != grid.d:
        raise InvalidInputError(f"measure dimension {m.d} does not match grid d={grid.d}")
    if method == "exact":
        _check_exact(f, budget_bytes)
        w = grid_weights(m, grid.M)
        return LiftEvaluation(t, float(_contract(f.values, w, grid.N)[0]), "exact")
    if method != "mc":
        raise InvalidInputError(f"unknown lift method {method!r}")
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        Y = draw(m, n * grid.N, rng).reshape(n, grid.N * grid.d)
        vals = interpolate(f, Y)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
        done += n
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return LiftEvaluation(t, mean, "mc", samples, math.sqrt(var / max(samples - 1, 1)))


def linear_derivative_grid(traj: SolutionTrajectory | TorusGridFn, t: float, m: Measure) -> np.ndarray:
    """Nodal values of the recentred linear derivative ``x -> dVhat/dm(t, m, x)`` (exact tensor).

    Slot ``i`` is contracted against ``m`` in every other block; the sum over
    slots is recentred to have zero mean over T^d.
    """
    f = _values(traj, t)
    grid = f.spec
    w = grid_weights(m, grid.M).reshape(-1)
    K = w.size
    V = f.values.reshape((K,) * grid.N)
    out = np.zeros(K)
    for i in range(grid.N):
        R = np.moveaxis(V, i, -1).reshape(-1)
        for _ in range(grid.N - 1):
            R = w @ R.reshape(K, -1)
        out += R.reshape(K)
    out -= out.mean()
    return out.reshape((grid.M,) * grid.d)


def vhat_linear_derivative(
    traj: SolutionTrajectory | TorusGridFn, t: float, m: Measure, x, method: Method = "exact",
    samples: int = 20_000, seed: int = 0,
) -> np.ndarray | float:
    """``dVhat/dm(t, m, x)`` normalized to integrate to zero in ``x``.

    ``x`` is a point of shape (d,) or an array of points (n, d).
    """
    f = _values(traj, t)
    grid = f.spec
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if method == "exact":
        F = linear_derivative_grid(f, t, m)
        vals = interpolate(F, pts)
        return float(vals[0]) if scalar else vals
    if method != "mc":
        raise InvalidInputError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    N, d, M = grid.N, grid.d, grid.M
    Y = draw(m, samples * N, rng).reshape(samples, N, d)
    # recentring grid: nodes of T^d (node mean equals the integral of the interpolant)
    nodes = np.stack(np.meshgrid(*([np.arange(M) / M] * d), indexing="ij"), axis=-1).reshape(-1, d)

    def raw(points):
        out = np.zeros(points.shape[0])
        for j, xp in enumerate(points):
            acc = 0.0
            for i in range(N):
                Z = Y.copy()
                Z[:, i, :] = xp
                acc += float(np.mean(interpolate(f, Z.reshape(samples, N * d))))
            out[j] = acc
        return out

    vals = raw(pts) - float(np.mean(raw(nodes)))
    return float(vals[0]) if scalar else vals


# ------------------------------------------------------------------ Lipschitz profiles

@dataclass
class LipschitzProfile:
    metric: str
    max_ratio: float
    quantiles: dict
    pairs: int
    skipped: int


def sample_pairs(d: int, P: int, seed: int, n_atoms: int = 4, uniform: bool = False):
    """Measure pairs probing near and far regimes: atom jitter at several scales, reweightings, random pairs."""
    rng = np.random.default_rng(seed)
    scales = (1e-3, 1e-2, 1e-1)
    out = []
    for k in range(P):
        atoms = rng.random((n_atoms, d))
        kind = k % 5
        w = None
        if kind < 3:
            other = atoms + scales[kind] * rng.standard_normal((n_atoms, d))
            w2 = None
        elif kind == 3 and not uniform:
            w = rng.dirichlet(np.ones(n_atoms))
            w2 = w + 0.1 * (rng.dirichlet(np.ones(n_atoms)) - w)
            other = atoms
        else:
            other = rng.random((n_atoms, d))
            w2 = None
        out.append((EmpiricalMeasure(atoms, w), EmpiricalMeasure(other, w2 if w2 is None else w2 / w2.sum())))
    return out


def metric_value(metric: str, mu: EmpiricalMeasure, nu: EmpiricalMeasure, k: int, max_mode: int, size: int) -> float:
    if metric == "d1":
        return d1(mu, nu)
    if metric == "h_neg_k":
        q = empirical_coeffs(mu, max_mode) - empirical_coeffs(nu, max_mode)
        return h_neg_k_norm(q, SobolevParams(k, max_mode, mu.d))[0]
    if metric == "c_neg_k":
        return c_neg_k_gap(mu, nu, k, size)
    raise InvalidInputError(f"unknown metric {metric!r}")


def lipschitz_profile(
    traj: SolutionTrajectory | TorusGridFn, t: float, metric: str = "d1", P: int = 200, seed: int = 0,
    k: int | None = None, max_mode: int | None = None, dictionary_size: int = 16, n_atoms: int = 4,
) -> LipschitzProfile:
    """Largest ``|Vhat(m) - Vhat(m')| / metric(m, m')`` over sampled pairs."""
    if P < 1:
        raise InvalidInputError("P must be >= 1")
    f = _values(traj, t)
    grid = f.spec
    k = k if k is not None else int(math.floor(grid.d / 2 + 2)) + 1
    max_mode = max_mode if max_mode is not None else grid.M // 2
    uniform = metric == "d1" and grid.d > 1
    ratios = []
    skipped = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for mu, nu in sample_pairs(grid.d, P, seed, n_atoms, uniform):
            dist = metric_value(metric, mu, nu, k, max_mode, dictionary_size)
            if dist < 1e-10:
                skipped += 1
                continue
            dv = abs(project_vhat(f, t, mu).value - project_vhat(f, t, nu).value)
            ratios.append(dv / dist)
    if not ratios:
        raise DiagnosticError("all sampled pairs were degenerate")
    r = np.asarray(ratios)
    q = {f"q{int(100 * s)}": float(np.quantile(r, s)) for s in (0.5, 0.9, 0.99)}
    return LipschitzProfile(metric, float(r.max()), q, len(ratios), skipped)


# ------------------------------------------------------------------ convergence

CSV_COLUMNS = ["N", "t", "measure-id", "value", "stderr", "gap-to-next-N", "d1-lip", "hk-lip",
               "N*|D1|", "N*|D2|"]


def default_measure_set(d: int, M: int, seed: int = 0) -> dict[str, Measure]:
    """Lattice and random empiricals plus smooth grid densities, fixed by ``seed``."""
    rng = np.random.default_rng(seed)
    out: dict[str, Measure] = {}
    lattice = np.stack(np.meshgrid(*([np.arange(2) / 2 + 0.125] * d), indexing="ij"), axis=-1).reshape(-1, d)
    out["lattice"] = EmpiricalMeasure(lattice)
    for j in range(2):
        out[f"emp{j}"] = EmpiricalMeasure(rng.random((3, d)))
    for j, (amp, c) in enumerate([(0.5, 0.0), (0.8, 0.3)]):
        shift = rng.random(d) if j else np.full(d, c)
        out[f"grid{j}"] = GridMeasure.from_function(
            lambda x, a=amp, s=shift: 1.0 + a * np.prod(np.cos(2 * np.pi * (x - s)), axis=-1), M, d
        )
    return out


@dataclass
class ConvergenceResult:
    rows: list[dict]
    gaps: dict[int, float]
    extrapolated: dict
    per_N: dict = field(default_factory=dict)


def richardson(Ns: Sequence[int], values: Sequence[float]) -> tuple[float, float | None]:
    """Extrapolated limit and the empirical order fitted from the last three values.

    Falls back to the last value (order None) when the gaps do not shrink.
    """
    if len(values) < 3:
        return float(values[-1]), None
    (n1, n2, n3), (v1, v2, v3) = Ns[-3:], values[-3:]
    g1, g2 = abs(v2 - v1), abs(v3 - v2)
    if g1 <= 0 or g2 <= 0 or g2 >= g1:
        return float(v3), None
    order = math.log(g1 / g2) / math.log(((n2 + n3) / 2) / ((n1 + n2) / 2))
    if not order > 0:
        return float(v3), None
    ratio = (n3 / n2) ** order
    return float(v3 + (v3 - v2) / (ratio - 1.0)), order


def convergence_table(
    H, G, Ns: Sequence[int], t_list: Sequence[float], measures: dict[str, Measure],
    T: float, a0: float, M: int = 32, d: int = 1, method: Method = "exact", seed: int = 0,
    samples: int = 100_000, lip_pairs: int = 60, k_max: int = 2, budget_bytes: int | None = None,
    skip_resource_errors: bool = False, workers: int | None = None, report: RunReport | None = None,
    solver_overrides: dict | None = None,
) -> RunReport:
    """Solve for each ``N``, evaluate ``Vhat^N`` on a shared measure set and report Cauchy gaps."""
    Ns = list(Ns)
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise InvalidInputError("N list must be strictly increasing")
    report = report or RunReport()
    table: dict[tuple, dict] = {}
    per_N: dict[int, dict] = {}
    solved: list[int] = []
    for N in Ns:
        grid = GridSpec(d, N, M)
        cfg = SolverConfig(grid, T=T, a0=a0, snapshot_times=list(t_list), budget_bytes=budget_bytes,
                           **(solver_overrides or {}))
        try:
            with report.timed(f"solve-N{N}"):
                traj = solve_hjbn(H, G, cfg, seed=seed, workers=workers)
        except ResourceError as exc:
            msg = f"N={N}: {exc}"
            if not skip_resource_errors:
                raise ResourceError(msg) from exc
            report.errors.append(msg)
            continue
        solved.append(N)
        info = {"dt": traj.config.dt, "theta": traj.config.theta, "p_clip": traj.config.p_clip,
                "holder": holder_ratio(traj)}
        d1_lip = lipschitz_profile(traj, 0.0, "d1", lip_pairs, seed).max_ratio
        hk_lip = lipschitz_profile(traj, 0.0, "h_neg_k", lip_pairs, seed).max_ratio
        info.update({"d1_lip": d1_lip, "hk_lip": hk_lip})
        per_N[N] = info
        for ti in t_list:
            der = derivative_sup_norms(traj, ti, k_max)["scaled"]
            for mi, (mid, m) in enumerate(measures.items()):
                ev = project_vhat(traj, ti, m, method, samples, seed=_stream(seed, N, mi))
                table[(N, ti, mid)] = {
                    "N": N, "t": ti, "measure-id": mid, "value": ev.value, "stderr": ev.stderr,
                    "d1-lip": d1_lip, "hk-lip": hk_lip,
                    "N*|D1|": der[0], "N*|D2|": der[1] if len(der) > 1 else None,
                }
    gaps: dict[int, float] = {}
    for a, b in zip(solved, solved[1:]):
        g = 0.0
        for ti in t_list:
            for mid in measures:
                gap = abs(table[(b, ti, mid)]["value"] - table[(a, ti, mid)]["value"])
                table[(a, ti, mid)]["gap-to-next-N"] = gap
                g = max(g, gap)
        gaps[a] = g
    extrap = {}
    for ti in t_list:
        for mid in measures:
            vals = [table[(N, ti, mid)]["value"] for N in solved]
            if vals:
                lim, order = richardson(solved, vals)
                extrap[f"{ti}|{mid}"] = {"estimate": lim, "empirical_order": order}
    rows = [table[k] for k in sorted(table, key=lambda k: (k[0], k[1], k[2]))]
    report.stages["convergence"] = {
        "rows": rows, "gaps": {str(k): v for k, v in gaps.items()}, "extrapolated_estimates": extrap,
        "per_N": {str(k): v for k, v in per_N.items()}, "solved_N": solved,
    }
    return report


def _stream(seed: int, N: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, N, index])
