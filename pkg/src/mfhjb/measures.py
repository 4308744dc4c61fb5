"""Probability measures on T^d and the metrics used to compare them.

Covers empirical and gridded measures, the exact 1-Wasserstein distance
(circle formula and matching form), Fourier coefficients of measures,
H^k / H^-k norms with their dual elements, and a computable lower bound for
the C^-k distance.

Fourier convention: ``qhat(xi) = int exp(-2 pi i xi.x) dq(x)``.  Coefficient
arrays have shape ``(2*K + 1,) * d`` and are indexed by ``xi + K``.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.optimize import linear_sum_assignment

from . import gridio
from .errors import InvalidInputError
from .torus import torus_distance, wrap

WEIGHT_TOL = 1e-12


@dataclass
class EmpiricalMeasure:
    atoms: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise InvalidInputError("EmpiricalMeasure needs at least one atom of shape (d,)")
        n = atoms.shape[0]
        if self.weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape != (n,):
            raise InvalidInputError("weights and atoms disagree in length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidInputError(f"weights must be nonnegative and sum to 1 (sum={weights.sum()!r})")
        self.atoms = wrap(atoms)
        self.weights = weights

    @classmethod
    def dirac(cls, x) -> "EmpiricalMeasure":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)))

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n, rtol=0, atol=WEIGHT_TOL))

    def shift(self, v) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.atoms + np.asarray(v, dtype=float), self.weights)

    def integrate(self, func: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, func(self.atoms)))


@dataclass
class GridMeasure:
    """Density samples on the uniform T^d grid; the density is their multilinear interpolant."""

    density: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.density, dtype=float)
        if rho.ndim < 1 or len(set(rho.shape)) != 1:
            raise InvalidInputError("GridMeasure density must be a cube of samples")
        if np.any(rho < 0):
            raise InvalidInputError("GridMeasure density must be nonnegative")
        if abs(rho.mean() - 1.0) > WEIGHT_TOL:
            raise InvalidInputError(f"GridMeasure density must have mean 1 (got {rho.mean()!r})")
        self.density = rho

    @classmethod
    def from_function(cls, func, M: int, d: int = 1) -> "GridMeasure":
        """Sample a nonnegative function at the nodes and normalize."""
        axes = np.meshgrid(*([np.arange(M) / M] * d), indexing="ij")
        vals = np.asarray(func(np.stack(axes, axis=-1)), dtype=float)
        return cls(vals / vals.mean())

    @classmethod
    def uniform(cls, M: int, d: int = 1) -> "GridMeasure":
        return cls(np.ones((M,) * d))

    @property
    def d(self) -> int:
        return self.density.ndim

    @property
    def M(self) -> int:
        return self.density.shape[0]


Measure = EmpiricalMeasure | GridMeasure


# ------------------------------------------------------------------ grid weights

def grid_weights(m: Measure, M: int) -> np.ndarray:
    """Node weights ``w`` with ``sum_j phi_j w_j = int I[phi] dm``.

    ``I`` is periodic multilinear interpolation on the M-grid.  For atoms this
    spreads each atom onto its 2^d neighbouring nodes; for a gridded density
    it is the mass-matrix action (1, 4, 1)/6 per axis.
    """
    if isinstance(m, GridMeasure):
        if m.M != M:
            raise InvalidInputError(f"GridMeasure has M={m.M}, grid needs M={M}")
        w = m.density.copy()
        for ax in range(w.ndim):
            w = (np.roll(w, 1, ax) + 4.0 * w + np.roll(w, -1, ax)) / 6.0
        return w / M**m.d
    d = m.d
    u = m.atoms * M
    base = np.floor(u).astype(np.int64)
    frac = u - base
    base %= M
    w = np.zeros((M,) * d)
    for corner in itertools.product((0, 1), repeat=d):
        c = np.asarray(corner)
        lin = np.prod(np.where(c, frac, 1.0 - frac), axis=1) * m.weights
        idx = tuple(((base[:, a] + c[a]) % M) for a in range(d))
        np.add.at(w, idx, lin)
    return w


def integrate_grid(phi: np.ndarray, m: Measure) -> float:
    """``int I[phi] dm`` for samples ``phi`` on a T^d grid."""
    return float(np.sum(phi * grid_weights(m, phi.shape[0])))


# ------------------------------------------------------------------ d1 metrics

def d1_circle(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact 1-Wasserstein distance on the circle T^1.

    Uses ``min_t int_0^1 |F_mu - F_nu - t|``, minimized at a weighted median
    of the CDF difference.
    """
    if mu.d != 1 or nu.d != 1:
        raise InvalidInputError("d1_circle requires d = 1")
    pos = np.concatenate([mu.atoms[:, 0], nu.atoms[:, 0]])
    mass = np.concatenate([mu.weights, -nu.weights])
    order = np.argsort(pos, kind="stable")
    pos, mass = pos[order], mass[order]
    diff = np.cumsum(mass)
    # the CDF difference equals diff[k] on [pos[k], pos[k+1]) and 0 on [0, pos[0])
    lengths = np.diff(np.concatenate([pos, [1.0]]))
    vals = np.concatenate([[0.0], diff])
    lens = np.concatenate([[pos[0]], lengths])
    keep = lens > 0
    vals, lens = vals[keep], lens[keep]
    o = np.argsort(vals, kind="stable")
    cum = np.cumsum(lens[o])
    t = vals[o][np.searchsorted(cum, 0.5 * cum[-1])]
    return float(np.sum(lens * np.abs(vals - t)))


def d1_matching(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """d1 between equal-size uniform empirical measures via optimal assignment."""
    if mu.n != nu.n or mu.d != nu.d:
        raise InvalidInputError("d1_matching needs equal atom counts and dimensions")
    if not (mu.is_uniform() and nu.is_uniform()):
        raise InvalidInputError("d1_matching needs uniform weights")
    cost = torus_distance(mu.atoms[:, None, :], nu.atoms[None, :, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / mu.n)


def d1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Dispatch: circle formula for d = 1, matching otherwise."""
    if mu.d == 1 and nu.d == 1:
        return d1_circle(mu, nu)
    return d1_matching(mu, nu)


# ------------------------------------------------------------------ Sobolev

@dataclass(frozen=True)
class SobolevParams:
    k: int
    max_mode: int
    d: int = 1

    def __post_init__(self):
        if self.max_mode < 1:
            raise InvalidInputError("max_mode must be >= 1")
        if self.k < 0:
            raise InvalidInputError("k must be >= 0")
        if not self.k > self.d / 2 + 2:
            warnings.warn(
                f"k={self.k} does not satisfy k > d/2 + 2 for d={self.d}", stacklevel=2
            )


@lru_cache(maxsize=None)
def _multi_indices(d: int, k: int) -> tuple[tuple[int, ...], ...]:
    return tuple(j for j in itertools.product(range(k + 1), repeat=d) if sum(j) <= k)


def sobolev_weight(xi, k: int) -> np.ndarray | float:
    """``w_k(xi) = sum_{|j|<=k} prod_a (2 pi xi_a)^(2 j_a)``; broadcasts over leading dims."""
    arr = np.asarray(xi, dtype=float)
    scalar = arr.ndim <= 1
    arr = np.atleast_1d(arr)
    if arr.ndim == 1:
        arr = arr[None, :]
    u = (2.0 * np.pi * arr) ** 2
    out = np.zeros(arr.shape[:-1])
    for j in _multi_indices(arr.shape[-1], k):
        out = out + np.prod(u ** np.asarray(j, dtype=float), axis=-1)
    return float(out.reshape(-1)[0]) if scalar else out


def mode_grid(d: int, K: int) -> np.ndarray:
    """Integer modes of the box |xi_a| <= K, shape ``(2K+1,)*d + (d,)``."""
    r = np.arange(-K, K + 1)
    return np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1)


@dataclass
class SignedMeasureCoeffs:
    coeffs: np.ndarray
    max_mode: int

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        side = 2 * self.max_mode + 1
        if c.ndim < 1 or any(s != side for s in c.shape):
            raise InvalidInputError("coefficient array must have side 2*max_mode + 1")
        self.coeffs = c

    @property
    def d(self) -> int:
        return self.coeffs.ndim

    def __sub__(self, other: "SignedMeasureCoeffs") -> "SignedMeasureCoeffs":
        _check_same(self, other)
        return SignedMeasureCoeffs(self.coeffs - other.coeffs, self.max_mode)

    def __add__(self, other: "SignedMeasureCoeffs") -> "SignedMeasureCoeffs":
        _check_same(self, other)
        return SignedMeasureCoeffs(self.coeffs + other.coeffs, self.max_mode)

    def __mul__(self, c: float) -> "SignedMeasureCoeffs":
        return SignedMeasureCoeffs(self.coeffs * c, self.max_mode)

    __rmul__ = __mul__

    def at(self, xi) -> complex:
        idx = tuple(int(v) + self.max_mode for v in np.atleast_1d(xi))
        return complex(self.coeffs[idx])

    def hermitian_error(self) -> float:
        flipped = self.coeffs[(slice(None, None, -1),) * self.d]
        return float(np.max(np.abs(flipped - np.conj(self.coeffs))))

    def dumps(self) -> bytes:
        return gridio.dumps_complex(self.coeffs, self.d, 1, 2 * self.max_mode + 1)

    @classmethod
    def loads(cls, data: bytes) -> "SignedMeasureCoeffs":
        header, vals = gridio.loads(data)
        if not header["complex"] or header["N"] != 1 or header["M"] % 2 == 0:
            raise InvalidInputError("not a coefficient dump")
        side = header["M"]
        return cls(vals.reshape((side,) * header["d"]), (side - 1) // 2)


def _check_same(a: SignedMeasureCoeffs, b: SignedMeasureCoeffs) -> None:
    if a.coeffs.shape != b.coeffs.shape:
        raise InvalidInputError("coefficient sets have different shapes")


def empirical_coeffs(mu: EmpiricalMeasure, max_mode: int) -> SignedMeasureCoeffs:
    r = np.arange(-max_mode, max_mode + 1)
    out = mu.weights.astype(complex)
    for a in range(mu.d):
        phase = np.exp(-2j * np.pi * np.outer(mu.atoms[:, a], r))
        out = out[..., None] * phase.reshape((mu.n,) + (1,) * a + (r.size,))
    return SignedMeasureCoeffs(out.sum(axis=0), max_mode)


def h_neg_k_norm(q: SignedMeasureCoeffs, params: SobolevParams) -> tuple[float, float]:
    """Truncated H^-k norm and a bound on the neglected squared tail.

    The tail bound assumes ``|qhat| <= 2`` (difference of probability
    measures) and bounds ``sum_{|xi|_inf > K} 4 / w_k(xi)`` from above.
    """
    K = min(params.max_mode, q.max_mode)
    c = _restrict(q, K)
    w = sobolev_weight(mode_grid(q.d, K), params.k)
    value = math.sqrt(float(np.sum(np.abs(c) ** 2 / w)))
    return value, tail_bound(q.d, params.k, K)


def _restrict(q: SignedMeasureCoeffs, K: int) -> np.ndarray:
    off = q.max_mode - K
    return q.coeffs[(slice(off, off + 2 * K + 1),) * q.d]


def tail_bound(d: int, k: int, K: int, r_explicit: int = 4096) -> float:
    """Upper bound for ``sum_{|xi|_inf > K} 4 / w_k(xi)``.

    Uses ``w_k(xi) >= (2 pi |xi|_inf)^(2k)`` and counts shells of the box.
    """
    s = 2 * k - d + 1
    if s <= 1:
        return math.inf
    total = 0.0
    R = max(K + 1, r_explicit)
    r = np.arange(K + 1, R + 1, dtype=float)
    shell = (2 * r + 1) ** d - (2 * r - 1) ** d
    total += float(np.sum(4.0 * shell / (2 * np.pi * r) ** (2 * k)))
    # shell <= 2d (3r)^(d-1) for r >= 1, then integral bound
    coef = 8.0 * d * 3.0 ** (d - 1) / (2 * np.pi) ** (2 * k)
    total += coef * R ** (1 - s) / (s - 1)
    return total


def dual_coeffs(q: SignedMeasureCoeffs, params: SobolevParams) -> SignedMeasureCoeffs:
    """Fourier coefficients of the dual element ``q*`` (``qhat / w_k``)."""
    K = min(params.max_mode, q.max_mode)
    w = sobolev_weight(mode_grid(q.d, K), params.k)
    return SignedMeasureCoeffs(_restrict(q, K) / w, K)


def dual_element(q: SignedMeasureCoeffs, params: SobolevParams, M: int) -> np.ndarray:
    """Samples of ``q*`` on the M-grid of T^d."""
    K = min(params.max_mode, q.max_mode)
    if M < 2 * K:
        raise InvalidInputError(f"grid resolution {M} below 2*max_mode = {2 * K}")
    return synthesize(dual_coeffs(q, params), M)


def synthesize(c: SignedMeasureCoeffs, M: int) -> np.ndarray:
    """Grid samples of ``sum_xi c(xi) exp(2 pi i xi.x)`` (aliases folded mod M)."""
    d, K = c.d, c.max_mode
    arr = np.zeros((M,) * d, dtype=complex)
    idx = np.arange(-K, K + 1) % M
    np.add.at(arr, np.ix_(*([idx] * d)), c.coeffs)
    return (sfft.ifftn(arr) * M**d).real


def analyze(samples: np.ndarray, max_mode: int) -> SignedMeasureCoeffs:
    """Fourier coefficients of a grid function (needs M > 2*max_mode for exactness)."""
    M = samples.shape[0]
    d = samples.ndim
    if M <= 2 * max_mode:
        raise InvalidInputError("grid too coarse to resolve the requested modes")
    fhat = sfft.fftn(samples) / M**d
    idx = np.arange(-max_mode, max_mode + 1) % M
    return SignedMeasureCoeffs(fhat[np.ix_(*([idx] * d))], max_mode)


def sobolev_inner(a: SignedMeasureCoeffs, b: SignedMeasureCoeffs, k: int) -> float:
    """``<f, g>_k`` for real functions given by their Fourier coefficients."""
    _check_same(a, b)
    w = sobolev_weight(mode_grid(a.d, a.max_mode), k)
    return float(np.sum(w * a.coeffs * np.conj(b.coeffs)).real)


def pairing(q: SignedMeasureCoeffs, phi: SignedMeasureCoeffs) -> float:
    """``int phi dq`` for a band-limited ``phi`` given by its coefficients."""
    _check_same(q, phi)
    return float(np.sum(phi.coeffs * np.conj(q.coeffs)).real)


# ------------------------------------------------------------------ C^-k surrogate

@dataclass
class TestFunction:
    """Dictionary element; ``evaluate`` maps (n, d) points to values."""

    __test__ = False  # not a pytest class

    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    ck_norm: float


def trig_function(xi: Sequence[int], kind: str, k: int) -> TestFunction:
    xi = np.asarray(xi, dtype=float)
    norm = 0.0
    for j in _multi_indices(xi.size, k):
        norm += float(np.prod(np.abs(2 * np.pi * xi) ** np.asarray(j, dtype=float)))
    f = np.cos if kind == "cos" else np.sin

    def evaluate(x):
        return f(2 * np.pi * np.asarray(x, dtype=float) @ xi)

    return TestFunction(f"{kind}{tuple(int(v) for v in xi)}", evaluate, norm)


@lru_cache(maxsize=None)
def _bump_derivative_sups(width: float, k: int, fine: int = 4096) -> tuple[float, ...]:
    """Rigorous-ish sup of |b^(j)| for the 1-D wrapped Gaussian, j = 0..k.

    Spectral derivatives on a fine grid, inflated by the grid-spacing
    remainder ``h/2 * sup|b^(j+1)|``.
    """
    x = np.arange(fine) / fine
    b = _bump_1d(x, 0.0, width)
    bhat = np.fft.fft(b)
    freq = np.fft.fftfreq(fine, d=1.0 / fine)
    sups = []
    for j in range(k + 2):
        dj = np.fft.ifft(bhat * (2j * np.pi * freq) ** j).real
        sups.append(float(np.max(np.abs(dj))))
    h = 1.0 / fine
    return tuple(sups[j] + 0.5 * h * sups[j + 1] for j in range(k + 1))


def _bump_1d(x: np.ndarray, c: float, width: float) -> np.ndarray:
    u = np.mod(x - c + 0.5, 1.0) - 0.5
    out = np.zeros_like(u)
    for n in range(-4, 5):
        out += np.exp(-((u + n) ** 2) / (2 * width * width))
    return out


def bump_function(center: Sequence[float], width: float, k: int) -> TestFunction:
    center = np.asarray(center, dtype=float)
    sups = _bump_derivative_sups(float(width), k)
    norm = 0.0
    for j in _multi_indices(center.size, k):
        norm += float(np.prod([sups[ja] for ja in j]))

    def evaluate(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.ones(x.shape[0])
        for a in range(center.size):
            out *= _bump_1d(x[:, a], center[a], width)
        return out

    label = ",".join(f"{c:.6g}" for c in center)
    return TestFunction(f"bump({label})", evaluate, norm)


def default_dictionary(d: int, k: int, size: int, width: float = 0.1) -> list[TestFunction]:
    """Low Fourier modes (cos, sin) first, then Gaussian bumps on a lattice."""
    n_trig = (size + 1) // 2
    n_bump = size - n_trig
    out: list[TestFunction] = []
    radius = 1
    seen = set()
    while len(out) < n_trig:
        modes = sorted(
            (tuple(m) for m in mode_grid(d, radius).reshape(-1, d)),
            key=lambda m: (max(abs(v) for v in m), sum(abs(v) for v in m), tuple(-v for v in m)),
        )
        for m in modes:
            if all(v == 0 for v in m) or m in seen:
                continue
            neg = tuple(-v for v in m)
            if neg in seen:
                continue
            seen.add(m)
            for kind in ("cos", "sin"):
                if len(out) < n_trig:
                    out.append(trig_function(m, kind, k))
        radius += 1
    if n_bump:
        side = max(1, math.ceil(n_bump ** (1.0 / d)))
        centers = list(itertools.product(*([np.arange(side) / side] * d)))[:n_bump]
        out.extend(bump_function(c, width, k) for c in centers)
    return out


def c_neg_k_gap(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    k: int,
    size: int = 16,
    dictionary: Sequence[TestFunction] | None = None,
) -> float:
    """Lower bound on ``||mu - nu||_{C^-k}`` over a fixed test-function dictionary."""
    if size < 1:
        raise InvalidInputError("dictionary size must be >= 1")
    if dictionary is None:
        dictionary = default_dictionary(mu.d, k, size)
    best = 0.0
    for phi in dictionary:
        gap = abs(mu.integrate(phi.evaluate) - nu.integrate(phi.evaluate)) / phi.ck_norm
        best = max(best, gap)
    return best


# ------------------------------------------------------------------ sampling

def sample_tensor(m: Measure, n: int, seed: int | np.random.Generator) -> EmpiricalMeasure:
    """``n`` i.i.d. draws from ``m`` as a uniform empirical measure."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return EmpiricalMeasure(draw(m, n, rng))


def draw(m: Measure, n: int, rng: np.random.Generator) -> np.ndarray:
    """Raw i.i.d. samples of shape (n, d)."""
    if isinstance(m, EmpiricalMeasure):
        idx = rng.choice(m.n, size=n, p=m.weights)
        return m.atoms[idx].copy()
    # multilinear density = mixture of product triangle kernels centred at nodes
    M, d = m.M, m.d
    probs = (m.density / M**d).reshape(-1)
    node = rng.choice(probs.size, size=n, p=probs / probs.sum())
    coords = np.stack(np.unravel_index(node, m.density.shape), axis=-1) / M
    tri = (rng.random((n, d)) - rng.random((n, d))) / M
    return wrap(coords + tri)


# ------------------------------------------------------------------ CSV

def read_measure_csv(path) -> EmpiricalMeasure:
    """Read ``w,x1,...,xd`` lines; blank lines, ``#`` comments and a ``w,x1,...`` header are skipped."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec or rec[0].strip().startswith("#"):
                continue
            if not rows and rec[0].strip().lower() == "w":
                continue
            try:
                rows.append([float(v) for v in rec])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise InvalidInputError(f"{path}: no atoms")
    arr = np.asarray(rows)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise InvalidInputError(f"{path}: expected lines 'w,x1,...,xd'")
    w = arr[:, 0]
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
        raise InvalidInputError(f"{path}: weights must be nonnegative and sum to 1")
    return EmpiricalMeasure(arr[:, 1:], w / w.sum())


def write_measure_csv(path, mu: EmpiricalMeasure) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        for w, x in zip(mu.weights, mu.atoms):
            writer.writerow([repr(float(w))] + [repr(float(v)) for v in x])
