"""Torus arithmetic, tensor grids on (T^d)^N and periodic spectral operators.

Grid layout
-----------
A :class:`GridSpec` with ``has_z`` describes T^d x (T^d)^N; otherwise (T^d)^N.
Scalar axes are ordered ``[z_1..z_d, x^1_1..x^1_d, ..., x^N_1..x^N_d]`` and
node ``j`` on every axis sits at ``j / M``.  Values are stored as an ndarray of
shape ``(M,) * n_axes`` (row-major when flattened).

Fourier convention: ``f(x) = sum_xi fhat(xi) exp(2 pi i xi . x)`` with
``fhat = fftn(f) / M**n_axes``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.fft as sfft

from .errors import InvalidInputError, ResourceError

DEFAULT_BUDGET_BYTES = 2 * 1024**3
WORKING_SET_FACTOR = 6


def wrap(x, d: int | None = None) -> np.ndarray:
    """Canonical representative of ``x`` in [0, 1)^d."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("wrap: non-finite coordinates")
    if d is not None and arr.shape[-1:] != (d,) and not (arr.ndim == 0 and d == 1):
        raise InvalidInputError(f"wrap: expected trailing dimension {d}, got {arr.shape}")
    out = np.mod(arr, 1.0)
    # np.mod returns exactly 1.0 for tiny negative inputs
    return np.where(out >= 1.0, 0.0, out)


def torus_distance(x, y) -> np.ndarray | float:
    """Geodesic distance on T^d; broadcasts over leading dimensions."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1:] != y.shape[-1:]:
        raise InvalidInputError(f"torus_distance: dimension mismatch {x.shape} vs {y.shape}")
    diff = np.abs(np.mod(x - y, 1.0))
    diff = np.minimum(diff, 1.0 - diff)
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return float(dist) if dist.ndim == 0 else dist


@dataclass(frozen=True)
class GridSpec:
    d: int
    N: int
    M: int
    has_z: bool = False

    def __post_init__(self):
        if self.d < 1 or self.N < 1:
            raise InvalidInputError("GridSpec: d and N must be positive")
        if self.M < 4 or self.M % 2:
            raise InvalidInputError(f"GridSpec: M must be even and >= 4, got {self.M}")

    @property
    def n_axes(self) -> int:
        return self.d * (self.N + int(self.has_z))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.n_axes

    @property
    def size(self) -> int:
        return self.M**self.n_axes

    @property
    def dx(self) -> float:
        return 1.0 / self.M

    @property
    def z_axes(self) -> tuple[int, ...]:
        return tuple(range(self.d)) if self.has_z else ()

    def block_axes(self, i: int) -> tuple[int, ...]:
        """Scalar axes carrying particle ``i`` (0-based)."""
        if not 0 <= i < self.N:
            raise InvalidInputError(f"particle index {i} out of range for N={self.N}")
        start = self.d * (i + int(self.has_z))
        return tuple(range(start, start + self.d))

    def nodes(self) -> np.ndarray:
        return np.arange(self.M) / self.M

    def memory_bytes(self) -> int:
        return self.size * 8 * WORKING_SET_FACTOR

    def check_budget(self, budget_bytes: int | None = None) -> None:
        budget = DEFAULT_BUDGET_BYTES if budget_bytes is None else budget_bytes
        need = self.memory_bytes()
        if need > budget:
            raise ResourceError(
                f"grid d={self.d} N={self.N} M={self.M} has_z={self.has_z} needs "
                f"~{need} bytes, budget is {budget}"
            )


@dataclass
class TorusGridFn:
    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.spec.size:
            raise InvalidInputError(
                f"TorusGridFn: {vals.size} values for a grid of {self.spec.size} nodes"
            )
        vals = vals.reshape(self.spec.shape)
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("TorusGridFn: non-finite values")
        self.values = vals

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values: np.ndarray) -> "TorusGridFn":
        return TorusGridFn(self.spec, values)


def particle_positions(spec: GridSpec) -> tuple[np.ndarray, np.ndarray | None]:
    """Coordinates of every node.

    Returns ``(x, z)`` where ``x`` has shape ``(size, N, d)`` and ``z`` has
    shape ``(size, d)`` (``None`` without a z-coordinate).
    """
    idx = np.indices(spec.shape, dtype=np.int64).reshape(spec.n_axes, -1).T
    coords = idx / spec.M
    z = coords[:, : spec.d] if spec.has_z else None
    x = coords[:, spec.d * int(spec.has_z):].reshape(-1, spec.N, spec.d)
    return x, z


def sample_on_grid(spec: GridSpec, func) -> TorusGridFn:
    """Evaluate ``func(coords)`` with ``coords`` of shape (size, n_axes)."""
    idx = np.indices(spec.shape, dtype=np.int64).reshape(spec.n_axes, -1).T
    return TorusGridFn(spec, np.asarray(func(idx / spec.M), dtype=float))


# ---------------------------------------------------------------- differences

DiffMode = Literal["forward", "backward", "centered", "second"]


def periodic_diff(f: TorusGridFn, axis: int, mode: DiffMode = "centered") -> TorusGridFn:
    if not 0 <= axis < f.spec.n_axes:
        raise InvalidInputError(f"axis {axis} out of range ({f.spec.n_axes} axes)")
    return f.with_values(_diff(f.values, axis, mode, f.spec.dx))


def _diff(v: np.ndarray, axis: int, mode: str, h: float) -> np.ndarray:
    up = np.roll(v, -1, axis=axis)
    down = np.roll(v, 1, axis=axis)
    if mode == "forward":
        return (up - v) / h
    if mode == "backward":
        return (v - down) / h
    if mode == "centered":
        return 0.5 * ((up - v) / h + (v - down) / h)
    if mode == "second":
        return (up - 2.0 * v + down) / (h * h)
    raise InvalidInputError(f"unknown difference mode {mode!r}")


# ------------------------------------------------------------------- Fourier

def mode_numbers(M: int) -> np.ndarray:
    """Integer frequencies in FFT order, in [-M/2, M/2)."""
    return np.rint(np.fft.fftfreq(M, d=1.0 / M)).astype(np.int64)


def dft_forward(f: TorusGridFn) -> np.ndarray:
    """Complex coefficients in FFT index order (``xi mod M`` per axis)."""
    return sfft.fftn(f.values) / f.spec.size


def dft_inverse(fhat: np.ndarray, spec: GridSpec) -> TorusGridFn:
    vals = sfft.ifftn(fhat * spec.size)
    return TorusGridFn(spec, vals.real)


def coefficient(fhat: np.ndarray, xi) -> complex:
    """Look up ``fhat(xi)`` for an integer mode vector ``xi``."""
    M = fhat.shape[0]
    idx = tuple(int(k) % M for k in np.atleast_1d(xi))
    return complex(fhat[idx])


SymbolKind = Literal["lattice", "spectral"]


def diffusion_symbol(spec: GridSpec, a0: float, kind: SymbolKind = "lattice") -> np.ndarray:
    """Nonnegative symbol of ``-L`` on the real-FFT half spectrum.

    ``spectral``: 4 pi^2 (sum_i |xi_i|^2 + a0 |sum_i xi_i|^2) (or a0 |zeta|^2 on
    z-grids).  For cross terms touching the Nyquist frequency the two aliases
    +-M/2 are averaged so the multiplier stays Hermitian.

    ``lattice``: the same operator with every d/dy replaced by the periodic
    difference along that direction, i.e. 4/h^2 sin^2(pi h k) per direction;
    the cross term differences along the diagonal shift of all particles.
    The resulting semigroup and resolvent have nonnegative kernels.
    """
    if a0 < 0:
        raise InvalidInputError("a0 must be nonnegative")
    M, n = spec.M, spec.n_axes
    full = mode_numbers(M).astype(float)
    half = np.arange(M // 2 + 1, dtype=float)
    freqs = [full] * (n - 1) + [half]
    grids = np.meshgrid(*freqs, indexing="ij", sparse=True)
    h = spec.dx

    def one_dim(k):
        if kind == "spectral":
            return (2.0 * np.pi * k) ** 2
        if kind == "lattice":
            return (4.0 / (h * h)) * np.sin(np.pi * k * h) ** 2
        raise InvalidInputError(f"unknown symbol kind {kind!r}")

    x_axes = [ax for i in range(spec.N) for ax in spec.block_axes(i)]
    sym = sum(one_dim(grids[ax]) for ax in x_axes)
    if a0 == 0:
        return np.broadcast_to(sym, tuple(len(f) for f in freqs)).copy()
    cross = 0.0
    for a in range(spec.d):
        if spec.has_z:
            cross = cross + one_dim(grids[spec.z_axes[a]])
            continue
        comps = [grids[spec.block_axes(i)[a]] for i in range(spec.N)]
        s = sum(comps)
        if kind == "lattice":
            cross = cross + one_dim(s)
        else:
            # flip the sign of Nyquist components to get the other alias
            nyq = M / 2.0
            s_alt = sum(np.where(np.abs(c) == nyq, -c, c) for c in comps)
            cross = cross + 0.5 * (one_dim(s) + one_dim(s_alt))
    sym = sym + a0 * cross
    return np.broadcast_to(sym, tuple(len(f) for f in freqs)).copy()


def spectral_diffusion_step(
    f: TorusGridFn,
    tau: float,
    a0: float,
    mode: Literal["resolvent", "semigroup"] = "resolvent",
    kind: SymbolKind = "lattice",
    symbol: np.ndarray | None = None,
) -> TorusGridFn:
    """Apply ``(1 - tau L)^-1`` or ``exp(tau L)`` exactly in Fourier space.

    ``symbol`` may be passed to reuse a precomputed :func:`diffusion_symbol`.
    """
    if not tau > 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    if symbol is None:
        symbol = diffusion_symbol(f.spec, a0, kind)
    return f.with_values(apply_multiplier(f.values, _multiplier(symbol, tau, mode)))


def _multiplier(symbol: np.ndarray, tau: float, mode: str) -> np.ndarray:
    if mode == "resolvent":
        return 1.0 / (1.0 + tau * symbol)
    if mode == "semigroup":
        return np.exp(-tau * symbol)
    raise InvalidInputError(f"unknown diffusion mode {mode!r}")


def apply_multiplier(values: np.ndarray, mult: np.ndarray) -> np.ndarray:
    fhat = sfft.rfftn(values)
    fhat *= mult
    return sfft.irfftn(fhat, s=values.shape)


def heat_convolve(g: np.ndarray, variance: float) -> np.ndarray:
    """Convolve samples on a T^d grid with the wrapped Gaussian of per-coordinate variance."""
    if variance < 0:
        raise InvalidInputError("variance must be >= 0")
    g = np.asarray(g, dtype=float)
    if variance == 0:
        return g.copy()
    k2 = 0.0
    for ax, n in enumerate(g.shape):
        k = mode_numbers(n).astype(float) if ax < g.ndim - 1 else np.arange(n // 2 + 1, dtype=float)
        shape = [1] * g.ndim
        shape[ax] = k.size
        k2 = k2 + (k**2).reshape(shape)
    return apply_multiplier(g, np.exp(-2.0 * np.pi**2 * variance * k2))


# ---------------------------------------------------------------- interpolation

def interpolate(f: TorusGridFn | np.ndarray, points) -> np.ndarray | float:
    """Periodic multilinear interpolation.

    ``points`` has shape ``(..., n_axes)``; coordinates are wrapped first.
    """
    vals = f.values if isinstance(f, TorusGridFn) else np.asarray(f)
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    n = vals.ndim
    if pts.shape[-1] != n:
        raise InvalidInputError(f"interpolate: expected {n} coordinates, got {pts.shape[-1]}")
    lead = pts.shape[:-1]
    pts = pts.reshape(-1, n)
    M = np.array(vals.shape)
    u = np.mod(pts, 1.0) * M
    base = np.floor(u).astype(np.int64)
    frac = u - base
    base %= M
    out = np.zeros(pts.shape[0])
    for corner in range(1 << n):
        bits = [(corner >> ax) & 1 for ax in range(n)]
        w = np.ones(pts.shape[0])
        idx = []
        for ax, b in enumerate(bits):
            w = w * (frac[:, ax] if b else 1.0 - frac[:, ax])
            idx.append((base[:, ax] + b) % M[ax])
        out += w * vals[tuple(idx)]
    out = out.reshape(lead)
    return float(out[0]) if scalar else out
