import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfhjb.errors import InvalidInputError, ResourceError
from mfhjb.torus import (
    GridSpec,
    TorusGridFn,
    coefficient,
    dft_forward,
    dft_inverse,
    diffusion_symbol,
    heat_convolve,
    interpolate,
    particle_positions,
    periodic_diff,
    sample_on_grid,
    spectral_diffusion_step,
    torus_distance,
    wrap,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


# ---------------------------------------------------------------- wrap / distance

@pytest.mark.parametrize("x, expected", [([1.25], [0.25]), ([-0.1], [0.9]), ([0.5, 2.0], [0.5, 0.0])])
def test_wrap_examples(x, expected):
    assert np.allclose(wrap(x), expected, atol=1e-15)


def test_wrap_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        wrap([np.nan])
    with pytest.raises(InvalidInputError):
        wrap([0.1, np.inf])


def test_wrap_tiny_negative_stays_in_range():
    out = wrap([-1e-18])
    assert 0.0 <= out[0] < 1.0


@given(arrays(float, st.integers(1, 4), elements=finite))
def test_wrap_idempotent_and_in_range(x):
    w = wrap(x)
    assert np.all((w >= 0) & (w < 1))
    assert np.array_equal(wrap(w), w)


@pytest.mark.parametrize("x, y, expected", [
    ([0.1], [0.9], 0.2),
    ([0.3, 0.7], [0.3, 0.7], 0.0),
    ([0.0, 0.0], [0.5, 0.5], math.sqrt(0.5)),
])
def test_torus_distance_examples(x, y, expected):
    assert torus_distance(x, y) == pytest.approx(expected, abs=1e-15)


def test_torus_distance_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        torus_distance([0.1], [0.1, 0.2])


unit = st.floats(0, 1, exclude_max=True)


@given(st.lists(st.tuples(unit, unit), min_size=3, max_size=3))
def test_torus_distance_metric_axioms(pts):
    x, y, z = (np.array(p) for p in pts)
    dxy, dyx = torus_distance(x, y), torus_distance(y, x)
    assert dxy == pytest.approx(dyx, abs=1e-15)
    assert dxy <= torus_distance(x, z) + torus_distance(z, y) + 1e-12
    assert dxy <= math.sqrt(2) / 2 + 1e-12


# ---------------------------------------------------------------- grids

def test_gridspec_invariants():
    g = GridSpec(2, 3, 4)
    assert g.n_axes == 6 and g.size == 4**6 and g.dx == 0.25
    gz = GridSpec(1, 2, 8, has_z=True)
    assert gz.size == 8**3
    assert gz.z_axes == (0,) and gz.block_axes(0) == (1,) and gz.block_axes(1) == (2,)
    for bad in (dict(d=1, N=1, M=5), dict(d=1, N=1, M=2), dict(d=0, N=1, M=4), dict(d=1, N=0, M=4)):
        with pytest.raises(InvalidInputError):
            GridSpec(**bad)


def test_budget_check():
    g = GridSpec(1, 3, 64)
    g.check_budget(g.memory_bytes())
    with pytest.raises(ResourceError):
        g.check_budget(g.memory_bytes() - 1)
    # default budget: 2 GiB with working-set factor 6
    with pytest.raises(ResourceError):
        GridSpec(1, 5, 128).check_budget()


def test_gridfn_validation():
    g = GridSpec(1, 1, 4)
    with pytest.raises(InvalidInputError):
        TorusGridFn(g, np.zeros(5))
    with pytest.raises(InvalidInputError):
        TorusGridFn(g, np.array([0, 1, np.nan, 2]))
    f = TorusGridFn(g, np.arange(4.0))
    assert f.values.shape == (4,) and np.array_equal(f.flat, np.arange(4.0))


def test_particle_positions_row_major():
    g = GridSpec(1, 2, 4)
    x, z = particle_positions(g)
    assert z is None
    assert x.shape == (16, 2, 1)
    # row-major: the last axis (particle 2) runs fastest
    assert np.allclose(x[1, :, 0], [0.0, 0.25]) and np.allclose(x[4, :, 0], [0.25, 0.0])
    x, z = particle_positions(GridSpec(1, 1, 4, has_z=True))
    assert np.allclose(z[4], [0.25]) and np.allclose(x[1, 0], [0.25])


# ---------------------------------------------------------------- differences

def test_centered_difference_single_mode():
    M = 64
    g = GridSpec(1, 1, M)
    f = sample_on_grid(g, lambda c: np.sin(2 * np.pi * c[:, 0]))
    h = 1.0 / M
    dc = periodic_diff(f, 0, "centered").values
    # the discrete derivative of a single mode, derived by hand from the stencil
    assert dc[0] == pytest.approx(np.sin(2 * np.pi * h) / h, abs=1e-12)
    assert dc[0] == pytest.approx(2 * np.pi * np.sin(2 * np.pi * h) / (2 * np.pi * h), abs=1e-12)


def test_second_difference_single_mode():
    M = 64
    h = 1.0 / M
    f = sample_on_grid(GridSpec(1, 1, M), lambda c: np.cos(2 * np.pi * c[:, 0]))
    d2 = periodic_diff(f, 0, "second").values
    assert d2[0] == pytest.approx(-(2 / h**2) * (1 - np.cos(2 * np.pi * h)), rel=1e-12)


def test_difference_of_constant_is_zero():
    f = TorusGridFn(GridSpec(1, 2, 8), np.full(64, 3.5))
    for ax in range(2):
        for mode in ("forward", "backward", "centered", "second"):
            assert np.all(periodic_diff(f, ax, mode).values == 0.0)


def test_difference_errors():
    f = TorusGridFn(GridSpec(1, 2, 8), np.zeros(64))
    with pytest.raises(InvalidInputError):
        periodic_diff(f, 2)
    with pytest.raises(InvalidInputError):
        periodic_diff(f, 0, "upwind")


@given(arrays(float, (8, 8), elements=st.floats(-1e3, 1e3)), st.integers(0, 1))
def test_centered_is_mean_of_one_sided(vals, ax):
    f = TorusGridFn(GridSpec(1, 2, 8), vals)
    fw = periodic_diff(f, ax, "forward").values
    bw = periodic_diff(f, ax, "backward").values
    assert np.array_equal(periodic_diff(f, ax, "centered").values, 0.5 * (fw + bw))


# ---------------------------------------------------------------- Fourier

def _direct_dft(vals):
    """O(size^2) oracle: fhat(xi) = mean_x f(x) exp(-2 pi i xi.x)."""
    M = vals.shape[0]
    n = vals.ndim
    out = np.zeros(vals.shape, dtype=complex)
    grid = np.indices(vals.shape).reshape(n, -1) / M
    flat = vals.reshape(-1)
    for xi in itertools.product(range(M), repeat=n):
        phase = np.exp(-2j * np.pi * np.dot(np.array(xi), grid))
        out[xi] = np.mean(flat * phase)
    return out


def test_dft_matches_direct_sum(rng):
    g = GridSpec(1, 2, 6)
    f = TorusGridFn(g, rng.standard_normal(g.shape))
    assert np.max(np.abs(dft_forward(f) - _direct_dft(f.values))) <= 1e-12


def test_dft_examples():
    g = GridSpec(2, 1, 8)
    c = TorusGridFn(g, np.full(g.shape, 2.5))
    fh = dft_forward(c)
    assert coefficient(fh, (0, 0)) == pytest.approx(2.5)
    assert np.sum(np.abs(fh)) == pytest.approx(2.5, abs=1e-13)
    f = sample_on_grid(g, lambda x: np.cos(2 * np.pi * x[:, 0]))
    fh = dft_forward(f)
    assert coefficient(fh, (1, 0)) == pytest.approx(0.5, abs=1e-14)
    assert coefficient(fh, (-1, 0)) == pytest.approx(0.5, abs=1e-14)
    fh[1, 0] = fh[-1, 0] = 0
    assert np.max(np.abs(fh)) <= 1e-14


def test_dft_round_trip(rng):
    g = GridSpec(1, 3, 8)
    f = TorusGridFn(g, rng.standard_normal(g.shape))
    back = dft_inverse(dft_forward(f), g)
    assert np.max(np.abs(back.values - f.values)) <= 1e-12


# ---------------------------------------------------------------- diffusion

def test_spectral_symbol_cross_term_example():
    # mode (1, 1) for d=1, N=2, a0=1: 4 pi^2 (1 + 1 + 1 * 4)
    g = GridSpec(1, 2, 16)
    sym = diffusion_symbol(g, 1.0, "spectral")
    assert sym[1, 1] == pytest.approx(24 * np.pi**2, rel=1e-14)
    f = sample_on_grid(g, lambda x: np.cos(2 * np.pi * (x[:, 0] + x[:, 1])))
    tau = 1e-3
    out = spectral_diffusion_step(f, tau, 1.0, "semigroup", kind="spectral")
    assert np.max(np.abs(out.values - np.exp(-24 * np.pi**2 * tau) * f.values)) <= 1e-13


def test_heat_kernel_single_particle():
    g = GridSpec(1, 1, 32)
    f = sample_on_grid(g, lambda x: np.cos(2 * np.pi * x[:, 0]))
    out = spectral_diffusion_step(f, 0.01, 0.0, "semigroup", kind="spectral")
    assert np.max(np.abs(out.values - np.exp(-4 * np.pi**2 * 0.01) * f.values)) <= 1e-13
    res = spectral_diffusion_step(f, 0.01, 0.0, "resolvent", kind="spectral")
    assert np.max(np.abs(res.values - f.values / (1 + 0.01 * 4 * np.pi**2))) <= 1e-13


def test_lattice_symbol_matches_stencil():
    # the lattice symbol of a single mode is minus the discrete Laplacian eigenvalue
    M = 16
    h = 1.0 / M
    g = GridSpec(1, 2, M)
    sym = diffusion_symbol(g, 0.7, "lattice")
    lam = lambda k: (4 / h**2) * np.sin(np.pi * k * h) ** 2
    assert sym[3, 2] == pytest.approx(lam(3) + lam(2) + 0.7 * lam(5), rel=1e-13)
    # the cross term differences along the diagonal shift of both particles
    f = sample_on_grid(g, lambda x: np.cos(2 * np.pi * (3 * x[:, 0] + 2 * x[:, 1])))
    v = f.values
    diag = (np.roll(v, (-1, -1), (0, 1)) - 2 * v + np.roll(v, (1, 1), (0, 1))) / h**2
    lap = sum((np.roll(v, -1, a) - 2 * v + np.roll(v, 1, a)) / h**2 for a in (0, 1))
    tau = 1e-4
    out = spectral_diffusion_step(f, tau, 0.7, "semigroup")
    assert np.max(np.abs(-(lap + 0.7 * diag) - sym[3, 2] * v)) <= 1e-8 * sym[3, 2]
    assert np.max(np.abs(out.values - np.exp(-tau * sym[3, 2]) * v)) <= 1e-13


def test_z_grid_symbol():
    g = GridSpec(1, 1, 8, has_z=True)
    sym = diffusion_symbol(g, 2.0, "spectral")
    assert sym[1, 2] == pytest.approx(4 * np.pi**2 * (4 + 2 * 1), rel=1e-14)


def test_diffusion_step_errors():
    f = TorusGridFn(GridSpec(1, 1, 8), np.zeros(8))
    with pytest.raises(InvalidInputError):
        spectral_diffusion_step(f, 0.0, 1.0)
    with pytest.raises(InvalidInputError):
        spectral_diffusion_step(f, 0.1, -1.0)
    with pytest.raises(InvalidInputError):
        spectral_diffusion_step(f, 0.1, 0.0, "explicit")


@pytest.mark.parametrize("kind", ["lattice", "spectral"])
@pytest.mark.parametrize("mode", ["resolvent", "semigroup"])
def test_constants_preserved(kind, mode):
    f = TorusGridFn(GridSpec(1, 2, 8), np.full(64, -1.25))
    out = spectral_diffusion_step(f, 0.3, 1.5, mode, kind)
    assert np.max(np.abs(out.values + 1.25)) <= 1e-14


grids = st.sampled_from([GridSpec(1, 2, 8), GridSpec(1, 3, 4), GridSpec(2, 1, 8), GridSpec(1, 2, 8, True)])


@given(grids, st.integers(0, 2**32 - 1), st.floats(1e-4, 0.5), st.floats(0, 3))
def test_diffusion_properties(g, seed, tau, a0):
    rng = np.random.default_rng(seed)
    f = TorusGridFn(g, rng.standard_normal(g.shape))
    out = spectral_diffusion_step(f, tau, a0, "semigroup")
    # maximum principle (lattice kernel is nonnegative)
    assert out.values.max() <= f.values.max() + 1e-12
    assert out.values.min() >= f.values.min() - 1e-12
    # semigroup property
    twice = spectral_diffusion_step(out, tau, a0, "semigroup")
    assert np.max(np.abs(twice.values - spectral_diffusion_step(f, 2 * tau, a0, "semigroup").values)) <= 1e-10
    # commutes with simultaneous whole-node translation of all coordinates
    shift = tuple(range(g.n_axes))
    moved = f.with_values(np.roll(f.values, 1, axis=shift))
    lhs = spectral_diffusion_step(moved, tau, a0, "semigroup").values
    assert np.max(np.abs(lhs - np.roll(out.values, 1, axis=shift))) <= 1e-12
    res = spectral_diffusion_step(f, tau, a0, "resolvent")
    assert res.values.max() <= f.values.max() + 1e-12 and res.values.min() >= f.values.min() - 1e-12


@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 0.5), st.floats(0, 3))
def test_diffusion_preserves_exchangeability(seed, tau, a0):
    g = GridSpec(1, 3, 6)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(g.shape)
    # symmetrize over the particle blocks
    v = sum(np.transpose(v, p) for p in itertools.permutations(range(3))) / 6
    out = spectral_diffusion_step(TorusGridFn(g, v), tau, a0, "resolvent").values
    for p in itertools.permutations(range(3)):
        assert np.max(np.abs(np.transpose(out, p) - out)) <= 1e-12


# ---------------------------------------------------------------- heat_convolve

def test_heat_convolve_examples():
    x = np.arange(32) / 32
    g = np.cos(2 * np.pi * x)
    assert np.array_equal(heat_convolve(g, 0.0), g)
    assert np.max(np.abs(heat_convolve(g, 0.05) - np.exp(-2 * np.pi**2 * 0.05) * g)) <= 1e-14
    assert np.max(np.abs(heat_convolve(np.ones(32), 0.3) - 1.0)) <= 1e-14
    with pytest.raises(InvalidInputError):
        heat_convolve(g, -0.1)


def test_heat_convolve_against_wrapped_gaussian():
    # independent oracle: explicit wrapped-Gaussian quadrature on the grid nodes
    M, v = 64, 0.01
    x = np.arange(M) / M
    g = np.exp(np.sin(2 * np.pi * x))
    diff = x[:, None] - x[None, :]
    kern = sum(np.exp(-((diff + j) ** 2) / (2 * v)) for j in range(-3, 4)) / np.sqrt(2 * np.pi * v)
    ref = kern @ g / M
    assert np.max(np.abs(heat_convolve(g, v) - ref)) <= 1e-10


# ---------------------------------------------------------------- interpolation

def test_interpolate_examples(rng):
    g = GridSpec(1, 2, 8)
    f = TorusGridFn(g, rng.standard_normal(g.shape))
    assert interpolate(f, [3 / 8, 5 / 8]) == f.values[3, 5]
    mid = interpolate(f, [3.5 / 8, 5 / 8])
    assert mid == pytest.approx(0.5 * (f.values[3, 5] + f.values[4, 5]), abs=1e-15)
    # wraps across the seam
    seam = interpolate(f, [7.5 / 8, 0.0])
    assert seam == pytest.approx(0.5 * (f.values[7, 0] + f.values[0, 0]), abs=1e-15)


def test_interpolate_multilinear_exact():
    # f = (a + b s)(c + e u) is bilinear on each cell; use cell-local coordinates
    g = GridSpec(1, 2, 8)
    f = sample_on_grid(g, lambda c: (1 + 2 * c[:, 0]) * (3 - c[:, 1]))
    pts = np.array([[0.31, 0.22], [0.05, 0.6], [0.7, 0.85]])
    exact = (1 + 2 * pts[:, 0]) * (3 - pts[:, 1])
    assert np.max(np.abs(interpolate(f, pts) - exact)) <= 1e-12


@given(st.integers(0, 2**32 - 1), arrays(float, (5, 2), elements=st.floats(-3, 3)))
def test_interpolate_bounded(seed, pts):
    g = GridSpec(1, 2, 8)
    f = TorusGridFn(g, np.random.default_rng(seed).standard_normal(g.shape))
    out = interpolate(f, pts)
    assert np.all(out <= f.values.max() + 1e-12) and np.all(out >= f.values.min() - 1e-12)


def test_interpolate_dimension_check():
    with pytest.raises(InvalidInputError):
        interpolate(TorusGridFn(GridSpec(1, 2, 4), np.zeros(16)), [0.1])
