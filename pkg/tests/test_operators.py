from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oneshm.grid import Field, PhysTestFn, TorusGrid, constant_window, raised_cosine_bump
from oneshm.operators import (LinearMap, MultiplierOp, apply_multiplier, commutation_decay_experiment,
                              commutator_apply, commutator_map, compactness_probe, identity_map,
                              split_commutator, multiplication_map, multiplier_map, op_norm_estimate,
                              windowed_wave_probes, zero_map)
from oneshm.sequences import band_limited_real
from oneshm.shell import c0_lift, constant_lift, homogeneous_lift

OMEGAS = [2.0**-k for k in range(2, 9)]


def gauss(d):
    return c0_lift(lambda x: np.exp(-np.sum(np.asarray(x) ** 2, axis=1)), d)


@pytest.fixture(scope="module")
def grid():
    return TorusGrid(2, 64)


@pytest.fixture(scope="module")
def bump(grid):
    return raised_cosine_bump(grid, (0.5, 0.5), power=2)


def test_apply_multiplier_examples(grid):
    u = band_limited_real(grid, 0)
    one = MultiplierOp(lambda x: np.ones(len(x)))
    assert np.allclose(apply_multiplier(one, u).samples, u.samples, atol=1e-13)
    x = grid.coordinates()
    xi0 = np.array([3.0, -2.0])
    wave = Field(grid, np.exp(2j * np.pi * (xi0[0] * x[0] + xi0[1] * x[1])))
    w = 0.2
    out = apply_multiplier(MultiplierOp(gauss(2), w), wave)
    assert np.allclose(out.samples, np.exp(-np.sum((w * xi0) ** 2)) * wave.samples, atol=1e-13)


def test_sign_multiplier_is_skew(grid):
    u = band_limited_real(grid, 1)
    sgn = homogeneous_lift(lambda e: np.sign(e[:, 0]) + 0j, 2)
    out = apply_multiplier(MultiplierOp(sgn), u)
    c = np.fft.fftn(u.samples[0]) / grid.size
    keep = grid.frequencies()[0] != 0
    expect = np.sqrt(np.sum(np.abs(c[keep]) ** 2))
    got = np.sqrt(np.sum(np.abs(np.fft.fftn(out.samples[0]) / grid.size) ** 2))
    assert got == pytest.approx(expect, rel=1e-12)
    # odd real symbol maps real fields to imaginary ones
    assert np.max(np.abs(out.samples.real)) < 1e-12


def test_commutator_examples(grid, bump):
    u = band_limited_real(grid, 2)
    c = commutator_apply(bump, MultiplierOp(constant_lift(2.0, 2)), u)
    assert np.max(np.abs(c.samples)) < 1e-12
    c = commutator_apply(constant_window(grid), MultiplierOp(gauss(2)), u)
    assert np.max(np.abs(c.samples)) < 1e-12
    x = grid.coordinates()
    wave = Field(grid, np.exp(2j * np.pi * 3 * x[0]))
    c = commutator_apply(bump, MultiplierOp(gauss(2), 1.0), wave)
    assert np.linalg.norm(c.samples) > 1e-3


@given(st.integers(0, 2**31))
def test_adjoint_identity(seed):
    grid = TorusGrid(2, 32)
    rng = np.random.default_rng(seed)
    phi = PhysTestFn(grid, np.exp(1j * np.cos(2 * np.pi * grid.coordinates()[0])), smooth_tol=None)
    L = commutator_map(phi, MultiplierOp(gauss(2), 0.3))
    u = Field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    v = Field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    lhs = np.vdot(v.samples, L.apply(u).samples)
    rhs = np.vdot(L.adjoint(v).samples, u.samples)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_norm_examples(grid):
    assert op_norm_estimate(identity_map(), grid) == pytest.approx(1.0, abs=1e-6)
    assert op_norm_estimate(zero_map(), grid) == 0.0
    psi = c0_lift(lambda x: 0.7 * np.exp(-np.sum(np.asarray(x) ** 2, axis=1)), 2)
    A = multiplier_map(MultiplierOp(psi, 0.05), grid)
    B = multiplication_map(raised_cosine_bump(grid, (0.5, 0.5), scale=0.9))
    assert op_norm_estimate(A, grid, method="lanczos") == pytest.approx(0.7, abs=1e-3)
    assert op_norm_estimate(B, grid, method="lanczos") == pytest.approx(0.9, abs=1e-3)
    # plain power iteration needs more steps on the clustered spectrum of B
    assert op_norm_estimate(B, grid, iters=500) == pytest.approx(0.9, abs=1e-3)


def test_norm_matches_dense_svd():
    grid = TorusGrid(1, 32)
    phi = raised_cosine_bump(grid, (0.3,), power=1)
    L = commutator_map(phi, MultiplierOp(gauss(1), 0.2))
    cols = []
    for k in range(grid.size):
        e = np.zeros(grid.shape, dtype=complex)
        e[k] = 1
        cols.append(L.apply(Field(grid, e)).samples[0])
    dense = np.stack(cols, axis=1)
    ref = np.linalg.svd(dense, compute_uv=False)[0]
    assert op_norm_estimate(L, grid, method="lanczos") == pytest.approx(ref, rel=1e-8)
    assert op_norm_estimate(L, grid, iters=300) == pytest.approx(ref, rel=1e-4)


def test_decay_experiment(grid, bump):
    curve = commutation_decay_experiment(bump, gauss(2), OMEGAS)
    assert curve.decaying and curve.ratio <= 0.2
    flat = commutation_decay_experiment(bump, homogeneous_lift(lambda e: e[:, 0] + 0j, 2), OMEGAS)
    assert not flat.decaying
    zero = commutation_decay_experiment(bump, constant_lift(1.0, 2), OMEGAS)
    assert max(zero.norms) < 1e-12
    with pytest.raises(ValueError):
        commutation_decay_experiment(bump, gauss(2), OMEGAS[::-1])


def test_split_commutator_adds_up(grid, bump):
    C, Ct, K = split_commutator(bump, gauss(2), 0.1)
    u = band_limited_real(grid, 3)
    diff = C.apply(u) - (Ct.apply(u) + K.apply(u))
    assert np.max(np.abs(diff.samples)) < 1e-12


def test_compactness_probe(grid, bump):
    probes = windowed_wave_probes(bump, (1, 1), [1, 2, 4, 8, 12])
    K = commutator_map(bump, MultiplierOp(homogeneous_lift(lambda e: e[:, 0] + 0j, 2)))
    assert compactness_probe(K, probes).decaying
    ident = compactness_probe(identity_map(), probes)
    assert not ident.decaying and ident.norms == pytest.approx([1.0] * 5)
    assert max(compactness_probe(zero_map(), probes).norms) == 0


def test_linear_map_algebra(grid):
    u = band_limited_real(grid, 4)
    I = identity_map()
    assert np.allclose((I + I).apply(u).samples, 2 * u.samples)
    assert np.allclose((I - I).apply(u).samples, 0)
    assert isinstance((I @ I).H, LinearMap)
