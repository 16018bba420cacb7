from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oneshm.grid import (Field, GridMismatchError, PhysTestFn, TorusGrid, compact_partition,
                         constant_window, dft_forward, dft_inverse, load_field, parseval_mass,
                         partition_of_unity, pointwise_mul, quadrature_mass, raised_cosine_bump,
                         save_field, squared_partition_defect, trig_harmonic)


def test_odd_points_rejected():
    with pytest.raises(ValueError, match="points_per_axis must be even"):
        TorusGrid(2, 15)


def test_frequencies_fft_order_and_headroom():
    g = TorusGrid(1, 8)
    assert g.frequencies()[0].tolist() == [0, 1, 2, 3, -4, -3, -2, -1]
    assert g.headroom == 2.0
    with pytest.raises(ValueError):
        g.frequencies()[0][0] = 5.0


def test_plane_wave_single_coefficient():
    g = TorusGrid(2, 16)
    x = g.coordinates()
    f = Field(g, np.exp(2j * np.pi * (3 * x[0] - 2 * x[1])))
    c = dft_forward(f)[0]
    idx = g.index_of((3, -2))
    assert abs(c[idx] - 1) < 1e-12
    c[idx] = 0
    assert np.max(np.abs(c)) < 1e-12


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]))
def test_roundtrip_and_parseval(seed, d):
    g = TorusGrid(d, 8 if d == 3 else 16, period=1.7)
    rng = np.random.default_rng(seed)
    f = Field(g, rng.standard_normal((2,) + g.shape) + 1j * rng.standard_normal((2,) + g.shape))
    back = dft_inverse(g, dft_forward(f))
    assert np.allclose(back.samples, f.samples, atol=1e-12)
    assert abs(parseval_mass(f) - quadrature_mass(f)) <= 1e-10 * quadrature_mass(f)


def test_grid_mismatch():
    a, b = TorusGrid(1, 16), TorusGrid(1, 32)
    with pytest.raises(GridMismatchError):
        pointwise_mul(constant_window(a), Field.zeros(b))


def test_under_resolved_window_rejected():
    g = TorusGrid(1, 32)
    step = (g.coordinates()[0] < 0.5).astype(float)
    with pytest.raises(ValueError, match="under-resolved"):
        PhysTestFn(g, step, name="step")


def test_declared_support_checked():
    g = TorusGrid(1, 64)
    with pytest.raises(ValueError, match="outside its declared support"):
        PhysTestFn(g, np.ones(g.shape), declared_support=((0.0, 0.5),), smooth_tol=None)


@pytest.mark.parametrize("d,per_axis", [(1, 2), (2, 2), (2, 3), (3, 2)])
def test_partition_of_unity(d, per_axis):
    g = TorusGrid(d, 64)
    ws = partition_of_unity(g, per_axis)
    assert len(ws) == per_axis**d
    assert squared_partition_defect(ws) < 1e-12


def test_compact_partition_is_partition():
    g = TorusGrid(2, 64)
    ws = compact_partition(g, 2)
    assert squared_partition_defect(ws) < 1e-12


def test_bump_and_harmonic_are_trig_polynomials():
    g = TorusGrid(2, 32)
    b = raised_cosine_bump(g, (0.5, 0.5), power=2)
    assert b.spectral_tail() < 1e-14
    assert abs(b.sup - 1) < 1e-12
    h = trig_harmonic(g, (1, 2), "sin")
    assert np.allclose(h.samples, h.conj().samples)


def test_field_cache_roundtrip(tmp_path):
    g = TorusGrid(2, 16, period=2.0)
    rng = np.random.default_rng(3)
    f = Field(g, rng.standard_normal((2,) + g.shape) + 1j * rng.standard_normal((2,) + g.shape))
    p = tmp_path / "f.oshf"
    save_field(f, p)
    h = load_field(p)
    assert h.grid == g
    # complex64 storage
    assert np.allclose(h.samples, f.samples, atol=1e-6)
    raw = p.read_bytes()
    assert raw[:4] == b"OSHF"


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        load_field(p)


def test_dft_examples():
    g = TorusGrid(1, 16)
    x = g.coordinates()[0]
    c = dft_forward(Field(g, np.exp(2j * np.pi * 4 * x)))[0]
    expect = np.zeros(16, dtype=complex)
    expect[4] = 1
    assert np.max(np.abs(c - expect)) <= 1e-13
    c = dft_forward(Field(g, np.ones(16)))[0]
    assert abs(c[0] - 1) < 1e-13 and np.max(np.abs(c[1:])) < 1e-13
    c = dft_forward(Field(g, np.cos(2 * np.pi * x)))[0]
    assert abs(c[1] - 0.5) < 1e-13 and abs(c[-1] - 0.5) < 1e-13


def test_pointwise_mul_examples():
    g = TorusGrid(2, 32)
    x = g.coordinates()
    u = Field(g, np.exp(2j * np.pi * (3 * x[0] + x[1])))
    assert np.allclose(pointwise_mul(constant_window(g), u).samples, u.samples)
    assert np.all(pointwise_mul(constant_window(g, 0.0), u).samples == 0)
    bump = raised_cosine_bump(g, (0.3, 0.6))
    got = dft_forward(pointwise_mul(bump, u))[0]
    shifted = np.roll(dft_forward(Field(g, bump.samples))[0], (3, 1), axis=(0, 1))
    assert np.max(np.abs(got - shifted)) <= 1e-12


def test_parseval_mass_examples():
    g = TorusGrid(2, 32)
    x = g.coordinates()
    assert abs(parseval_mass(Field(g, np.exp(2j * np.pi * x[0]))) - 1) < 1e-12
    assert parseval_mass(Field.zeros(g)) == 0.0
    bump = raised_cosine_bump(g, (0.5, 0.5))
    # trapezoidal rule on the periodic grid, computed independently
    trap = float(np.sum(np.abs(bump.samples) ** 2)) / g.size
    assert abs(parseval_mass(Field(g, bump.samples)) - trap) <= 1e-10 * trap
    # closed form: (int ((1+cos)/2)^4)^2 = (35/128)^2
    assert abs(trap - (35 / 128) ** 2) < 1e-12
