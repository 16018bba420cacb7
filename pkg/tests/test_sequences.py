from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oneshm.grid import Field, TorusGrid, dft_forward, parseval_mass, raised_cosine_bump
from oneshm.sequences import (AliasingError, Centered, Concentration, Custom, ModulatedOscillation,
                              PlaneWave, ScaleSchedule, Stack, TwoScaleSum, band_limited_real,
                              center_sequence, generate, int_exponent, relaxation_lhs,
                              solve_relaxation_system, zero_family)


def _support(f):
    c = dft_forward(f)[0]
    idx = np.argwhere(np.abs(c) > 1e-12)
    return {tuple(int(i) for i in row): complex(c[tuple(row)]) for row in idx}


def test_schedules():
    s = ScaleSchedule.power(0.5, 2.0)
    assert s(16) == 0.5
    e = ScaleSchedule.explicit({8: 0.1, 16: 0.05})
    assert e(16) == 0.05
    with pytest.raises(KeyError):
        e(32)
    with pytest.raises(ValueError):
        ScaleSchedule.explicit({8: -1.0})
    assert int_exponent(64 ** (1 / 3)) == 4


def test_plane_wave_single_coefficient():
    g = TorusGrid(2, 64)
    f = generate(PlaneWave(g, (1, 0), 1.0), 8)
    assert _support(f) == {(8, 0): pytest.approx(1)}


def test_two_scale_sum_mass():
    g = TorusGrid(2, 128)
    f = generate(TwoScaleSum(g, 1.0, 2.0, (1, 0), (0, 1)), 4)
    sup = _support(f)
    assert set(sup) == {(4, 0), (0, 16)}
    assert all(abs(v - 1) < 1e-12 for v in sup.values())


def test_aliasing_rejected():
    g = TorusGrid(1, 64)
    with pytest.raises(AliasingError, match="headroom"):
        PlaneWave(g, (1,), 1.0).generate(17)
    # exactly at N/4 is allowed
    PlaneWave(g, (1,), 1.0).generate(16)


def test_concentration_normalised():
    g = TorusGrid(2, 256)
    fam = Concentration(g, ScaleSchedule.power(1.0, 2.0), (0.3, 0.7))
    masses = [parseval_mass(fam.generate(n)) for n in (8, 16, 32, 64)]
    assert max(abs(m - 1) for m in masses) < 0.01
    with pytest.raises(ValueError, match="under-resolved"):
        Concentration(g, ScaleSchedule.power(2.0), (0.5, 0.5)).generate(64)


def test_deterministic_generation():
    g = TorusGrid(2, 64)
    fam = ModulatedOscillation(g, ScaleSchedule.power(1.0), (1, 1), raised_cosine_bump(g, (0.5, 0.5)))
    assert np.array_equal(fam.generate(8).samples, fam.generate(8).samples)


def test_relaxation_single_mode():
    g = TorusGrid(2, 64)
    x = g.coordinates()
    q, a1 = 8, 1.5
    f = Field(g, np.stack([np.exp(2j * np.pi * q * x[0]), np.zeros(g.shape)]))
    u = solve_relaxation_system((a1, 2.0), 1 / q, f)
    assert np.allclose(u.samples[0], f.samples[0] / (1 + 2j * np.pi * a1), atol=1e-13)
    assert np.max(np.abs(u.samples[1])) < 1e-14
    z = solve_relaxation_system((1, 1), 0.1, Field.zeros(g, 2))
    assert np.all(z.samples == 0)


@given(st.integers(0, 2**31))
def test_relaxation_residual(seed):
    g = TorusGrid(2, 32)
    rng = np.random.default_rng(seed)
    f = Field(g, rng.standard_normal((2,) + g.shape) + 1j * rng.standard_normal((2,) + g.shape))
    u = solve_relaxation_system((1, 1), 0.1, f)
    back = relaxation_lhs((1, 1), 0.1, u)
    err = np.max(np.abs(dft_forward(back) - dft_forward(f)))
    assert err <= 1e-12 * max(1.0, np.max(np.abs(dft_forward(f))))


def test_relaxation_needs_two_components():
    g = TorusGrid(2, 16)
    with pytest.raises(ValueError):
        solve_relaxation_system((1, 1), 0.1, Field.zeros(g, 1))


def test_center_sequence():
    g = TorusGrid(1, 64)
    const = PlaneWave(g, (1,), alpha=0.0)
    assert not const.weakly_null
    centered = center_sequence(const)
    assert isinstance(centered, Centered)
    assert np.max(np.abs(centered.generate(4).samples)) < 1e-14
    wave = PlaneWave(g, (1,))
    assert center_sequence(wave) is wave
    with pytest.raises(ValueError, match="weak limit is unknown"):
        center_sequence(Custom(g, lambda n: np.ones(g.shape), known=False))


def test_stack_and_zero():
    g = TorusGrid(2, 64)
    st_ = Stack((PlaneWave(g, (1, 0)), zero_family(g)))
    assert st_.components == 2
    assert st_.generate(4).samples.shape == (2, 64, 64)
    assert st_.weakly_null


def test_band_limited_real():
    g = TorusGrid(2, 32)
    f = band_limited_real(g, 5)
    assert f.is_real()
    c = dft_forward(f)[0]
    assert np.max(np.abs(c[g.frequency_norms() > g.headroom])) < 1e-14
