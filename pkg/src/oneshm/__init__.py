"""Empirical one-scale H-measures, H-measures and semiclassical measures on the torus."""

from __future__ import annotations

__version__ = "0.1.0"

from .grid import (Field, PhysTestFn, TorusGrid, constant_window, dft_forward, dft_inverse,
                   parseval_mass, partition_of_unity, pointwise_mul, raised_cosine_bump)
from .measures import (EmpiricalMeasure, PairingTrace, antipodal_check, empirical_measure,
                       h_projection, oscillatory_index, pairing, sc_projection, sigma_inf_mass,
                       support_inclusion_check)
from .sequences import (Concentration, ModulatedOscillation, PlaneWave, RelaxationSystem,
                        ScaleSchedule, TwoScaleSum, center_sequence, generate,
                        solve_relaxation_system)
from .shell import (ShellBins, ShellPoint, ShellTestFn, c0_lift, compactify_radius,
                    eval_test, homogeneous_lift, rational_symbol)
