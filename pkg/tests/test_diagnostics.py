"""
Tests for mixkin.diagnostics — conserved quantities, relative errors and
the potential amplitude monitor.
"""
import os
import sys

import numpy as np
import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, REPO_ROOT)

from mixkin.diagnostics import (  # noqa: E402
    CSV_COLUMNS,
    DiagnosticsRecord,
    conserved_dk,
    conserved_gc,
    phi_amplitude,
    relative_error,
)
from mixkin.errors import DiagnosticsError, MixkinError, NonFiniteError  # noqa: E402
from mixkin.grid import Axis, Field, Grid  # noqa: E402


@pytest.fixture
def plane():
    return Grid((Axis("x", -1.0, 1.0, 21), Axis("y", -1.0, 1.0, 21)))


@pytest.fixture
def mask(plane):
    x, y = np.broadcast_arrays(*plane.coordinates())
    return x ** 2 + y ** 2 <= 0.8


def _periodic4():
    return Grid((
        Axis("x", 0.0, 2.0, 6, periodic=True),
        Axis("y", 0.0, 3.0, 6, periodic=True),
        Axis("z", 0.0, 4.0, 5, periodic=True),
        Axis("v", -1.0, 1.0, 8, periodic=True),
    ))


class TestRecord:
    def test_row_order_and_blanks(self):
        rec = DiagnosticsRecord(time=0.5, mass=1.0, l1=2.0, l2=3.0, phase="nonlinear-FD")
        row = rec.to_row()
        assert len(row) == len(CSV_COLUMNS)
        assert row[:4] == ["0.5", "1", "2", "3"]
        assert row[4] == ""
        assert row[-1] == "nonlinear-FD"

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            DiagnosticsRecord(time=1.0, mass=float("nan"), l1=0.0, l2=0.0)


class TestConservedGC:
    def test_zero_density(self, plane, mask):
        cons = conserved_gc(Field.zeros(plane), np.ones(plane.shape), mask)
        assert cons == (0.0, 0.0, 0.0, 0.0)

    def test_zero_potential_has_zero_energy(self, plane, mask):
        cons = conserved_gc(Field(plane, np.full(plane.shape, -2.0)), np.zeros(plane.shape), mask)
        area = mask.sum() * 0.1 * 0.1
        assert cons.energy == 0.0
        assert cons.mass == pytest.approx(-2.0 * area)
        assert cons.l1 == pytest.approx(2.0 * area)
        assert cons.l2 == pytest.approx(2.0 * np.sqrt(area))


class TestConservedDK:
    def test_constant_entropy(self):
        grid = _periodic4()
        c = 0.3
        f = Field(grid, np.full(grid.shape, c))
        volume = 2.0 * 3.0 * 4.0 * 2.0
        cons = conserved_dk(f, np.zeros(grid.shape[:3]), f.data, np.zeros(grid.shape[:2]))
        assert cons.entropy == pytest.approx(c * np.log(c) * volume)
        assert cons.mass == pytest.approx(c * volume)
        assert cons.energy == pytest.approx(0.0, abs=1e-14)

    def test_entropy_ignores_zeros(self):
        grid = _periodic4()
        cons = conserved_dk(Field.zeros(grid), np.zeros(grid.shape[:3]), 0.0, np.zeros(grid.shape[:2]))
        assert cons.entropy == 0.0

    def test_potential_energy_term(self):
        grid = _periodic4()
        f = Field(grid, np.full(grid.shape, 0.5))
        rho0 = np.full(grid.shape[:2], 0.25)
        phi = np.full(grid.shape[:3], 2.0)
        cons = conserved_dk(f, phi, f.data, rho0)
        # rho = 0.5 * 2 = 1 on every (x, y, z) node, volume 24
        assert cons.energy == pytest.approx(2.0 * (1.0 - 0.25) * 24.0)


class TestRelativeError:
    def test_identical(self, plane, mask):
        u = Field(plane, np.ones(plane.shape))
        assert relative_error(u, u, mask) == 0.0

    def test_doubled(self, plane, mask):
        u = Field(plane, np.full(plane.shape, 1.5))
        assert relative_error(u.copy(data=2.0 * u.data), u, mask) == pytest.approx(1.0)

    def test_only_interior_counts(self, plane, mask):
        u = Field(plane, np.ones(plane.shape))
        v = u.copy(data=np.where(mask, 1.0, 100.0))
        assert relative_error(v, u, mask) == 0.0

    def test_zero_reference(self, plane, mask):
        with pytest.raises(DiagnosticsError) as info:
            relative_error(Field.zeros(plane), Field.zeros(plane), mask)
        assert isinstance(info.value, MixkinError)


class TestPhiAmplitude:
    def _grid3(self, n=201):
        return Grid((Axis("x", -10.0, 10.0, n), Axis("y", -10.0, 10.0, n),
                     Axis("z", 0.0, 6.0, 5, periodic=True)))

    def test_constant(self):
        grid = self._grid3(41)
        c = -0.7
        amp = phi_amplitude(np.full(grid.shape, c), grid, 5.0)
        assert amp == pytest.approx(abs(c) * np.sqrt(2.0 * np.pi * 5.0 * 6.0), rel=1e-10)

    def test_single_mode_independent_of_m(self):
        grid = self._grid3()
        x, y, _ = grid.coordinates()
        theta = np.arctan2(y, x)
        amps = []
        for m in (2, 3):
            phi = np.broadcast_to(np.cos(m * theta), grid.shape)
            amps.append(phi_amplitude(phi, grid, 5.0))
        expected = np.sqrt(np.pi * 5.0 * 6.0)
        assert amps[0] == pytest.approx(expected, rel=1e-2)
        assert amps[1] == pytest.approx(expected, rel=1e-2)
