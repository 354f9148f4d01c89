"""
diagnostics.py — Conserved quantities and error monitors.

Integrals over the (x, y) plane are restricted to interior nodes of the
embedded domain (plain rectangle rule there); bounded v uses the trapezoid
rule and periodic z the rectangle rule (see ``grid.reduce_integral``).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DiagnosticsError, NonFiniteError
from .grid import Field, Grid, reduce_integral
from .store import format_value

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("time", "mass", "l1", "l2", "entropy", "energy",
               "relerr_phi", "relerr_rho", "phi_amplitude", "phase")
N_THETA = 256


@dataclass
class DiagnosticsRecord:
    time: float
    mass: float
    l1: float
    l2: float
    entropy: Optional[float] = None
    energy: Optional[float] = None
    relerr_phi: Optional[float] = None
    relerr_rho: Optional[float] = None
    phi_amplitude: Optional[float] = None
    phase: str = ""

    def __post_init__(self) -> None:
        for key, value in asdict(self).items():
            if isinstance(value, float) and not np.isfinite(value):
                raise NonFiniteError(f"diagnostic {key} is not finite at t={self.time}")

    def to_row(self) -> List[str]:
        values = asdict(self)
        return [values["phase"] if c == "phase" else format_value(values[c]) for c in CSV_COLUMNS]


class DKConserved(NamedTuple):
    mass: float
    l1: float
    l2: float
    entropy: float
    energy: float


class GCConserved(NamedTuple):
    mass: float
    l1: float
    l2: float
    energy: float


def _entropy_density(f: np.ndarray) -> np.ndarray:
    # f ln|f|, with 0 ln 0 taken as 0
    absf = np.abs(f)
    safe = np.where(absf > 0.0, absf, 1.0)
    return f * np.log(safe)


def _integral(grid: Grid, data: np.ndarray, mask: Optional[np.ndarray]) -> float:
    return reduce_integral(Field(grid, data), mask=mask)


def conserved_dk(
    f: Field,
    phi: np.ndarray,
    f_m: np.ndarray,
    rho0: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> DKConserved:
    """Mass, L1, L2, entropy and the energy int (f - f_M) v^2 + int phi (rho - rho0).

    ``f`` is (x, y, z, v); ``phi`` is (nx, ny, nz); ``rho0`` is (nx, ny).
    """
    grid = f.grid
    data = f.data
    mass = _integral(grid, data, mask)
    l1 = _integral(grid, np.abs(data), mask)
    l2 = float(np.sqrt(_integral(grid, data * data, mask)))
    entropy = _integral(grid, _entropy_density(data), mask)
    v = grid.axes[3].nodes().reshape(1, 1, 1, -1)
    kinetic = _integral(grid, (data - np.broadcast_to(f_m, data.shape)) * v * v, mask)
    rho = data @ grid.axes[3].quadrature_weights()
    grid3 = grid.sub(("x", "y", "z"))
    potential = _integral(grid3, np.asarray(phi) * (rho - np.asarray(rho0)[:, :, None]), mask)
    return DKConserved(mass, l1, l2, entropy, kinetic + potential)


def conserved_gc(rho_bar: Field, phi: np.ndarray, mask: Optional[np.ndarray] = None) -> GCConserved:
    grid = rho_bar.grid
    data = rho_bar.data
    return GCConserved(
        mass=_integral(grid, data, mask),
        l1=_integral(grid, np.abs(data), mask),
        l2=float(np.sqrt(_integral(grid, data * data, mask))),
        energy=_integral(grid, data * np.asarray(phi), mask),
    )


def relative_error(u_t: Field, u_0: Field, mask: Optional[np.ndarray] = None) -> float:
    """||u_t - u_0||_1 / ||u_0||_1 over interior nodes."""
    denom = _integral(u_0.grid, np.abs(u_0.data), mask)
    if denom == 0.0:
        raise DiagnosticsError("relative error undefined: reference field has zero L1 norm")
    return _integral(u_0.grid, np.abs(u_t.data - u_0.data), mask) / denom


def phi_amplitude(phi: np.ndarray, grid3: Grid, r_p: float, n_theta: int = N_THETA) -> float:
    """sqrt of the integral of phi^2 over the cylinder r = r_p (r_p dtheta dz)."""
    ax, ay, az = grid3.axes[:3]
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    points = np.column_stack([r_p * np.cos(theta), r_p * np.sin(theta)])
    interp = RegularGridInterpolator((ax.nodes(), ay.nodes()), np.asarray(phi, dtype=np.float64),
                                     method="linear")
    samples = interp(points)
    dtheta = 2.0 * np.pi / n_theta
    total = float(np.sum((samples * samples) @ az.quadrature_weights()) * r_p * dtheta)
    return float(np.sqrt(total))
