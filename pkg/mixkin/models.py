"""
models.py — Scenario construction.

Guiding-centre scenarios live on the D-shaped cross-section; the steady pair
(phi0, rho_bar0) solves

    -lap(phi0) = exp(-phi0) - 2,   phi0 = 0 on the boundary,   rho_bar0 = exp(-phi0) - 1

The drift-kinetic ITG case uses a disk of radius r_max in the (x, y) plane,
a periodic z axis of length L and a bounded v axis [-v_max, v_max]. Radial
profiles have the form

    P(r) = C_P exp(-kappa_P * dr_P * tanh((r - r_p) / dr_P))
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import integrate

from .elliptic import solve_newton_steady
from .errors import ConfigError, GeometryError
from .geometry import DShape, Disk, EmbeddedDomain, embed
from .grid import Axis, Field, Grid

logger = logging.getLogger(__name__)

DSHAPE_BOX = (1.0, 2.4, -1.1, 1.1)
ITG_BOX_HALF_WIDTH = 15.5


# ---------------------------------------------------------------------------
# ITG parameters and profiles
# ---------------------------------------------------------------------------

@dataclass
class ITGParameters:
    r_min: float = 0.0
    r_max: float = 14.5
    kappa_n0: float = 0.055
    kappa_ti: float = 0.27586
    kappa_te: float = 0.27586
    delta_r_n0: float = 2.9
    delta_r_ti: float = 1.45
    delta_r_te: float = 1.45
    epsilon: float = 1e-6
    m: int = 5
    n: int = 1
    length: float = 1506.759067
    v_max: float = 8.0

    @property
    def r_p(self) -> float:
        return 0.5 * (self.r_max + self.r_min)

    @property
    def delta_r(self) -> float:
        # perturbation width 4 * dr_n0 / dr_Ti, taken as written (8 with the defaults)
        return 4.0 * self.delta_r_n0 / self.delta_r_ti

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class Profile:
    kappa: float
    width: float
    r_p: float
    scale: float = 1.0

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.scale * np.exp(-self.kappa * self.width * np.tanh((np.asarray(r) - self.r_p) / self.width))

    def derivative(self, r: np.ndarray) -> np.ndarray:
        sech2 = 1.0 / np.cosh((np.asarray(r) - self.r_p) / self.width) ** 2
        return -self.kappa * sech2 * self(r)


@dataclass(frozen=True)
class ProfileSet:
    n0: Profile
    ti: Profile
    te: Profile
    r_min: float
    r_max: float

    def f_eq(self, r: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Local Maxwellian n0 / sqrt(2 pi Ti) exp(-v^2 / (2 Ti))."""
        ti = self.ti(r)
        return self.n0(r) / np.sqrt(2.0 * np.pi * ti) * np.exp(-np.asarray(v) ** 2 / (2.0 * ti))


def build_profiles(params: ITGParameters) -> ProfileSet:
    for name in ("delta_r_n0", "delta_r_ti", "delta_r_te"):
        if getattr(params, name) <= 0.0:
            raise ConfigError(f"profile width {name} must be positive")
    if not params.r_max > params.r_min:
        raise ConfigError("r_max must exceed r_min")
    raw = Profile(params.kappa_n0, params.delta_r_n0, params.r_p)
    integral, _ = integrate.quad(raw, params.r_min, params.r_max, epsabs=1e-13, epsrel=1e-13)
    c_n0 = (params.r_max - params.r_min) / integral
    logger.debug(f"n0 normalisation C = {c_n0:.15g}")
    return ProfileSet(
        n0=Profile(params.kappa_n0, params.delta_r_n0, params.r_p, c_n0),
        ti=Profile(params.kappa_ti, params.delta_r_ti, params.r_p),
        te=Profile(params.kappa_te, params.delta_r_te, params.r_p),
        r_min=params.r_min,
        r_max=params.r_max,
    )


# ---------------------------------------------------------------------------
# ITG setup
# ---------------------------------------------------------------------------

def itg_grid(nx: int, ny: int, nz: int, nv: int, params: Optional[ITGParameters] = None) -> Grid:
    params = params or ITGParameters()
    half = max(ITG_BOX_HALF_WIDTH, params.r_max + 1.0)
    return Grid((
        Axis("x", -half, half, nx),
        Axis("y", -half, half, ny),
        Axis("z", 0.0, params.length, nz, periodic=True),
        Axis("v", -params.v_max, params.v_max, nv),
    ))


def itg_domain(grid4d: Grid, params: Optional[ITGParameters] = None) -> EmbeddedDomain:
    params = params or ITGParameters()
    return embed(Disk((0.0, 0.0), params.r_max), grid4d.sub(("x", "y")))


@dataclass
class ITGEquilibrium:
    f_eq: np.ndarray      # (nx, ny, 1, nv)
    rho0: np.ndarray      # (nx, ny), discrete v-integral of f_eq
    te: np.ndarray        # (nx, ny)
    profiles: ProfileSet


def itg_equilibrium(grid4d: Grid, profiles: ProfileSet) -> ITGEquilibrium:
    x, y, _, v = grid4d.coordinates()
    r = np.hypot(x, y)[:, :, :1, :1]
    f_eq = profiles.f_eq(r, v)
    v_weights = grid4d.axes[3].quadrature_weights()
    rho0 = (f_eq[:, :, 0, :] @ v_weights)
    te = profiles.te(np.hypot(x, y)[:, :, 0, 0])
    return ITGEquilibrium(f_eq=f_eq, rho0=rho0, te=te, profiles=profiles)


def init_itg(grid4d: Grid, profiles: ProfileSet, params: ITGParameters) -> Field:
    """f = f_eq (1 + eps exp(-(r - r_p)^2 / dr) cos(2 pi n z / L + m theta))."""
    x, y, z, v = grid4d.coordinates()
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    f_eq = profiles.f_eq(r, v)
    bump = np.exp(-(r - params.r_p) ** 2 / params.delta_r)
    wave = np.cos(2.0 * np.pi * params.n * z / params.length + params.m * theta)
    data = f_eq * (1.0 + params.epsilon * bump * wave)
    return Field(grid4d, np.broadcast_to(data, grid4d.shape), name="f",
                 attrs={"scenario": "dk-itg", **params.to_dict()})


# ---------------------------------------------------------------------------
# Guiding-centre setup
# ---------------------------------------------------------------------------

def dshape_grid(nx: int, ny: int, box: Tuple[float, float, float, float] = DSHAPE_BOX) -> Grid:
    return Grid((Axis("x", box[0], box[1], nx), Axis("y", box[2], box[3], ny)))


def dshape_domain(nx: int, ny: int) -> EmbeddedDomain:
    return embed(DShape(), dshape_grid(nx, ny))


@dataclass
class SteadyState:
    phi0: Field
    rho_bar0: Field
    iterations: int
    residual: float


def steady_state(
    domain: EmbeddedDomain,
    tol: float = 1e-10,
    max_iter: int = 50,
    initial: Optional[np.ndarray] = None,
    interface: str = "arithmetic",
) -> SteadyState:
    """Newton solve with rho0 = 1, B = 1; rho_bar0 = exp(-phi0) - 1 on interior nodes."""
    result = solve_newton_steady(domain, 1.0, 1.0, tol=tol, max_iter=max_iter, initial=initial,
                                 interface=interface)
    phi0 = result.iterate
    rho_bar0 = np.where(domain.interior, np.expm1(-phi0), 0.0)
    attrs = {"newton_iterations": result.iteration, "residual": result.residual_norm}
    return SteadyState(
        phi0=Field(domain.grid, phi0, name="phi0", attrs=dict(attrs)),
        rho_bar0=Field(domain.grid, rho_bar0, name="rho_bar0", attrs=dict(attrs)),
        iterations=result.iteration,
        residual=result.residual_norm,
    )


def xi2_of_point(shape: DShape, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Poloidal coordinate xi2 in [0, 1) of interior points."""
    _, xi2 = shape.to_curvilinear(x, y)
    return xi2


def perturb_gc(
    rho_bar0: Field,
    phi0: Field,
    domain: EmbeddedDomain,
    epsilon: float = 0.1,
    k: int = 5,
    phi_p: float = -0.1,
) -> Field:
    """rho_bar0 (1 + eps cos(2 pi k xi2) exp(-2 |phi0 - phi_p|^2 / eps^4)) on interior nodes."""
    if not isinstance(domain.shape, DShape):
        raise GeometryError("the streamline perturbation needs the D-shaped domain")
    attrs = {"epsilon": epsilon, "k": k, "phi_p": phi_p}
    if epsilon == 0.0:
        return rho_bar0.copy(name="rho_bar", attrs=attrs)
    x, y = domain.grid.coordinates()
    x, y = np.broadcast_arrays(x, y)
    inside = domain.interior
    xi2 = np.zeros(domain.mask.shape)
    xi2[inside] = xi2_of_point(domain.shape, x[inside], y[inside])
    bump = np.exp(-2.0 * (phi0.data - phi_p) ** 2 / epsilon ** 4)
    factor = 1.0 + epsilon * np.cos(2.0 * math.pi * k * xi2) * bump
    data = np.where(inside, rho_bar0.data * factor, rho_bar0.data)
    return rho_bar0.copy(data=data, name="rho_bar", attrs=attrs)
