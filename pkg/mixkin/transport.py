"""
transport.py — Advection steppers.

  - ``sl_advect_1d`` / ``sl_advect_plane``: backward semi-Lagrangian with
    Hermite-WENO interpolation at the characteristic feet (midpoint
    predictor-corrector, velocity frozen over the step).
  - ``fd_rhs_1d`` + ``rk4_step``: conservative finite differences with the
    fifth-order Hermite-WENO fluxes, integrated by classical RK4.
  - ``strang_step_dk``: v/2, z/2, x-y, z/2, v/2 composition for the 4D model.
  - ``check_switch`` / ``advance``: linear-phase SL stepping that latches over
    to FD once the per-step mass change exceeds h**3.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import CFLError, ConfigError
from .grid import Axis, Field, Grid, reduce_integral
from .hweno import EPSILON, FLUX_GHOSTS, SlKernelInput, derivative_4th, interface_fluxes, sl_interpolate

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DEFAULT_CFL = 0.5
SPLITTINGS = ("upwind", "llf")


class Method(str, Enum):
    SL = "sl"
    FD = "fd"


class Phase(str, Enum):
    LINEAR_SL = "linear-SL"
    NONLINEAR_FD = "nonlinear-FD"


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

@dataclass
class VelocityField:
    """E x B drift in the plane plus the parallel electric field.

    ``ux``/``uy`` have shape (nx, ny) or (nx, ny, nz); ``e_par`` (if set)
    has shape (nx, ny, nz). The parallel speed v is the v-axis itself.
    ``potential`` is the phi the drift derives from, when known; the FD
    sweeps build their face speeds from it.
    """

    ux: np.ndarray
    uy: np.ndarray
    e_par: Optional[np.ndarray] = None
    time: float = 0.0
    potential: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, plane_shape: Tuple[int, ...], with_parallel: bool = False) -> "VelocityField":
        return cls(np.zeros(plane_shape), np.zeros(plane_shape),
                   np.zeros(plane_shape) if with_parallel else None)

    def max_speed(self) -> Tuple[float, float]:
        return float(np.max(np.abs(self.ux), initial=0.0)), float(np.max(np.abs(self.uy), initial=0.0))


@dataclass
class StepperState:
    """Mutable time-stepping state for one advected field."""

    field: Field
    dt_sl: float
    dt_fd: float
    h: float
    mode: str = "mixed"
    phase: Phase = Phase.LINEAR_SL
    time: float = 0.0
    step: int = 0
    mass_history: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.mode not in ("sl", "fd", "mixed"):
            raise ConfigError(f"unknown method {self.mode!r}; expected sl, fd or mixed")
        if self.mode == "fd":
            self.phase = Phase.NONLINEAR_FD

    @property
    def method(self) -> Method:
        if self.mode == "sl" or (self.mode == "mixed" and self.phase is Phase.LINEAR_SL):
            return Method.SL
        return Method.FD

    @property
    def dt(self) -> float:
        return self.dt_sl if self.method is Method.SL else self.dt_fd

    def record_mass(self, mass: float) -> None:
        self.mass_history = (self.mass_history + [float(mass)])[-2:]

    def to_attrs(self) -> Dict[str, object]:
        return {"phase": self.phase.value, "step": self.step, "mass_history": list(self.mass_history),
                "dt_fd": self.dt_fd}

    def restore(self, attrs: Dict[str, object]) -> None:
        self.phase = Phase(attrs.get("phase", self.phase.value))
        self.dt_fd = float(attrs.get("dt_fd", self.dt_fd))  # type: ignore[arg-type]
        self.step = int(attrs.get("step", self.step))  # type: ignore[arg-type]
        self.mass_history = [float(m) for m in attrs.get("mass_history", [])]  # type: ignore[union-attr]
        self.time = self.field.time


@dataclass
class TransportSetup:
    """Everything the sweeps need besides the field and the velocity.

    ``interior`` masks the (x, y) plane; nodes outside it are reset to
    ``equilibrium`` before and after every sweep.
    """

    grid: Grid
    interior: Optional[np.ndarray] = None
    equilibrium: Optional[np.ndarray] = None
    weno: bool = True
    eps: float = EPSILON
    splitting: str = "upwind"
    cfl: float = DEFAULT_CFL
    threads: int = 1
    v_fill: float = 0.0

    def __post_init__(self) -> None:
        if self.splitting not in SPLITTINGS:
            raise ConfigError(f"unknown flux splitting {self.splitting!r}; expected one of {SPLITTINGS}")

    def _plane_mask(self, ndim: int) -> np.ndarray:
        assert self.interior is not None
        return self.interior.reshape(self.interior.shape + (1,) * (ndim - 2))

    def apply_exterior(self, data: np.ndarray) -> np.ndarray:
        if self.interior is None:
            return data
        fill = 0.0 if self.equilibrium is None else self.equilibrium
        return np.where(self._plane_mask(data.ndim), data, fill)

    def mask_rhs(self, rhs: np.ndarray) -> np.ndarray:
        if self.interior is None:
            return rhs
        return np.where(self._plane_mask(rhs.ndim), rhs, 0.0)

    def mass(self, data: np.ndarray) -> float:
        return reduce_integral(Field(self.grid, data), mask=self.interior)


# ---------------------------------------------------------------------------
# Semi-Lagrangian
# ---------------------------------------------------------------------------

def _lerp_line(a: np.ndarray, s: np.ndarray, periodic: bool) -> np.ndarray:
    n = a.shape[-1]
    if periodic:
        k = np.floor(s)
        frac = s - k
        k0 = np.mod(k.astype(np.int64), n)
        k1 = np.mod(k0 + 1, n)
    else:
        s = np.clip(s, 0.0, n - 1)
        k0 = np.minimum(np.floor(s).astype(np.int64), n - 2)
        frac = s - k0
        k1 = k0 + 1
    a0 = np.take_along_axis(a, k0, axis=-1)
    a1 = np.take_along_axis(a, k1, axis=-1)
    return a0 + frac * (a1 - a0)


def characteristic_feet(speed: np.ndarray, dt: float, dx: float, periodic: bool, n: int) -> np.ndarray:
    """Foot positions, in node-index units, of the characteristics ending at each node.

    ``speed`` has the line along its last axis; a length-1 last axis means a
    speed that is constant along the line.
    """
    idx = np.arange(n, dtype=np.float64)
    if speed.shape[-1] == 1:
        return idx - dt * speed / dx
    star = idx - dt * speed / dx
    a_mid = _lerp_line(speed, 0.5 * (idx + star), periodic)
    return idx - dt * a_mid / dx


def sl_advect_1d(
    values: np.ndarray,
    speed: ArrayLike,
    dt: float,
    dx: float,
    axis: int = -1,
    periodic: bool = True,
    fill: ArrayLike = 0.0,
    weno: bool = True,
    eps: float = EPSILON,
) -> np.ndarray:
    """One backward semi-Lagrangian step of f_t + a f_x = 0 along ``axis``.

    ``speed`` broadcasts against ``values``; if it has extent 1 along
    ``axis`` it is taken constant per line (exact integer shifts then stay
    exact). On bounded lines feet outside the line take ``fill``.
    """
    f = np.moveaxis(np.asarray(values, dtype=np.float64), axis, -1)
    a = np.asarray(speed, dtype=np.float64)
    a = np.moveaxis(a.reshape((1,) * (f.ndim - a.ndim) + a.shape), axis, -1)
    n = f.shape[-1]
    if a.shape[-1] != 1:
        a = np.broadcast_to(a, f.shape)
    foot = np.broadcast_to(characteristic_feet(a, dt, dx, periodic, n), f.shape)
    fp = derivative_4th(f, dx, axis=-1, periodic=periodic)

    outside = None
    if periodic:
        k = np.floor(foot)
        theta = foot - k
        k0 = np.mod(k.astype(np.int64), n)
        k1 = np.mod(k0 + 1, n)
    else:
        span = n - 1
        if np.any(foot < -span) or np.any(foot > 2 * span):
            raise ConfigError(
                f"characteristic feet leave the bounded axis by more than its length; reduce dt (dt={dt:g})"
            )
        outside = (foot < 0.0) | (foot > span)
        fc = np.clip(foot, 0.0, span)
        k0 = np.minimum(np.floor(fc).astype(np.int64), n - 2)
        theta = fc - k0
        k1 = k0 + 1

    def take(arr: np.ndarray, k: np.ndarray) -> np.ndarray:
        return np.take_along_axis(arr, k, axis=-1)

    out = sl_interpolate(
        SlKernelInput(take(f, k0), take(f, k1), take(fp, k0), take(fp, k1), dx, theta), weno, eps
    )
    if outside is not None:
        fill_arr = fill if np.ndim(fill) == 0 else np.moveaxis(np.broadcast_to(fill, np.shape(values)), axis, -1)
        out = np.where(outside, fill_arr, out)
    return np.moveaxis(out, -1, axis)


def _cell_index(foot: np.ndarray, axis_: Axis) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = axis_.n
    if axis_.periodic:
        k = np.floor(foot)
        k0 = np.mod(k.astype(np.int64), n)
        return k0, np.mod(k0 + 1, n), foot - k
    # feet beyond a bounded box edge are clamped onto it
    fc = np.clip(foot, 0.0, n - 1)
    k0 = np.minimum(np.floor(fc).astype(np.int64), n - 2)
    return k0, k0 + 1, fc - k0


def sl_advect_plane(
    values: np.ndarray,
    ux: np.ndarray,
    uy: np.ndarray,
    dt: float,
    ax: Axis,
    ay: Axis,
    weno: bool = True,
    eps: float = EPSILON,
) -> np.ndarray:
    """Semi-Lagrangian step of f_t + U . grad f = 0 on the (x, y) plane.

    ``values`` has shape (nx, ny, ...); the trailing axes ride along with
    the same feet. Interpolation is the tensor product of the 1D Hermite
    kernel, using f, f_x, f_y and f_xy at the cell corners.
    """
    f = np.asarray(values, dtype=np.float64)
    nx, ny = f.shape[:2]
    dx, dy = ax.spacing, ay.spacing
    mode = "grid-wrap" if (ax.periodic and ay.periodic) else "nearest"
    ii, jj = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64), indexing="ij")
    star_i = ii - dt * ux / dx
    star_j = jj - dt * uy / dy
    mid = [0.5 * (ii + star_i), 0.5 * (jj + star_j)]
    ux_mid = ndimage.map_coordinates(ux, mid, order=1, mode=mode)
    uy_mid = ndimage.map_coordinates(uy, mid, order=1, mode=mode)
    i0, i1, tx = _cell_index(ii - dt * ux_mid / dx, ax)
    j0, j1, ty = _cell_index(jj - dt * uy_mid / dy, ay)
    extra = (1,) * (f.ndim - 2)
    tx = tx.reshape(tx.shape + extra)
    ty = ty.reshape(ty.shape + extra)

    fx = derivative_4th(f, dx, axis=0, periodic=ax.periodic)
    fy = derivative_4th(f, dy, axis=1, periodic=ay.periodic)
    fxy = derivative_4th(fx, dy, axis=1, periodic=ay.periodic)

    def along_x(val: np.ndarray, der: np.ndarray, j: np.ndarray) -> np.ndarray:
        return sl_interpolate(SlKernelInput(val[i0, j], val[i1, j], der[i0, j], der[i1, j], dx, tx), weno, eps)

    v0, v1 = along_x(f, fx, j0), along_x(f, fx, j1)
    d0, d1 = along_x(fy, fxy, j0), along_x(fy, fxy, j1)
    return sl_interpolate(SlKernelInput(v0, v1, d0, d1, dy, ty), weno, eps)


# ---------------------------------------------------------------------------
# Conservative finite differences
# ---------------------------------------------------------------------------

def _pad_line(values: np.ndarray, width: int, periodic: bool, fill: Optional[float]) -> np.ndarray:
    pad = [(0, 0)] * (values.ndim - 1) + [(width, width)]
    if periodic:
        return np.pad(values, pad, mode="wrap")
    if fill is None:
        return np.pad(values, pad, mode="edge")
    return np.pad(values, pad, mode="constant", constant_values=fill)


def fd_rhs_1d(
    values: np.ndarray,
    speed: ArrayLike,
    dx: float,
    axis: int = -1,
    periodic: bool = True,
    fill: Optional[float] = None,
    weno: bool = True,
    eps: float = EPSILON,
    splitting: str = "upwind",
    face_speed: Optional[np.ndarray] = None,
    open_faces: Optional[np.ndarray] = None,
    widths: Optional[np.ndarray] = None,
) -> np.ndarray:
    """-(F_{i+1/2} - F_{i-1/2}) / dx along ``axis``, an approximation of -(a f)_x.

    ``speed`` holds node speeds (broadcast against ``values``). Bounded
    lines are padded with ``fill`` (``None`` repeats the end values).

    ``face_speed`` and ``open_faces`` have n + 1 entries along ``axis``, face
    k sitting between nodes k - 1 and k. Face speeds replace the averaged
    node speeds; closed faces carry no flux. ``widths`` (length n) replaces
    ``dx`` as the control-volume width of each node.
    """
    f = np.moveaxis(np.asarray(values, dtype=np.float64), axis, -1)
    a = np.moveaxis(np.broadcast_to(np.asarray(speed, dtype=np.float64), np.shape(values)), axis, -1)
    n = f.shape[-1]
    g = FLUX_GHOSTS
    f_pad = _pad_line(f, g, periodic, fill)
    a_pad = _pad_line(a, g, periodic, None)
    if face_speed is None:
        a_half = 0.5 * (a_pad[..., g - 1:g + n] + a_pad[..., g:g + n + 1])
    else:
        a_half = _faces_last(face_speed, axis, f.shape)
    if splitting == "upwind":
        f_minus, f_plus = interface_fluxes(f_pad, weno, eps)
        flux = np.where(a_half >= 0.0, a_half * f_minus, a_half * f_plus)
    elif splitting == "llf":
        alpha = np.max(np.abs(a), axis=-1, keepdims=True)
        node_flux = a_pad * f_pad
        flux, _ = interface_fluxes(0.5 * (node_flux + alpha * f_pad), weno, eps)
        _, back = interface_fluxes(0.5 * (node_flux - alpha * f_pad), weno, eps)
        flux = flux + back
    else:
        raise ConfigError(f"unknown flux splitting {splitting!r}")
    if open_faces is not None:
        flux = np.where(_faces_last(open_faces, axis, f.shape), flux, 0.0)
    width = dx if widths is None else np.asarray(widths, dtype=np.float64)
    rhs = -(flux[..., 1:] - flux[..., :-1]) / width
    return np.moveaxis(rhs, -1, axis)


def _faces_last(faces: np.ndarray, axis: int, line_shape: Tuple[int, ...]) -> np.ndarray:
    """Move the face axis of ``faces`` last and broadcast it over the moved line shape."""
    faces = np.asarray(faces)
    ndim = len(line_shape)
    faces = np.moveaxis(faces.reshape(faces.shape + (1,) * (ndim - faces.ndim)), axis, -1)
    return np.broadcast_to(faces, line_shape[:-1] + (line_shape[-1] + 1,))


def drift_faces(
    potential: np.ndarray, interior: np.ndarray, ax: Axis, ay: Axis
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Face speeds of U = (-phi_y, phi_x) from phi averaged onto cell corners.

    Corners touching a node outside ``interior`` take phi = 0, the boundary
    value, so every face on the interior/exterior staircase has zero speed
    and the discrete divergence vanishes around every node.
    Returns (ux on x-faces, x-faces open, uy on y-faces, y-faces open) with
    shapes (nx + 1, ny, ...) and (nx, ny + 1, ...).
    """
    phi = np.asarray(potential, dtype=np.float64)
    rest = phi.ndim - 2

    def pad(arr: np.ndarray, mode_fill: Optional[bool]) -> np.ndarray:
        for k, axis_ in enumerate((ax, ay)):
            pad_width = [(0, 0)] * arr.ndim
            pad_width[k] = (1, 1)
            if axis_.periodic:
                arr = np.pad(arr, pad_width, mode="wrap")
            elif mode_fill is None:
                arr = np.pad(arr, pad_width, mode="edge")
            else:
                arr = np.pad(arr, pad_width, mode="constant", constant_values=mode_fill)
        return arr

    p = pad(phi, None)
    inside = pad(np.asarray(interior, dtype=bool), False)
    corner = 0.25 * (p[:-1, :-1] + p[1:, :-1] + p[:-1, 1:] + p[1:, 1:])
    corner_open = inside[:-1, :-1] & inside[1:, :-1] & inside[:-1, 1:] & inside[1:, 1:]
    corner = np.where(corner_open.reshape(corner_open.shape + (1,) * rest), corner, 0.0)
    ux_face = -(corner[:, 1:] - corner[:, :-1]) / ay.spacing
    uy_face = (corner[1:, :] - corner[:-1, :]) / ax.spacing
    open_x = inside[:-1, 1:-1] & inside[1:, 1:-1]
    open_y = inside[1:-1, :-1] & inside[1:-1, 1:]
    return ux_face, open_x, uy_face, open_y


def cfl_limit(max_speeds: Sequence[float], spacings: Sequence[float], cfl: float = DEFAULT_CFL) -> float:
    """Largest stable explicit step; ``inf`` when every speed is zero."""
    limits = [h / s for s, h in zip(max_speeds, spacings) if s > 0.0]
    return cfl * min(limits) if limits else float("inf")


def rk4_step(
    y: np.ndarray,
    rhs: Callable[[np.ndarray], np.ndarray],
    dt: float,
    max_dt: Optional[float] = None,
) -> np.ndarray:
    if max_dt is not None and dt > max_dt * (1.0 + 1e-12):
        raise CFLError(f"time step {dt:g} exceeds the CFL limit {max_dt:g}; reduce dt")
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------------------
# Sub-flows
# ---------------------------------------------------------------------------

def _map_slices(fn: Callable[[int], np.ndarray], count: int, threads: int) -> List[np.ndarray]:
    if threads <= 1 or count <= 1:
        return [fn(k) for k in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def advect_plane(
    data: np.ndarray, velocity: VelocityField, dt: float, setup: TransportSetup, method: Method
) -> np.ndarray:
    """x-y advection by the drift U. Handles 2D (x, y) and 4D (x, y, z, v) data."""
    ax, ay = setup.grid.axes[:2]
    data = setup.apply_exterior(data)
    if method is Method.SL:
        if velocity.ux.ndim == 2:
            out = sl_advect_plane(data, velocity.ux, velocity.uy, dt, ax, ay, setup.weno, setup.eps)
        else:
            slices = _map_slices(
                lambda k: sl_advect_plane(data[:, :, k], velocity.ux[:, :, k], velocity.uy[:, :, k],
                                          dt, ax, ay, setup.weno, setup.eps),
                data.shape[2], setup.threads,
            )
            out = np.stack(slices, axis=2)
        return setup.apply_exterior(out)

    extra = (1,) * (data.ndim - velocity.ux.ndim)
    ux = velocity.ux.reshape(velocity.ux.shape + extra)
    uy = velocity.uy.reshape(velocity.uy.shape + extra)
    faces: Dict[str, Optional[np.ndarray]] = {"fx": None, "ox": None, "fy": None, "oy": None}
    max_speed = velocity.max_speed()
    if setup.interior is not None:
        if velocity.potential is not None:
            fx, ox, fy, oy = drift_faces(velocity.potential, setup.interior, ax, ay)
            faces.update(fx=fx, ox=ox, fy=fy, oy=oy)
            max_speed = (float(np.max(np.abs(fx), initial=0.0)), float(np.max(np.abs(fy), initial=0.0)))
        else:
            _, ox, _, oy = drift_faces(np.zeros(setup.interior.shape), setup.interior, ax, ay)
            faces.update(ox=ox, oy=oy)
    limit = cfl_limit(max_speed, (ax.spacing, ay.spacing), setup.cfl)

    def rhs(y: np.ndarray) -> np.ndarray:
        y = setup.apply_exterior(y)
        r = fd_rhs_1d(y, ux, ax.spacing, axis=0, periodic=ax.periodic,
                      weno=setup.weno, eps=setup.eps, splitting=setup.splitting,
                      face_speed=faces["fx"], open_faces=faces["ox"])
        r += fd_rhs_1d(y, uy, ay.spacing, axis=1, periodic=ay.periodic,
                       weno=setup.weno, eps=setup.eps, splitting=setup.splitting,
                       face_speed=faces["fy"], open_faces=faces["oy"])
        return setup.mask_rhs(r)

    return setup.apply_exterior(rk4_step(data, rhs, dt, limit))


def _advect_axis(
    data: np.ndarray,
    speed: np.ndarray,
    dt: float,
    axis: int,
    setup: TransportSetup,
    method: Method,
    fill: Optional[float],
) -> np.ndarray:
    ax = setup.grid.axes[axis]
    if method is Method.SL:
        out = sl_advect_1d(data, speed, dt, ax.spacing, axis=axis, periodic=ax.periodic,
                           fill=0.0 if fill is None else fill, weno=setup.weno, eps=setup.eps)
        return setup.apply_exterior(out)
    limit = cfl_limit([float(np.max(np.abs(speed), initial=0.0))], [ax.spacing], setup.cfl)
    open_faces, widths = None, None
    if not ax.periodic:
        # closed ends; node widths follow the trapezoid weights of the mass
        open_faces = np.ones(ax.n + 1, dtype=bool)
        open_faces[[0, -1]] = False
        open_faces = open_faces.reshape((1,) * axis + (ax.n + 1,) + (1,) * (data.ndim - axis - 1))
        widths = ax.quadrature_weights()

    def rhs(y: np.ndarray) -> np.ndarray:
        return setup.mask_rhs(fd_rhs_1d(y, speed, ax.spacing, axis=axis, periodic=ax.periodic, fill=fill,
                                        weno=setup.weno, eps=setup.eps, splitting=setup.splitting,
                                        open_faces=open_faces, widths=widths))

    return setup.apply_exterior(rk4_step(data, rhs, dt, limit))


def strang_step_dk(
    f: Field, velocity: VelocityField, dt: float, setup: TransportSetup, method: Method
) -> Field:
    """One Strang-split step of the 4D drift-kinetic advection, axes (x, y, z, v)."""
    if f.grid.ndim != 4:
        raise ConfigError(f"strang_step_dk needs a 4D field, got {f.grid.ndim}D")
    v_nodes = f.grid.axes[3].nodes().reshape(1, 1, 1, -1)
    e_par = velocity.e_par if velocity.e_par is not None else np.zeros(f.grid.shape[:3])
    e_par = e_par[..., None]
    data = setup.apply_exterior(f.data)
    data = _advect_axis(data, e_par, 0.5 * dt, 3, setup, method, setup.v_fill)
    data = _advect_axis(data, v_nodes, 0.5 * dt, 2, setup, method, None)
    data = advect_plane(data, velocity, dt, setup, method)
    data = _advect_axis(data, v_nodes, 0.5 * dt, 2, setup, method, None)
    data = _advect_axis(data, e_par, 0.5 * dt, 3, setup, method, setup.v_fill)
    return f.copy(data=data, time=f.time + dt)


def gc_step(
    rho: Field,
    velocity_of: Callable[[np.ndarray], VelocityField],
    dt: float,
    setup: TransportSetup,
    method: Method,
) -> Field:
    """Guiding-centre step: solve for the drift once, then advect the density."""
    velocity = velocity_of(rho.data)
    data = advect_plane(rho.data, velocity, dt, setup, method)
    return rho.copy(data=data, time=rho.time + dt)


# ---------------------------------------------------------------------------
# SL -> FD switch
# ---------------------------------------------------------------------------

def check_switch(state: StepperState) -> bool:
    """True iff the last mass change exceeds h**3; latches the FD phase."""
    if len(state.mass_history) < 2:
        return False
    prev, cur = state.mass_history[-2:]
    crossed = abs(cur - prev) > state.h ** 3
    if crossed and state.phase is Phase.LINEAR_SL:
        state.phase = Phase.NONLINEAR_FD
        logger.info(
            f"Switching to conservative FD at t={state.time:g} (step {state.step}): "
            f"|dm|={abs(cur - prev):.3e} > h^3={state.h ** 3:.3e}"
        )
    return crossed


def advance(
    state: StepperState,
    step_fn: Callable[[Field, float, Method], Field],
    mass_fn: Callable[[np.ndarray], float],
) -> bool:
    """Take one step with the method the state's phase selects.

    Returns True when this step latched the switch to FD.
    """
    if not state.mass_history:
        state.record_mass(mass_fn(state.field.data))
    before = state.phase
    method, dt = state.method, state.dt
    state.field = step_fn(state.field, dt, method)
    state.time = state.field.time
    state.step += 1
    state.record_mass(mass_fn(state.field.data))
    if state.mode == "mixed" and before is Phase.LINEAR_SL:
        check_switch(state)
    return before is not state.phase
