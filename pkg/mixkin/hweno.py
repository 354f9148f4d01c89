"""
hweno.py — 1D Hermite-WENO kernels.

Two reconstructions, both vectorised over any leading array axes:

  - ``sl_interpolate``: third-order Hermite-WENO interpolation inside one cell
    [x_i, x_{i+1}] from values and first derivatives at both ends (used by the
    semi-Lagrangian stepper).
  - ``flux_minus`` / ``flux_plus``: fifth-order Hermite-WENO numerical fluxes
    for conservative finite differences, such that
    (F_{i+1/2} - F_{i-1/2}) / dx approximates du/dx at x_i.

Flux windows are 9 points wide. For ``flux_minus`` at x_{i+1/2} the window is
u_{i-4} .. u_{i+4}; for ``flux_plus`` it is u_{i-3} .. u_{i+5}.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ArrayLike = Union[float, np.ndarray]

EPSILON = 1e-6
LINEAR_WEIGHTS = (1.0 / 9.0, 4.0 / 9.0, 4.0 / 9.0)
FLUX_WINDOW = 9
FLUX_GHOSTS = 5


# ---------------------------------------------------------------------------
# Derivatives
# ---------------------------------------------------------------------------

def derivative_4th(values: np.ndarray, dx: float, axis: int = -1, periodic: bool = True) -> np.ndarray:
    """Fourth-order centred first derivative along ``axis``.

    Periodic lines wrap around. Bounded lines use the one-sided five-point
    formulas on the two nodes at each end, which keeps degree-4 exactness.
    """
    f = np.moveaxis(np.asarray(values, dtype=np.float64), axis, -1)
    if f.shape[-1] < 5:
        raise ValueError(f"derivative_4th needs at least 5 points, got {f.shape[-1]}")
    if periodic:
        d = (np.roll(f, 2, -1) - 8.0 * np.roll(f, 1, -1)
             + 8.0 * np.roll(f, -1, -1) - np.roll(f, -2, -1))
    else:
        d = np.empty_like(f)
        d[..., 2:-2] = f[..., :-4] - 8.0 * f[..., 1:-3] + 8.0 * f[..., 3:-1] - f[..., 4:]
        d[..., 0] = -25.0 * f[..., 0] + 48.0 * f[..., 1] - 36.0 * f[..., 2] + 16.0 * f[..., 3] - 3.0 * f[..., 4]
        d[..., 1] = -3.0 * f[..., 0] - 10.0 * f[..., 1] + 18.0 * f[..., 2] - 6.0 * f[..., 3] + f[..., 4]
        d[..., -1] = 25.0 * f[..., -1] - 48.0 * f[..., -2] + 36.0 * f[..., -3] - 16.0 * f[..., -4] + 3.0 * f[..., -5]
        d[..., -2] = 3.0 * f[..., -1] + 10.0 * f[..., -2] - 18.0 * f[..., -3] + 6.0 * f[..., -4] - f[..., -5]
    return np.moveaxis(d / (12.0 * dx), -1, axis)


# ---------------------------------------------------------------------------
# Semi-Lagrangian Hermite-WENO interpolation
# ---------------------------------------------------------------------------

@dataclass
class SlKernelInput:
    """Cell data for one (or an array of) off-grid evaluations.

    ``theta`` is the local coordinate: x = x_i + theta * dx, 0 <= theta <= 1.
    ``fp_i`` / ``fp_ip1`` are first derivatives (d f / d x), not scaled by dx.
    """

    f_i: ArrayLike
    f_ip1: ArrayLike
    fp_i: ArrayLike
    fp_ip1: ArrayLike
    dx: float
    theta: ArrayLike


def sl_candidates(inp: SlKernelInput) -> Tuple[np.ndarray, np.ndarray]:
    """The two quadratic candidates h_l, h_r evaluated at theta."""
    f0 = np.asarray(inp.f_i, dtype=np.float64)
    f1 = np.asarray(inp.f_ip1, dtype=np.float64)
    t = np.asarray(inp.theta, dtype=np.float64)
    delta = f1 - f0
    # (x - x_i)(x - x_{i+1}) / dx^2 = theta (theta - 1)
    bubble = t * (t - 1.0)
    h_l = f0 + delta * t + (delta - inp.dx * np.asarray(inp.fp_i)) * bubble
    h_r = f0 + delta * t + (inp.dx * np.asarray(inp.fp_ip1) - delta) * bubble
    return h_l, h_r


def sl_weights(inp: SlKernelInput, eps: float = EPSILON) -> Tuple[np.ndarray, np.ndarray]:
    """Nonlinear weights (w_l, w_r) for the two Hermite candidates."""
    f0 = np.asarray(inp.f_i, dtype=np.float64)
    f1 = np.asarray(inp.f_ip1, dtype=np.float64)
    t = np.asarray(inp.theta, dtype=np.float64)
    delta = f1 - f0
    beta_l = delta ** 2 + (13.0 / 3.0) * (delta - inp.dx * np.asarray(inp.fp_i)) ** 2
    beta_r = delta ** 2 + (13.0 / 3.0) * (inp.dx * np.asarray(inp.fp_ip1) - delta) ** 2
    alpha_l = (1.0 - t) / (eps + beta_l) ** 2
    alpha_r = t / (eps + beta_r) ** 2
    w_l = alpha_l / (alpha_l + alpha_r)
    return w_l, 1.0 - w_l


def sl_interpolate(inp: SlKernelInput, weno: bool = True, eps: float = EPSILON) -> np.ndarray:
    """H_3(x) = w_l h_l + w_r h_r.

    With ``weno=False`` the linear weights (1 - theta, theta) are used, which
    is the plain cubic Hermite interpolant.
    """
    h_l, h_r = sl_candidates(inp)
    if weno:
        w_l, w_r = sl_weights(inp, eps)
    else:
        w_r = np.asarray(inp.theta, dtype=np.float64)
        w_l = 1.0 - w_r
    return w_l * h_l + w_r * h_r


# ---------------------------------------------------------------------------
# Conservative finite-difference Hermite-WENO fluxes
# ---------------------------------------------------------------------------

@dataclass
class FluxKernelInput:
    """A 9-point window and the side of the interface it reconstructs from.

    ``upwind_left=True`` gives f^-_{i+1/2} from u_{i-4..i+4};
    ``upwind_left=False`` gives f^+_{i+1/2} from u_{i-3..i+5}.
    """

    window: np.ndarray
    upwind_left: bool = True

    def reconstruct(self, weno: bool = True, eps: float = EPSILON) -> np.ndarray:
        if self.upwind_left:
            return flux_minus(self.window, weno, eps)
        return flux_plus(self.window, weno, eps)


def _half_point_values(w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """G'_{i-3/2} and G'_{i+3/2}: sixth-order interpolants at half points."""
    um4, um3, um2, um1, u0, up1, up2, up3, up4 = (w[..., k] for k in range(9))
    g_left = ((up1 + um4) - 8.0 * (u0 + um3) + 37.0 * (um1 + um2)) / 60.0
    g_right = ((up4 + um1) - 8.0 * (up3 + u0) + 37.0 * (up2 + up1)) / 60.0
    return g_left, g_right


def flux_candidates(window: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Candidate interface values (h_l, h_c, h_r) at x_{i+1/2}."""
    w = np.asarray(window, dtype=np.float64)
    g_left, g_right = _half_point_values(w)
    fm1, f0, f1 = w[..., 3], w[..., 4], w[..., 5]
    h_l = -2.0 * fm1 + 2.0 * f0 + g_left
    h_c = (-fm1 + 5.0 * f0 + 2.0 * f1) / 6.0
    h_r = (f0 + 5.0 * f1 - 2.0 * g_right) / 4.0
    return h_l, h_c, h_r


def smoothness_indicators(window: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    w = np.asarray(window, dtype=np.float64)
    g_left, g_right = _half_point_values(w)
    fm1, f0, f1 = w[..., 3], w[..., 4], w[..., 5]
    l1 = f0 - fm1
    l2 = -3.0 * fm1 + f0 + 2.0 * g_left
    c1 = f0 - fm1
    c2 = fm1 - 2.0 * f0 + f1
    r1 = f1 - f0
    r2 = f0 - 3.0 * f1 + 2.0 * g_right
    beta_l = l1 ** 2 + 3.0 * l1 * l2 + (75.0 / 16.0) * l2 ** 2
    beta_c = c1 ** 2 + 2.0 * c1 * c2 + (25.0 / 12.0) * c2 ** 2
    beta_r = r1 ** 2 + (39.0 / 16.0) * r2 ** 2
    return beta_l, beta_c, beta_r


def flux_weights(window: np.ndarray, eps: float = EPSILON) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    beta_l, beta_c, beta_r = smoothness_indicators(window)
    c_l, c_c, c_r = LINEAR_WEIGHTS
    alpha_l = c_l / (eps + beta_l) ** 2
    alpha_c = c_c / (eps + beta_c) ** 2
    alpha_r = c_r / (eps + beta_r) ** 2
    total = alpha_l + alpha_c + alpha_r
    return alpha_l / total, alpha_c / total, alpha_r / total


def flux_minus(window: np.ndarray, weno: bool = True, eps: float = EPSILON) -> np.ndarray:
    """f^-_{i+1/2} from the window u_{i-4} .. u_{i+4} (last axis)."""
    h_l, h_c, h_r = flux_candidates(window)
    if weno:
        w_l, w_c, w_r = flux_weights(window, eps)
    else:
        w_l, w_c, w_r = LINEAR_WEIGHTS
    return w_l * h_l + w_c * h_c + w_r * h_r


def flux_plus(window: np.ndarray, weno: bool = True, eps: float = EPSILON) -> np.ndarray:
    """f^+_{i+1/2} from the window u_{i-3} .. u_{i+5}: mirror of ``flux_minus``."""
    return flux_minus(np.asarray(window)[..., ::-1], weno, eps)


def interface_fluxes(
    padded: np.ndarray, weno: bool = True, eps: float = EPSILON
) -> Tuple[np.ndarray, np.ndarray]:
    """Both one-sided fluxes at every interface of a padded line.

    ``padded`` carries ``FLUX_GHOSTS`` extra nodes at each end of its last
    axis around n interior nodes. Returns arrays of n + 1 interface values,
    entry k being the interface between interior nodes k - 1 and k.
    """
    windows = sliding_window_view(np.asarray(padded, dtype=np.float64), FLUX_WINDOW, axis=-1)
    n = padded.shape[-1] - 2 * FLUX_GHOSTS
    f_minus = flux_minus(windows[..., 0:n + 1, :], weno, eps)
    f_plus = flux_plus(windows[..., 1:n + 2, :], weno, eps)
    return f_minus, f_plus
