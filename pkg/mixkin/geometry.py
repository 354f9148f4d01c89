"""
geometry.py — Embedded 2D domains on a Cartesian bounding grid.

A domain is described by a shape (inside predicate, closest-point projection
onto the boundary, inward normal). ``classify`` marks every node of a 2D grid
as interior, ghost (exterior with an interior 4-neighbour) or far exterior;
``build_ghost_stencils`` attaches to each ghost the data needed to extrapolate
a value along the inward normal::

    phi_g = w_p * phi(x_p) + w_h * phi(x_h) + w_2h * phi(x_2h)

where x_p is the projection of x_g on the boundary, x_h = x_p + h n,
x_2h = x_p + 2h n with h = min(dx, dy), and phi(x_h), phi(x_2h) are
interpolated from interior nodes with a 9-, 4- or 1-point stencil.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from typing import List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
from scipy import ndimage, sparse

from .errors import ConfigError, GeometryError
from .grid import Grid

logger = logging.getLogger(__name__)

Vec2 = np.ndarray

PROJECTION_MAX_ITER = 50


class NodeClass(IntEnum):
    EXTERIOR = 0
    INTERIOR = 1
    GHOST = 2


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------

@runtime_checkable
class DomainShape(Protocol):
    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray: ...
    def project(self, point: Sequence[float]) -> Tuple[Vec2, Vec2]: ...
    def bounds(self) -> Tuple[float, float, float, float]: ...


@dataclass(frozen=True)
class Disk:
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def signed_distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.hypot(np.asarray(x) - self.center[0], np.asarray(y) - self.center[1]) - self.radius

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.signed_distance(x, y) <= 0.0

    def project(self, point: Sequence[float]) -> Tuple[Vec2, Vec2]:
        c = np.asarray(self.center, dtype=np.float64)
        offset = np.asarray(point, dtype=np.float64) - c
        dist = float(np.hypot(*offset))
        if dist == 0.0:
            raise GeometryError(f"the centre {tuple(c)} has no unique boundary projection")
        outward = offset / dist
        return c + self.radius * outward, -outward

    def bounds(self) -> Tuple[float, float, float, float]:
        cx, cy = self.center
        r = self.radius
        return cx - r, cx + r, cy - r, cy + r


class DShape:
    """Tokamak-like D cross-section given by the curvilinear mapping

        x = 1.7 + R(xi1) cos(2 pi xi2 + asin(0.416) sin(2 pi xi2))
        y = 1.66 R(xi1) sin(2 pi xi2),     R(xi1) = 0.074 (2 xi1 - 1) + 0.536

    with -231/74 <= xi1 <= 1 (R from 0 to 0.61) and 0 <= xi2 < 1. The
    boundary is the curve xi1 = 1, traversed counter-clockwise.
    """

    CENTER_X = 1.7
    ELONGATION = 1.66
    TRIANGULARITY = math.asin(0.416)
    SLOPE = 0.074
    OFFSET = 0.536
    XI1_MIN = -231.0 / 74.0
    XI1_MAX = 1.0
    POLYLINE_POINTS = 2 ** 14

    @staticmethod
    def radius(xi1: np.ndarray) -> np.ndarray:
        return DShape.SLOPE * (2.0 * np.asarray(xi1) - 1.0) + DShape.OFFSET

    @property
    def boundary_radius(self) -> float:
        return float(self.radius(self.XI1_MAX))

    def _angle(self, xi2: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = 2.0 * np.pi * np.asarray(xi2, dtype=np.float64)
        theta = s + self.TRIANGULARITY * np.sin(s)
        dtheta = 2.0 * np.pi * (1.0 + self.TRIANGULARITY * np.cos(s))
        d2theta = -(2.0 * np.pi) ** 2 * self.TRIANGULARITY * np.sin(s)
        return theta, dtheta, d2theta

    def map(self, xi1: np.ndarray, xi2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        r = self.radius(xi1)
        theta, _, _ = self._angle(xi2)
        s = 2.0 * np.pi * np.asarray(xi2, dtype=np.float64)
        return self.CENTER_X + r * np.cos(theta), self.ELONGATION * r * np.sin(s)

    def jacobian(self, xi1: np.ndarray, xi2: np.ndarray) -> Tuple[np.ndarray, ...]:
        r = self.radius(xi1)
        theta, dtheta, _ = self._angle(xi2)
        s = 2.0 * np.pi * np.asarray(xi2, dtype=np.float64)
        dr = 2.0 * self.SLOPE
        x1 = dr * np.cos(theta)
        x2 = -r * np.sin(theta) * dtheta
        y1 = self.ELONGATION * dr * np.sin(s)
        y2 = self.ELONGATION * r * 2.0 * np.pi * np.cos(s)
        return x1, x2, y1, y2

    def boundary(self, t: np.ndarray) -> np.ndarray:
        x, y = self.map(self.XI1_MAX, t)
        return np.stack([x, y], axis=-1)

    def _boundary_derivatives(self, t: float) -> Tuple[Vec2, Vec2, Vec2]:
        r = self.boundary_radius
        theta, dtheta, d2theta = self._angle(t)
        s = 2.0 * np.pi * t
        b = np.array([self.CENTER_X + r * np.cos(theta), self.ELONGATION * r * np.sin(s)])
        db = np.array([-r * np.sin(theta) * dtheta, self.ELONGATION * r * 2.0 * np.pi * np.cos(s)])
        d2b = np.array([
            -r * (np.cos(theta) * dtheta ** 2 + np.sin(theta) * d2theta),
            -self.ELONGATION * r * (2.0 * np.pi) ** 2 * np.sin(s),
        ])
        return b, db, d2b

    @cached_property
    def polyline(self) -> np.ndarray:
        """Dense boundary sample at xi2 = k / 2**14."""
        t = np.arange(self.POLYLINE_POINTS) / self.POLYLINE_POINTS
        return self.boundary(t)

    @cached_property
    def _ray_table(self) -> Tuple[np.ndarray, np.ndarray]:
        # polar angle (about the centre) of the ray carrying each xi2, unwrapped
        t = np.arange(self.POLYLINE_POINTS + 1) / self.POLYLINE_POINTS
        theta, _, _ = self._angle(t)
        psi = np.unwrap(np.arctan2(self.ELONGATION * np.sin(2.0 * np.pi * t), np.cos(theta)))
        return psi, t

    def _seed_xi2(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        psi_table, t_table = self._ray_table
        psi = np.mod(np.arctan2(y, x - self.CENTER_X), 2.0 * np.pi)
        return np.interp(psi, psi_table, t_table)

    def to_curvilinear(
        self, x: np.ndarray, y: np.ndarray, tol: float = 1e-10, max_iter: int = 50
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Invert the mapping by 2D Newton from a polyline seed.

        Returns (xi1, xi2) with xi2 in [0, 1). Points outside the D get
        xi1 > 1. The centre maps to (xi1_min, 0).
        """
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        xi2 = self._seed_xi2(x, y)
        theta, _, _ = self._angle(xi2)
        direction = np.hypot(np.cos(theta), self.ELONGATION * np.sin(2.0 * np.pi * xi2))
        r = np.hypot(x - self.CENTER_X, y) / direction
        xi1 = ((r - self.OFFSET) / self.SLOPE + 1.0) / 2.0
        active = r > 1e-13
        xi1 = np.where(active, xi1, self.XI1_MIN)
        xi2 = np.where(active, xi2, 0.0)
        scale = max(1.0, float(np.max(np.abs(x), initial=0.0)))
        residual = np.full(x.shape, np.inf)
        for _ in range(max_iter):
            mx, my = self.map(xi1, xi2)
            fx, fy = mx - x, my - y
            residual = np.where(active, np.hypot(fx, fy), 0.0)
            if float(np.max(residual, initial=0.0)) <= tol * scale:
                xi2 = np.mod(xi2, 1.0)
                # mod of a tiny negative rounds up to 1.0
                return xi1, np.where(xi2 >= 1.0, 0.0, xi2)
            a, b, c, d = self.jacobian(xi1, xi2)
            det = a * d - b * c
            det = np.where(active & (det != 0.0), det, 1.0)
            d1 = (d * fx - b * fy) / det
            d2 = (-c * fx + a * fy) / det
            xi1 = np.where(active, xi1 - d1, xi1)
            xi2 = np.where(active, xi2 - d2, xi2)
        worst = np.unravel_index(int(np.argmax(residual)), residual.shape)
        raise GeometryError(
            f"curvilinear inversion did not converge in {max_iter} iterations at "
            f"(x, y) = ({float(x[worst]):.6g}, {float(y[worst]):.6g}) "
            f"(residual {float(residual[worst]):.3e})"
        )

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Winding test against the boundary polyline.

        The D is star-shaped about its centre and the polyline winds once
        counter-clockwise, so the only edge a ray from the centre crosses is
        found by bisection on the polar angle. A point winds once (is inside)
        iff it lies on or left of that edge.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        psi_table, _ = self._ray_table
        poly = self.polyline
        n = self.POLYLINE_POINTS
        psi = np.mod(np.arctan2(y, x - self.CENTER_X), 2.0 * np.pi)
        k = np.clip(np.searchsorted(psi_table, psi, side="right") - 1, 0, n - 1)
        a, b = poly[k], poly[(k + 1) % n]
        cross = (b[..., 0] - a[..., 0]) * (y - a[..., 1]) - (b[..., 1] - a[..., 1]) * (x - a[..., 0])
        return cross >= 0.0

    def project(self, point: Sequence[float]) -> Tuple[Vec2, Vec2]:
        p = np.asarray(point, dtype=np.float64)
        poly = self.polyline
        # argmin keeps the smallest xi2 among equidistant vertices
        k = int(np.argmin(np.sum((poly - p) ** 2, axis=1)))
        t = k / self.POLYLINE_POINTS
        for _ in range(PROJECTION_MAX_ITER):
            b, db, d2b = self._boundary_derivatives(t)
            g = float(np.dot(b - p, db))
            dg = float(np.dot(db, db) + np.dot(b - p, d2b))
            if dg <= 0.0:
                dg = float(np.dot(db, db))
            step = g / dg
            t -= step
            if abs(step) < 1e-15:
                break
        else:
            raise GeometryError(f"boundary projection of {tuple(p)} did not converge (last step {step:.3e})")
        t = t % 1.0
        b, db, _ = self._boundary_derivatives(t)
        inward = np.array([-db[1], db[0]]) / np.hypot(*db)
        return b, inward

    def bounds(self) -> Tuple[float, float, float, float]:
        poly = self.polyline
        return (float(poly[:, 0].min()), float(poly[:, 0].max()),
                float(poly[:, 1].min()), float(poly[:, 1].max()))


class Polygon:
    """Simple closed polygon; vertices are reordered counter-clockwise."""

    def __init__(self, vertices: Sequence[Sequence[float]]) -> None:
        v = np.asarray(vertices, dtype=np.float64)
        if len(v) > 1 and np.allclose(v[0], v[-1]):
            v = v[:-1]
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ConfigError("a polygon needs at least three 2D vertices")
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if area == 0.0:
            raise ConfigError("degenerate polygon (zero area)")
        self.vertices = v if area > 0 else v[::-1].copy()

    def _edges(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        best = np.full(np.broadcast(x, y).shape, np.inf)
        for a, b in zip(*self._edges()):
            e = b - a
            s = np.clip(((x - a[0]) * e[0] + (y - a[1]) * e[1]) / np.dot(e, e), 0.0, 1.0)
            best = np.minimum(best, np.hypot(x - a[0] - s * e[0], y - a[1] - s * e[1]))
        return best

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for a, b in zip(*self._edges()):
            crosses = (a[1] > y) != (b[1] > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cross = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= crosses & (x < x_cross)
        scale = float(np.ptp(self.vertices))
        return inside | (self.distance(x, y) <= 1e-12 * scale)

    def project(self, point: Sequence[float]) -> Tuple[Vec2, Vec2]:
        p = np.asarray(point, dtype=np.float64)
        best: Optional[Tuple[float, Vec2, Vec2]] = None
        for a, b in zip(*self._edges()):
            e = b - a
            s = float(np.clip(np.dot(p - a, e) / np.dot(e, e), 0.0, 1.0))
            q = a + s * e
            dist = float(np.hypot(*(p - q)))
            if best is None or dist < best[0]:
                if 0.0 < s < 1.0 or dist == 0.0:
                    normal = np.array([-e[1], e[0]]) / np.hypot(*e)
                else:
                    normal = (q - p) / dist
                best = (dist, q, normal)
        assert best is not None
        return best[1], best[2]

    def bounds(self) -> Tuple[float, float, float, float]:
        v = self.vertices
        return float(v[:, 0].min()), float(v[:, 0].max()), float(v[:, 1].min()), float(v[:, 1].max())


def project_to_boundary(shape: DomainShape, x_g: Sequence[float]) -> Tuple[Vec2, Vec2]:
    """Closest boundary point x_p of ``x_g`` and the inward unit normal there."""
    return shape.project(x_g)


# ---------------------------------------------------------------------------
# Ghost points and stencils
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stencil:
    """Interpolation stencil over interior nodes: value = sum(weights * phi[nodes])."""

    nodes: np.ndarray
    weights: np.ndarray
    degree: int

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values[self.nodes[:, 0], self.nodes[:, 1]], axes=1)


@dataclass(frozen=True)
class GhostPoint:
    index: Tuple[int, int]
    position: Vec2
    boundary_point: Vec2
    normal: Vec2
    distance: float
    arm_points: Tuple[Vec2, Vec2]
    extrapolation_weights: Tuple[float, float, float]
    arm_stencils: Tuple[Stencil, Stencil]

    @property
    def degree(self) -> int:
        return min(s.degree for s in self.arm_stencils)

    def composed(self) -> Tuple[np.ndarray, np.ndarray, float]:
        """(interior nodes, weights, boundary weight) of the full extrapolation."""
        w_p, w_h, w_2h = self.extrapolation_weights
        nodes = np.concatenate([self.arm_stencils[0].nodes, self.arm_stencils[1].nodes])
        weights = np.concatenate([w_h * self.arm_stencils[0].weights, w_2h * self.arm_stencils[1].weights])
        return nodes, weights, w_p

    def extrapolate(self, values: np.ndarray, boundary_value: float = 0.0) -> float:
        w_p, w_h, w_2h = self.extrapolation_weights
        return float(w_p * boundary_value
                     + w_h * self.arm_stencils[0].apply(values)
                     + w_2h * self.arm_stencils[1].apply(values))


def extrapolation_weights(d: float, h: float) -> Tuple[float, float, float]:
    """Quadratic Lagrange weights at the ghost from nodes at distances d, d+h, d+2h."""
    w_p = (d + h) * (d + 2.0 * h) / (2.0 * h * h)
    w_h = -d * (d + 2.0 * h) / (h * h)
    w_2h = d * (d + h) / (2.0 * h * h)
    return w_p, w_h, w_2h


def _lagrange(nodes: np.ndarray, x: float) -> np.ndarray:
    w = np.ones(len(nodes))
    for m, xm in enumerate(nodes):
        for k, xk in enumerate(nodes):
            if k != m:
                w[m] *= (x - xk) / (xm - xk)
    return w


@dataclass
class EmbeddedDomain:
    shape: DomainShape
    grid: Grid
    mask: np.ndarray
    ghosts: List[GhostPoint] = field(default_factory=list)

    @property
    def interior(self) -> np.ndarray:
        return self.mask == NodeClass.INTERIOR

    @property
    def ghost_mask(self) -> np.ndarray:
        return self.mask == NodeClass.GHOST

    @property
    def spacings(self) -> Tuple[float, float]:
        return self.grid.axes[0].spacing, self.grid.axes[1].spacing

    def node(self, i: int, j: int) -> Vec2:
        ax, ay = self.grid.axes
        return np.array([ax.min + i * ax.spacing, ay.min + j * ay.spacing])

    def band(self, depth: int) -> np.ndarray:
        """Exterior nodes within ``depth`` 4-neighbour steps of the interior."""
        grown = ndimage.binary_dilation(self.interior, structure=ndimage.generate_binary_structure(2, 1),
                                        iterations=depth)
        return grown & ~self.interior

    @cached_property
    def _extrapolation(self) -> Tuple[sparse.csr_matrix, np.ndarray, np.ndarray]:
        n_nodes = self.mask.size
        rows, cols, vals = [], [], []
        boundary_w = np.empty(len(self.ghosts))
        flat_ghosts = np.empty(len(self.ghosts), dtype=np.int64)
        ny = self.mask.shape[1]
        for g_idx, g in enumerate(self.ghosts):
            nodes, weights, w_p = g.composed()
            rows.extend([g_idx] * len(weights))
            cols.extend((nodes[:, 0] * ny + nodes[:, 1]).tolist())
            vals.extend(weights.tolist())
            boundary_w[g_idx] = w_p
            flat_ghosts[g_idx] = g.index[0] * ny + g.index[1]
        matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.ghosts), n_nodes))
        return matrix, boundary_w, flat_ghosts

    def fill_ghosts(self, values: np.ndarray, boundary_value: float = 0.0) -> np.ndarray:
        """Return a copy of ``values`` (shape (nx, ny, ...)) with ghosts extrapolated."""
        if not self.ghosts:
            return np.array(values, dtype=np.float64, copy=True)
        matrix, boundary_w, flat_ghosts = self._extrapolation
        out = np.array(values, dtype=np.float64, copy=True)
        flat = out.reshape(self.mask.size, -1)
        flat[flat_ghosts] = matrix @ flat + boundary_w[:, None] * boundary_value
        return out


def classify(shape: DomainShape, grid2d: Grid) -> EmbeddedDomain:
    if grid2d.ndim != 2:
        raise ConfigError(f"embedded domains need a 2D grid, got {grid2d.ndim}D")
    ax, ay = grid2d.axes
    xmin, xmax, ymin, ymax = shape.bounds()
    if not (ax.min < xmin and xmax < ax.max and ay.min < ymin and ymax < ay.max):
        raise ConfigError(
            f"shape bounds [{xmin:g}, {xmax:g}] x [{ymin:g}, {ymax:g}] are not strictly inside "
            f"the grid box [{ax.min:g}, {ax.max:g}] x [{ay.min:g}, {ay.max:g}]"
        )
    x, y = grid2d.coordinates()
    inside = np.asarray(shape.contains(*np.broadcast_arrays(x, y)), dtype=bool)
    if not inside.any():
        raise GeometryError("no grid node falls inside the shape")
    if inside[0, :].any() or inside[-1, :].any() or inside[:, 0].any() or inside[:, -1].any():
        raise ConfigError("interior nodes touch the edge of the grid box; enlarge the box")
    near = ndimage.binary_dilation(inside, structure=ndimage.generate_binary_structure(2, 1))
    mask = np.full(grid2d.shape, NodeClass.EXTERIOR, dtype=np.int8)
    mask[near & ~inside] = NodeClass.GHOST
    mask[inside] = NodeClass.INTERIOR
    logger.info(
        f"Classified {grid2d.shape[0]}x{grid2d.shape[1]} grid: "
        f"{int(inside.sum())} interior, {int((mask == NodeClass.GHOST).sum())} ghost nodes"
    )
    return EmbeddedDomain(shape=shape, grid=grid2d, mask=mask)


class _StencilBuilder:
    """Line-crossing interpolation stencils for off-grid points along a normal."""

    def __init__(self, domain: EmbeddedDomain) -> None:
        self.domain = domain
        self.axes = domain.grid.axes
        self.interior = domain.interior

    def _ok(self, i: int, j: int) -> bool:
        nx, ny = self.interior.shape
        return 0 <= i < nx and 0 <= j < ny and bool(self.interior[i, j])

    def _line_nodes(self, center: int, count: int, shift: int) -> List[int]:
        start = center - (count - 1) // 2 if count == 3 else center
        return [start + shift + k for k in range(count)]

    def build(self, p: Vec2, n: Vec2) -> Stencil:
        for degree in (2, 1):
            stencil = self._crossing(p, n, degree)
            if stencil is not None:
                return stencil
        return self._nearest(p)

    def _crossing(self, p: Vec2, n: Vec2, degree: int) -> Optional[Stencil]:
        # lines are rows (constant y) when the normal is mostly vertical
        line_ax = 1 if abs(n[1]) >= abs(n[0]) else 0
        along_ax = 1 - line_ax
        la, aa = self.axes[line_ax], self.axes[along_ax]
        count = degree + 1
        u = (p[line_ax] - la.min) / la.spacing
        if count == 3:
            base = int(math.ceil(u - 0.5))
        else:
            base = int(math.ceil(u)) - 1
        line_sign = 1 if n[line_ax] > 0 else -1
        for line_shift in (0, line_sign):
            lines = self._line_nodes(base, count, line_shift)
            picked = []
            for ell in lines:
                y_line = la.min + ell * la.spacing
                cross = p[along_ax] + (y_line - p[line_ax]) * n[along_ax] / n[line_ax]
                v = (cross - aa.min) / aa.spacing
                center = int(math.ceil(v - 0.5)) if count == 3 else int(math.ceil(v)) - 1
                along_sign = 1 if n[along_ax] > 0 else -1
                options = (0, along_sign) if n[along_ax] != 0.0 else (0,)
                chosen = None
                for shift in options:
                    idx = self._line_nodes(center, count, shift)
                    pairs = [(k, ell) if line_ax == 1 else (ell, k) for k in idx]
                    if all(self._ok(i, j) for i, j in pairs):
                        chosen = (idx, pairs, cross)
                        break
                if chosen is None:
                    break
                picked.append((y_line, chosen))
            if len(picked) != count:
                continue
            line_w = _lagrange(np.array([yl for yl, _ in picked]), p[line_ax])
            nodes, weights = [], []
            for lw, (_, (idx, pairs, cross)) in zip(line_w, picked):
                along_pos = aa.min + aa.spacing * np.asarray(idx, dtype=np.float64)
                for (i, j), aw in zip(pairs, _lagrange(along_pos, cross)):
                    nodes.append((i, j))
                    weights.append(lw * aw)
            return Stencil(np.asarray(nodes, dtype=np.int64), np.asarray(weights), degree)
        return None

    def _nearest(self, p: Vec2) -> Stencil:
        ax, ay = self.axes
        ci = int(round((p[0] - ax.min) / ax.spacing))
        cj = int(round((p[1] - ay.min) / ay.spacing))
        best: Optional[Tuple[float, int, int]] = None
        for i in range(ci - 2, ci + 3):
            for j in range(cj - 2, cj + 3):
                if not self._ok(i, j):
                    continue
                d = float(np.hypot(ax.min + i * ax.spacing - p[0], ay.min + j * ay.spacing - p[1]))
                if best is None or (d, i, j) < best:
                    best = (d, i, j)
        if best is None:
            raise GeometryError(
                f"no interior node near ({p[0]:.6g}, {p[1]:.6g}); the domain is too thin for this grid"
            )
        return Stencil(np.array([[best[1], best[2]]], dtype=np.int64), np.array([1.0]), 0)


def build_ghost_stencils(domain: EmbeddedDomain) -> EmbeddedDomain:
    dx, dy = domain.spacings
    h = min(dx, dy)
    builder = _StencilBuilder(domain)
    ghosts: List[GhostPoint] = []
    for i, j in zip(*np.nonzero(domain.ghost_mask)):
        x_g = domain.node(int(i), int(j))
        x_p, n = project_to_boundary(domain.shape, x_g)
        d = float(np.hypot(*(x_g - x_p)))
        x_h = x_p + h * n
        x_2h = x_p + 2.0 * h * n
        ghosts.append(GhostPoint(
            index=(int(i), int(j)),
            position=x_g,
            boundary_point=x_p,
            normal=n,
            distance=d,
            arm_points=(x_h, x_2h),
            extrapolation_weights=extrapolation_weights(d, h),
            arm_stencils=(builder.build(x_h, n), builder.build(x_2h, n)),
        ))
    counts = {deg: sum(1 for g in ghosts if g.degree == deg) for deg in (2, 1, 0)}
    logger.info(f"Built {len(ghosts)} ghost stencils (Q2={counts[2]}, Q1={counts[1]}, Q0={counts[0]})")
    return replace(domain, ghosts=ghosts)


def embed(shape: DomainShape, grid2d: Grid) -> EmbeddedDomain:
    """``classify`` followed by ``build_ghost_stencils``."""
    return build_ghost_stencils(classify(shape, grid2d))


def dump_domain_csv(domain: EmbeddedDomain, stem: str) -> Tuple[str, str]:
    """Write ``<stem>_nodes.csv`` (i, j, class) and ``<stem>_ghosts.csv``."""
    nodes_path, ghosts_path = f"{stem}_nodes.csv", f"{stem}_ghosts.csv"
    with open(nodes_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["i", "j", "class"])
        for (i, j), cls in np.ndenumerate(domain.mask):
            writer.writerow([i, j, NodeClass(int(cls)).name.lower()])
    with open(ghosts_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["i", "j", "xp", "yp", "nx", "ny", "w_p", "w_h", "w_2h", "degree"])
        for g in domain.ghosts:
            writer.writerow([*g.index, *(f"{v:.17g}" for v in (*g.boundary_point, *g.normal,
                                                               *g.extrapolation_weights)), g.degree])
    return nodes_path, ghosts_path
