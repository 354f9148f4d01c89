"""
grid.py — Uniform Cartesian meshes (1-4 axes) and node-centred fields.

Axes are node-centred. A bounded axis carries both endpoints, a periodic axis
omits the duplicate endpoint, so::

    bounded:  spacing = (max - min) / (n - 1)
    periodic: spacing = (max - min) / n

Field data is a C-ordered ``numpy.ndarray`` whose shape equals the node counts;
for the 4D drift-kinetic field the axis order is (x, y, z, v) so that v-lines
are contiguous.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NonFiniteError

logger = logging.getLogger(__name__)

MIN_NODES = 5


@dataclass(frozen=True)
class Axis:
    """One uniform axis."""

    name: str
    min: float
    max: float
    n: int
    periodic: bool = False

    def __post_init__(self) -> None:
        if self.n < MIN_NODES:
            raise ConfigError(f"axis {self.name!r} needs at least {MIN_NODES} nodes, got {self.n}")
        if not self.max > self.min:
            raise ConfigError(f"axis {self.name!r} has empty extent [{self.min}, {self.max}]")

    @property
    def spacing(self) -> float:
        if self.periodic:
            return (self.max - self.min) / self.n
        return (self.max - self.min) / (self.n - 1)

    @property
    def length(self) -> float:
        return self.max - self.min

    def nodes(self) -> np.ndarray:
        return self.min + self.spacing * np.arange(self.n)

    def quadrature_weights(self) -> np.ndarray:
        """Rectangle rule on periodic axes, trapezoid rule on bounded ones."""
        w = np.full(self.n, self.spacing)
        if not self.periodic:
            w[0] *= 0.5
            w[-1] *= 0.5
        return w

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "min": self.min, "max": self.max,
                "n": self.n, "periodic": self.periodic}


@dataclass(frozen=True)
class Grid:
    """Ordered tuple of 1-4 axes."""

    axes: Tuple[Axis, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "axes", tuple(self.axes))
        if not 1 <= len(self.axes) <= 4:
            raise ConfigError(f"grids have 1 to 4 axes, got {len(self.axes)}")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate axis names in {names}")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(a.n for a in self.axes)

    @property
    def spacings(self) -> Tuple[float, ...]:
        return tuple(a.spacing for a in self.axes)

    @property
    def min_spacing(self) -> float:
        return min(self.spacings)

    def index(self, name: str) -> int:
        for k, a in enumerate(self.axes):
            if a.name == name:
                return k
        raise KeyError(name)

    def axis(self, name: str) -> Axis:
        return self.axes[self.index(name)]

    def sub(self, names: Iterable[str]) -> "Grid":
        return Grid(tuple(self.axis(n) for n in names))

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Broadcastable ``ij``-indexed node coordinates, one array per axis."""
        return tuple(np.meshgrid(*(a.nodes() for a in self.axes), indexing="ij", sparse=True))

    def to_dict(self) -> Dict[str, object]:
        return {"axes": [a.to_dict() for a in self.axes]}

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "Grid":
        return cls(tuple(Axis(**a) for a in payload["axes"]))  # type: ignore[arg-type]


@dataclass
class Field:
    """Node values of one scalar quantity over a grid."""

    grid: Grid
    data: np.ndarray
    name: str = "field"
    time: float = 0.0
    attrs: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.shape != self.grid.shape:
            raise ConfigError(
                f"field {self.name!r} has shape {self.data.shape}, grid expects {self.grid.shape}"
            )

    @classmethod
    def zeros(cls, grid: Grid, name: str = "field", time: float = 0.0) -> "Field":
        return cls(grid, np.zeros(grid.shape), name=name, time=time)

    def copy(self, **changes: object) -> "Field":
        out = replace(self, data=self.data.copy(), attrs=dict(self.attrs))
        for key, value in changes.items():
            setattr(out, key, value)
        return out

    def assert_finite(self) -> "Field":
        if not np.all(np.isfinite(self.data)):
            bad = int(np.count_nonzero(~np.isfinite(self.data)))
            raise NonFiniteError(f"field {self.name!r} has {bad} non-finite values at t={self.time}")
        return self


# ---------------------------------------------------------------------------
# Line access
# ---------------------------------------------------------------------------

def _line_index(grid: Grid, axis: int, fixed: Sequence[int]) -> Tuple[object, ...]:
    if not 0 <= axis < grid.ndim:
        raise IndexError(f"axis {axis} out of range for a {grid.ndim}D grid")
    fixed = tuple(int(k) for k in fixed)
    if len(fixed) != grid.ndim - 1:
        raise IndexError(f"expected {grid.ndim - 1} fixed indices, got {len(fixed)}")
    index: list = []
    it = iter(fixed)
    for k, ax in enumerate(grid.axes):
        if k == axis:
            index.append(slice(None))
            continue
        i = next(it)
        if not 0 <= i < ax.n:
            raise IndexError(f"index {i} out of range for axis {ax.name!r} (n={ax.n})")
        index.append(i)
    return tuple(index)


def line_view(field: Field, axis: int, fixed: Sequence[int] = ()) -> np.ndarray:
    """Writable 1D view of ``field`` along ``axis`` with the other indices fixed."""
    return field.data[_line_index(field.grid, axis, fixed)]


def write_line(field: Field, axis: int, fixed: Sequence[int], values: Sequence[float]) -> None:
    view = line_view(field, axis, fixed)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != view.shape:
        raise IndexError(f"line of length {view.shape[0]} cannot take {values.shape} values")
    view[...] = values


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def reduce_integral(
    field: Field,
    weights: Optional[Sequence[Optional[np.ndarray]]] = None,
    mask: Optional[np.ndarray] = None,
) -> float:
    """Integrate ``field`` over its grid.

    ``weights`` overrides the per-axis quadrature (``None`` entries keep the
    default). ``mask`` is a boolean array over the leading ``mask.ndim`` axes;
    masked-out nodes contribute nothing and masked axes use the plain
    rectangle rule.
    """
    grid = field.grid
    per_axis = [a.quadrature_weights() for a in grid.axes]
    data = field.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid.shape[: mask.ndim]:
            raise ConfigError(f"mask shape {mask.shape} does not match grid {grid.shape}")
        for k in range(mask.ndim):
            per_axis[k] = np.full(grid.axes[k].n, grid.axes[k].spacing)
        data = np.where(mask.reshape(mask.shape + (1,) * (grid.ndim - mask.ndim)), data, 0.0)
    if weights is not None:
        for k, w in enumerate(weights):
            if w is not None:
                per_axis[k] = np.asarray(w, dtype=np.float64)
    value = data
    for w in reversed(per_axis):
        value = value @ w
    return float(value)
