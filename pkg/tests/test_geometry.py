"""
Tests for mixkin.geometry — shapes, node classification, projection and
ghost-point extrapolation stencils.
"""
import csv
import os
import sys

import numpy as np
import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, REPO_ROOT)

from mixkin.errors import ConfigError, GeometryError  # noqa: E402
from mixkin.geometry import (  # noqa: E402
    Disk,
    DomainShape,
    DShape,
    NodeClass,
    Polygon,
    classify,
    dump_domain_csv,
    embed,
    extrapolation_weights,
    project_to_boundary,
)
from mixkin.grid import Axis, Grid  # noqa: E402
from mixkin.models import dshape_grid  # noqa: E402


def _square_grid(lo, hi, n):
    return Grid((Axis("x", lo, hi, n), Axis("y", lo, hi, n)))


def _quadratic(x, y):
    return 1.0 + 2.0 * x - y + x ** 2 + 0.5 * x * y - 0.3 * y ** 2


@pytest.fixture(scope="module")
def disk_domain():
    return embed(Disk((0.0, 0.0), 1.0), _square_grid(-1.5, 1.5, 41))


@pytest.fixture(scope="module")
def dshape_domain_coarse():
    return embed(DShape(), dshape_grid(60, 110))


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------
class TestDShape:
    def test_boundary_samples(self):
        shape = DShape()
        x, y = shape.map(1.0, 0.0)
        assert x == pytest.approx(2.31, abs=1e-12)
        assert y == pytest.approx(0.0, abs=1e-12)
        x, y = shape.map(1.0, 0.25)
        assert x == pytest.approx(1.44624, abs=1e-12)
        assert y == pytest.approx(1.0126, abs=1e-12)

    def test_curvilinear_round_trip(self):
        shape = DShape()
        rng = np.random.default_rng(2)
        xi1 = rng.uniform(-1.5, 1.0, 100)
        xi2 = rng.uniform(0.0, 1.0, 100)
        back1, back2 = shape.to_curvilinear(*shape.map(xi1, xi2))
        assert np.max(np.abs(back1 - xi1)) < 1e-8
        wrap = np.abs(back2 - xi2)
        assert np.max(np.minimum(wrap, 1.0 - wrap)) < 1e-8
        assert np.all((back2 >= 0.0) & (back2 < 1.0))

    def test_centre_maps_to_axis(self):
        xi1, xi2 = DShape().to_curvilinear(np.array([1.7]), np.array([0.0]))
        assert xi1[0] == DShape.XI1_MIN
        assert xi2[0] == 0.0

    def test_inversion_failure_names_the_point(self):
        with pytest.raises(GeometryError) as info:
            DShape().to_curvilinear(np.array([2.0]), np.array([0.3]), tol=0.0, max_iter=1)
        assert "(x, y) = (2, 0.3)" in str(info.value)

    def test_contains(self):
        shape = DShape()
        inside = shape.contains(np.array([1.7, 2.3, 2.35, 1.0]), np.array([0.0, 0.0, 0.0, 0.0]))
        assert inside.tolist() == [True, True, False, False]

    def test_projection_on_outer_midplane(self):
        point, normal = DShape().project((2.5, 0.0))
        assert point == pytest.approx([2.31, 0.0], abs=1e-10)
        assert normal == pytest.approx([-1.0, 0.0], abs=1e-10)

    def test_projection_is_orthogonal(self):
        shape = DShape()
        p = np.array([1.2, 1.0])
        x_p, n = project_to_boundary(shape, p)
        assert np.hypot(*n) == pytest.approx(1.0)
        # the offset from the boundary point is along the normal (pointing out of the domain)
        offset = p - x_p
        assert abs(offset[0] * n[1] - offset[1] * n[0]) < 1e-9
        assert np.dot(offset, n) < 0.0

    def test_is_a_domain_shape(self):
        assert isinstance(DShape(), DomainShape)
        assert isinstance(Disk(), DomainShape)


class TestDiskAndPolygon:
    def test_disk_projection(self):
        point, normal = Disk((0.0, 0.0), 1.0).project((2.0, 0.0))
        assert point == pytest.approx([1.0, 0.0])
        assert normal == pytest.approx([-1.0, 0.0])

    def test_disk_centre_has_no_projection(self):
        with pytest.raises(GeometryError):
            Disk((0.5, 0.5), 1.0).project((0.5, 0.5))

    def test_polygon_orientation_and_contains(self):
        square = Polygon([(0, 0), (0, 1), (1, 1), (1, 0)])
        inside = square.contains(np.array([0.5, 1.5, 1.0]), np.array([0.5, 0.5, 0.5]))
        assert inside.tolist() == [True, False, True]

    def test_polygon_projection_normal_points_inward(self):
        square = Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])
        point, normal = square.project((0.5, -0.2))
        assert point == pytest.approx([0.5, 0.0])
        assert normal == pytest.approx([0.0, 1.0])

    def test_degenerate_polygon(self):
        with pytest.raises(ConfigError):
            Polygon([(0, 0), (1, 1), (2, 2)])


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------
class TestClassify:
    def test_ghosts_are_exterior_neighbours_of_interior(self, disk_domain):
        mask = disk_domain.mask
        x, y = np.broadcast_arrays(*disk_domain.grid.coordinates())
        r = np.hypot(x, y)
        assert np.all(r[mask == NodeClass.INTERIOR] <= 1.0)
        assert np.all(r[mask == NodeClass.GHOST] > 1.0)
        interior = disk_domain.interior
        for i, j in zip(*np.nonzero(disk_domain.ghost_mask)):
            assert interior[i - 1, j] or interior[i + 1, j] or interior[i, j - 1] or interior[i, j + 1]

    def test_box_must_contain_shape(self):
        with pytest.raises(ConfigError):
            classify(Disk((0.0, 0.0), 1.0), _square_grid(-1.0, 1.0, 21))

    def test_needs_2d_grid(self):
        with pytest.raises(ConfigError):
            classify(Disk(), Grid((Axis("x", -2.0, 2.0, 9),)))

    def test_disk_node_classes(self):
        coarse = classify(Disk((0.0, 0.0), 1.0), _square_grid(-2.0, 2.0, 9))
        assert coarse.mask[4, 4] == NodeClass.INTERIOR
        assert coarse.mask[8, 4] == NodeClass.EXTERIOR
        shifted = classify(Disk((0.0, 0.0), 1.0),
                           Grid((Axis("x", -1.75, 1.75, 8), Axis("y", -2.0, 2.0, 9))))
        # node (1.25, 0)
        assert shifted.mask[6, 4] == NodeClass.GHOST

    def test_dshape_interior_matches_crossing_count(self):
        shape = DShape()
        grid = dshape_grid(240, 440)
        domain = classify(shape, grid)
        xs, ys = grid.axes[0].nodes(), grid.axes[1].nodes()
        a = shape.polyline
        b = np.roll(a, -1, axis=0)
        expected = np.zeros(grid.shape, dtype=bool)
        for j, yj in enumerate(ys):
            crosses = (a[:, 1] > yj) != (b[:, 1] > yj)
            xa, ya, xb, yb = a[crosses, 0], a[crosses, 1], b[crosses, 0], b[crosses, 1]
            x_cross = xa + (yj - ya) * (xb - xa) / (yb - ya)
            expected[:, j] = np.sum(xs[:, None] < x_cross[None, :], axis=1) % 2 == 1
        differ = np.argwhere(expected != domain.interior)
        if len(differ):
            # only nodes lying on the polyline itself may be decided differently
            polygon = Polygon(a)
            dist = polygon.distance(xs[differ[:, 0]], ys[differ[:, 1]])
            assert np.all(dist <= 1e-12)
        assert domain.interior.sum() > 40000

    def test_dshape_contains_agrees_with_inversion(self):
        shape = DShape()
        x, y = np.broadcast_arrays(*dshape_grid(60, 110).coordinates())
        xi1, _ = shape.to_curvilinear(x, y)
        clear = np.abs(xi1 - shape.XI1_MAX) > 1e-5
        assert np.array_equal(shape.contains(x, y)[clear], (xi1 <= shape.XI1_MAX)[clear])

    def test_band_grows_outwards(self, disk_domain):
        band1 = disk_domain.band(1)
        band5 = disk_domain.band(5)
        assert np.array_equal(band1, disk_domain.ghost_mask)
        assert np.all(band5[band1])
        assert not np.any(band5 & disk_domain.interior)


# ---------------------------------------------------------------------------
# Ghost extrapolation
# ---------------------------------------------------------------------------
class TestGhostStencils:
    def test_extrapolation_weights(self):
        assert extrapolation_weights(0.1, 0.1) == pytest.approx((3.0, -3.0, 1.0))
        assert extrapolation_weights(0.0, 0.1) == pytest.approx((1.0, 0.0, 0.0))
        assert sum(extrapolation_weights(0.037, 0.1)) == pytest.approx(1.0)

    @pytest.mark.parametrize("which", ["disk", "dshape"])
    def test_quadratic_exactness(self, which, disk_domain, dshape_domain_coarse):
        domain = disk_domain if which == "disk" else dshape_domain_coarse
        x, y = np.broadcast_arrays(*domain.grid.coordinates())
        values = _quadratic(x, y)
        q2 = [g for g in domain.ghosts if g.degree == 2]
        assert len(q2) > len(domain.ghosts) // 2
        for g in q2:
            got = g.extrapolate(values, float(_quadratic(*g.boundary_point)))
            assert got == pytest.approx(float(_quadratic(*g.position)), abs=1e-12)

    def test_half_plane_ghost_uses_grid_nodes(self):
        shape = Polygon([(-1.1, 0.0), (1.1, 0.0), (1.1, 2.1), (-1.1, 2.1)])
        grid = Grid((Axis("x", -1.5, 1.5, 13), Axis("y", -0.75, 2.25, 13)))
        domain = embed(shape, grid)
        # node (0, -0.25), one spacing below the edge y = 0
        ghost = next(g for g in domain.ghosts if tuple(g.index) == (6, 2))
        assert ghost.boundary_point == pytest.approx([0.0, 0.0], abs=1e-15)
        assert ghost.normal == pytest.approx([0.0, 1.0])
        nodes, weights, _ = ghost.composed()
        used = {tuple(int(k) for k in n) for n, w in zip(nodes, weights) if abs(w) > 1e-12}
        assert used == {(6, 4), (6, 5)}
        _, y = np.broadcast_arrays(*grid.coordinates())
        assert ghost.extrapolate(y ** 2, 0.0) == pytest.approx(0.0625, abs=1e-14)

    def test_arm_stencils_use_interior_nodes_only(self, dshape_domain_coarse):
        interior = dshape_domain_coarse.interior
        for g in dshape_domain_coarse.ghosts:
            nodes, weights, w_p = g.composed()
            assert np.all(interior[nodes[:, 0], nodes[:, 1]])
            assert np.sum(weights) + w_p == pytest.approx(1.0)

    def test_fill_ghosts_matches_per_ghost_extrapolation(self, disk_domain):
        rng = np.random.default_rng(9)
        values = np.where(disk_domain.interior, rng.standard_normal(disk_domain.mask.shape), 0.0)
        filled = disk_domain.fill_ghosts(values, 0.5)
        for g in disk_domain.ghosts[:25]:
            assert filled[g.index] == pytest.approx(g.extrapolate(values, 0.5), abs=1e-12)
        assert np.array_equal(filled[disk_domain.interior], values[disk_domain.interior])

    def test_fill_ghosts_broadcasts_trailing_axes(self, disk_domain):
        values = np.zeros(disk_domain.mask.shape + (3,))
        filled = disk_domain.fill_ghosts(values, 2.0)
        ghost = disk_domain.ghosts[0]
        w_p = ghost.extrapolation_weights[0]
        assert filled[ghost.index] == pytest.approx([2.0 * w_p] * 3)

    def test_dump_csv(self, tmp_path, disk_domain):
        nodes_path, ghosts_path = dump_domain_csv(disk_domain, str(tmp_path / "disk"))
        with open(nodes_path) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == disk_domain.mask.size
        assert {r["class"] for r in rows} == {"interior", "ghost", "exterior"}
        with open(ghosts_path) as f:
            assert sum(1 for _ in f) == len(disk_domain.ghosts) + 1
