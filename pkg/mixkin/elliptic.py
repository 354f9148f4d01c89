"""
elliptic.py — Field equations on embedded domains.

    -div(a grad phi) + b phi = rhs     in the domain,    phi = g_D on the boundary

is discretised by the five-point stencil over interior nodes. A stencil arm
that lands on a ghost node is replaced by that ghost's normal extrapolation
(composed interior weights plus the boundary term), so the linear system is
square over interior unknowns only. Systems are solved by sparse LU.

On top of that:

  - ``solve_newton_steady``: -lap(phi) = exp(-phi) - 1 - rho0, damped Newton.
  - ``QuasiNeutralitySolver``: z-average equation plus one fluctuation solve
    per z-slice, both sharing a factorisation across slices.
  - ``gradient``: E = -grad(phi), U = (-phi_y, phi_x), E_par = -phi_z.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ConfigError, ConvergenceError
from .geometry import EmbeddedDomain, GhostPoint
from .grid import Grid
from .hweno import derivative_4th
from .transport import VelocityField

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

RESIDUAL_TOL = 1e-10
MAX_HALVINGS = 30
INTERFACE_MEANS = ("arithmetic", "harmonic")


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

@dataclass
class EllipticProblem:
    domain: EmbeddedDomain
    a: np.ndarray
    b: np.ndarray
    matrix: sparse.csr_matrix
    boundary_rhs: np.ndarray
    unknowns: np.ndarray
    dirichlet_value: float = 0.0
    interface: str = "arithmetic"
    _lu: Optional[object] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.unknowns.size)

    def restrict(self, values: np.ndarray) -> np.ndarray:
        """Grid array (nx, ny, ...) -> unknown vector(s) (n,) or (n, k)."""
        flat = np.asarray(values, dtype=np.float64).reshape(self.domain.mask.size, -1)[self.unknowns]
        return flat[:, 0] if np.ndim(values) == 2 else flat

    def prolong(self, x: np.ndarray, trailing: Tuple[int, ...] = ()) -> np.ndarray:
        """Unknowns -> grid array with ghosts extrapolated and far exterior at 0."""
        out = np.zeros((self.domain.mask.size, int(np.prod(trailing, dtype=np.int64))))
        out[self.unknowns] = np.asarray(x).reshape(self.size, -1)
        out = out.reshape(self.domain.mask.shape + tuple(trailing))
        return self.domain.fill_ghosts(out, self.dirichlet_value)

    def factorized(self):
        if self._lu is None:
            start = time.perf_counter()
            self._lu = splu(self.matrix.tocsc())
            logger.info(f"Factorised {self.size}x{self.size} operator in {time.perf_counter() - start:.2f}s")
        return self._lu

    def export_coo(self, path: str) -> str:
        """Write the matrix as ``row col value`` text lines."""
        coo = self.matrix.tocoo()
        np.savetxt(path, np.column_stack([coo.row, coo.col, coo.data]),
                   fmt=["%d", "%d", "%.17g"], header="row col value")
        return path


def _interface_coefficient(a_p: np.ndarray, a_q: np.ndarray, mean: str) -> np.ndarray:
    if mean == "harmonic":
        return 2.0 * a_p * a_q / (a_p + a_q)
    return 0.5 * (a_p + a_q)


def assemble(
    domain: EmbeddedDomain,
    a: ArrayLike = 1.0,
    b: ArrayLike = 0.0,
    dirichlet_value: float = 0.0,
    interface: str = "arithmetic",
) -> EllipticProblem:
    if interface not in INTERFACE_MEANS:
        raise ConfigError(f"unknown interface mean {interface!r}; expected one of {INTERFACE_MEANS}")
    shape = domain.mask.shape
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), shape)
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), shape)
    interior = domain.interior
    if np.any(a[interior | domain.ghost_mask] <= 0.0):
        raise ConfigError("the diffusion coefficient must be positive on interior and ghost nodes")

    unknowns = np.flatnonzero(interior)
    n = unknowns.size
    row_of = np.full(interior.size, -1, dtype=np.int64)
    row_of[unknowns] = np.arange(n)
    row_of = row_of.reshape(shape)
    ghosts: Dict[Tuple[int, int], GhostPoint] = {g.index: g for g in domain.ghosts}
    if domain.ghost_mask.any() and not ghosts:
        raise ConfigError("domain has ghost nodes but no stencils; call build_ghost_stencils first")

    ip, jp = np.nonzero(interior)
    rows_p = row_of[ip, jp]
    diag = b[ip, jp].copy()
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    boundary_rhs = np.zeros(n)
    dx, dy = domain.spacings
    for di, dj, h in ((1, 0, dx), (-1, 0, dx), (0, 1, dy), (0, -1, dy)):
        iq, jq = ip + di, jp + dj
        c = _interface_coefficient(a[ip, jp], a[iq, jq], interface) / (h * h)
        diag += c
        inside = interior[iq, jq]
        rows.append(rows_p[inside])
        cols.append(row_of[iq[inside], jq[inside]])
        vals.append(-c[inside])
        for k in np.flatnonzero(~inside):
            g = ghosts[(int(iq[k]), int(jq[k]))]
            nodes, weights, w_p = g.composed()
            rows.append(np.full(len(weights), rows_p[k]))
            cols.append(row_of[nodes[:, 0], nodes[:, 1]])
            vals.append(-c[k] * weights)
            boundary_rhs[rows_p[k]] += c[k] * w_p * dirichlet_value
    rows.append(rows_p)
    cols.append(rows_p)
    vals.append(diag)
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    logger.debug(f"Assembled {n} unknowns, {matrix.nnz} nonzeros")
    return EllipticProblem(domain=domain, a=np.array(a), b=np.array(b), matrix=matrix,
                           boundary_rhs=boundary_rhs, unknowns=unknowns,
                           dirichlet_value=dirichlet_value, interface=interface)


# ---------------------------------------------------------------------------
# Linear solve
# ---------------------------------------------------------------------------

def _relative_residual(matrix: sparse.csr_matrix, x: np.ndarray, rhs: np.ndarray) -> float:
    denom = float(np.linalg.norm(rhs))
    res = float(np.linalg.norm(matrix @ x - rhs))
    return res / denom if denom > 0.0 else res


def solve_vectors(problem: EllipticProblem, rhs: np.ndarray) -> np.ndarray:
    """Solve for one (n,) or several (n, k) right-hand sides over the unknowns."""
    lu = problem.factorized()
    x = lu.solve(rhs)
    rel = _relative_residual(problem.matrix, x, rhs)
    if rel > 1e-12:
        x = x + lu.solve(rhs - problem.matrix @ x)
        rel = _relative_residual(problem.matrix, x, rhs)
    if not np.isfinite(rel) or rel > RESIDUAL_TOL:
        raise ConvergenceError("sparse solve missed the residual tolerance", [rel])
    return x


def solve_linear(problem: EllipticProblem, rhs: np.ndarray) -> np.ndarray:
    """phi over the grid for a grid-shaped ``rhs`` (nx, ny) or (nx, ny, k)."""
    rhs = np.asarray(rhs, dtype=np.float64)
    vec = problem.restrict(rhs)
    vec = vec + (problem.boundary_rhs if vec.ndim == 1 else problem.boundary_rhs[:, None])
    return problem.prolong(solve_vectors(problem, vec), rhs.shape[2:])


# ---------------------------------------------------------------------------
# Nonlinear steady state
# ---------------------------------------------------------------------------

@dataclass
class NewtonState:
    iterate: np.ndarray
    residual_norm: float
    iteration: int
    history: List[float] = field(default_factory=list)


def solve_newton_steady(
    domain: EmbeddedDomain,
    a: ArrayLike = 1.0,
    rho0: ArrayLike = 1.0,
    tol: float = 1e-10,
    max_iter: int = 50,
    initial: Optional[np.ndarray] = None,
    nonlinear: bool = True,
    interface: str = "arithmetic",
) -> NewtonState:
    """Solve -div(a grad phi) = (exp(-phi) - 1) - rho0 with phi = 0 on the boundary.

    ``nonlinear=False`` drops the exponential term (linear test mode).
    """
    problem = assemble(domain, a, 0.0, interface=interface)
    A = problem.matrix
    shape = domain.mask.shape
    rho0_vec = problem.restrict(np.broadcast_to(np.asarray(rho0, dtype=np.float64), shape))
    x = np.zeros(problem.size) if initial is None else problem.restrict(initial).copy()

    def residual(v: np.ndarray) -> np.ndarray:
        source = np.expm1(-v) if nonlinear else 0.0
        return A @ v - problem.boundary_rhs - source + rho0_vec

    F = residual(x)
    history = [float(np.max(np.abs(F)))]
    iteration = 0
    while history[-1] > tol:
        if iteration >= max_iter:
            raise ConvergenceError(f"Newton did not reach {tol:g} in {max_iter} iterations", history)
        J = A + sparse.diags(np.exp(-x)) if nonlinear else A
        delta = splu(sparse.csc_matrix(J)).solve(-F)
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = x + lam * delta
            F_trial = residual(trial)
            norm = float(np.max(np.abs(F_trial)))
            if norm <= history[-1]:
                break
            lam *= 0.5
        else:
            raise ConvergenceError("Newton line search failed to reduce the residual", history)
        x, F = trial, F_trial
        iteration += 1
        history.append(norm)
        logger.info(f"Newton iteration {iteration}: |F|_inf = {norm:.3e} (step {lam:g})")
    return NewtonState(iterate=problem.prolong(x), residual_norm=history[-1],
                       iteration=iteration, history=history)


# ---------------------------------------------------------------------------
# Quasi-neutrality
# ---------------------------------------------------------------------------

@dataclass
class QuasiNeutralityResult:
    phi: np.ndarray
    phi_average: np.ndarray
    phi_fluctuation: np.ndarray


class QuasiNeutralitySolver:
    """-div(rho0 grad phi) + (rho0 / Te) (phi - <phi>_z) = rho - rho0, slice by slice.

    Splits into the z-averaged problem for <phi> (no zeroth-order term) and
    one fluctuation problem per z-slice with rhs rho - <rho>_z. Both
    operators are z-independent, so each is factorised once.
    """

    def __init__(
        self,
        domain: EmbeddedDomain,
        rho0: np.ndarray,
        te: np.ndarray,
        threads: int = 1,
        interface: str = "arithmetic",
    ) -> None:
        rho0 = np.asarray(rho0, dtype=np.float64)
        te = np.broadcast_to(np.asarray(te, dtype=np.float64), rho0.shape)
        self.domain = domain
        self.rho0 = rho0
        self.threads = max(1, int(threads))
        # exterior values are never used by the operators
        safe_te = np.where(te > 0.0, te, 1.0)
        self.average = assemble(domain, rho0, 0.0, interface=interface)
        self.fluctuation = assemble(domain, rho0, rho0 / safe_te, interface=interface)

    def _solve_columns(self, rhs: np.ndarray) -> np.ndarray:
        if self.threads == 1 or rhs.shape[1] < 2:
            return solve_vectors(self.fluctuation, rhs)
        self.fluctuation.factorized()
        chunks = np.array_split(np.arange(rhs.shape[1]), self.threads)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            parts = list(pool.map(lambda idx: solve_vectors(self.fluctuation, rhs[:, idx]),
                                  [c for c in chunks if c.size]))
        return np.concatenate(parts, axis=1)

    def solve(self, rho: np.ndarray) -> QuasiNeutralityResult:
        rho = np.asarray(rho, dtype=np.float64)
        rho_bar = rho.mean(axis=2)
        phi_bar = solve_linear(self.average, rho_bar - self.rho0)
        rhs = self.fluctuation.restrict(rho - rho_bar[:, :, None])
        phi_fl = self.fluctuation.prolong(self._solve_columns(rhs), rho.shape[2:])
        return QuasiNeutralityResult(phi=phi_bar[:, :, None] + phi_fl, phi_average=phi_bar,
                                     phi_fluctuation=phi_fl)

    def residual(self, phi: np.ndarray, rho: np.ndarray) -> float:
        """Relative residual of the unsplit 3D discrete equation."""
        phi = np.asarray(phi, dtype=np.float64)
        x = self.fluctuation.restrict(phi)
        x_mean = self.fluctuation.restrict(phi.mean(axis=2))
        b = self.fluctuation.restrict(self.fluctuation.b)
        lhs = self.average.matrix @ x + b[:, None] * (x - x_mean[:, None])
        target = self.fluctuation.restrict(rho - self.rho0[:, :, None])
        return float(np.linalg.norm(lhs - target) / max(np.linalg.norm(target), 1e-300))


def quasi_neutrality_solve(
    rho: np.ndarray, rho0: np.ndarray, te: np.ndarray, domain: EmbeddedDomain, threads: int = 1
) -> np.ndarray:
    return QuasiNeutralitySolver(domain, rho0, te, threads=threads).solve(rho).phi


# ---------------------------------------------------------------------------
# Gradient
# ---------------------------------------------------------------------------

def _shift(arr: np.ndarray, k: int, axis: int) -> np.ndarray:
    """out[i] = arr[i + k] (wrapping)."""
    return np.roll(arr, -k, axis=axis)


def _masked_derivative(phi: np.ndarray, available: np.ndarray, h: float, axis: int) -> np.ndarray:
    d4 = (_shift(phi, -2, axis) - 8.0 * _shift(phi, -1, axis)
          + 8.0 * _shift(phi, 1, axis) - _shift(phi, 2, axis)) / (12.0 * h)
    d2 = (_shift(phi, 1, axis) - _shift(phi, -1, axis)) / (2.0 * h)
    ok2 = available & _shift(available, -1, axis) & _shift(available, 1, axis)
    ok4 = ok2 & _shift(available, -2, axis) & _shift(available, 2, axis)
    return np.where(ok4, d4, np.where(ok2, d2, 0.0))


def gradient(phi: np.ndarray, grid: Grid, domain: Optional[EmbeddedDomain] = None) -> VelocityField:
    """Drift U = (-phi_y, phi_x) and, for 3D phi, E_par = -phi_z.

    With a domain, fourth-order centred differences are used wherever the
    five-point stencil stays inside interior + ghost nodes and second order
    elsewhere; velocities vanish outside the interior.
    """
    phi = np.asarray(phi, dtype=np.float64)
    ax, ay = grid.axes[:2]
    if domain is None:
        phi_x = derivative_4th(phi, ax.spacing, axis=0, periodic=ax.periodic)
        phi_y = derivative_4th(phi, ay.spacing, axis=1, periodic=ay.periodic)
        ux, uy = -phi_y, phi_x
    else:
        extra = (1,) * (phi.ndim - 2)
        available = (domain.interior | domain.ghost_mask).reshape(domain.mask.shape + extra)
        inside = domain.interior.reshape(domain.mask.shape + extra)
        phi_x = _masked_derivative(phi, available, ax.spacing, 0)
        phi_y = _masked_derivative(phi, available, ay.spacing, 1)
        ux = np.where(inside, -phi_y, 0.0)
        uy = np.where(inside, phi_x, 0.0)
    e_par = None
    if phi.ndim == 3:
        e_par = -derivative_4th(phi, grid.axes[2].spacing, axis=2, periodic=grid.axes[2].periodic)
    return VelocityField(ux=np.broadcast_to(ux, phi.shape).copy(), uy=np.broadcast_to(uy, phi.shape).copy(),
                         e_par=e_par, potential=phi)
