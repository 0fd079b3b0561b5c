"""Periodic homogenization: harmonic average, cell problems, effective tensor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.csgraph import connected_components

from . import fem
from .coefficients import Coefficient
from .linalg import ConstrainedSolver, as_csr
from .mesh import TensorMesh
from .timestep import TrajectoryRecorder, chain, simulate


def harmonic_average_1d(a0: float, sigma_fraction: float) -> float:
    """Effective 1D coefficient a0 / (a0 + (1 - a0)|Sigma|)."""
    if a0 <= 0:
        raise ValueError("a0 must be positive")
    if not 0 <= sigma_fraction <= 1:
        raise ValueError("sigma_fraction must lie in [0, 1]")
    return a0 / (a0 + (1.0 - a0) * sigma_fraction)


def limit_solution_1d(u0: fem.Field, v0: fem.Field, t: float) -> fem.Field:
    """High-contrast 1D limit u0 + t v0 (the wave does not propagate)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return fem.combination([(1.0, u0), (t, v0)])


@dataclass(frozen=True, eq=False)
class HomogenizedTensor:
    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.T))

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.T)) <= tol)


@dataclass(frozen=True, eq=False)
class CellSolution:
    """Periodic corrector xi_i as nodal values on the cell mesh (periodic copies filled)."""

    direction: int
    xi: np.ndarray
    mesh: TensorMesh


def _periodic_map(mesh: TensorMesh) -> sparse.csr_matrix:
    """Nodes -> periodic dofs (opposite faces identified), as a 0/1 matrix."""
    multi = mesh.node_multi(np.arange(mesh.num_nodes)) % mesh.n
    pdof = multi[:, 0] + (mesh.n * multi[:, 1] if mesh.dim == 2 else 0)
    return sparse.csr_matrix(
        (np.ones(mesh.num_nodes), (np.arange(mesh.num_nodes), pdof)),
        shape=(mesh.num_nodes, mesh.n**mesh.dim),
    )


def _gradient_loads(mesh: TensorMesh, a: np.ndarray) -> np.ndarray:
    """(d, nodes): entry [i, j] = integral of a * d(phi_j)/dx_i."""
    pts, wts = fem._quadrature(mesh.dim)
    _, grads = fem.reference_basis(mesh.dim, pts)
    local = np.einsum("q,qai->ia", wts, grads) * mesh.h ** (mesh.dim - 1)
    out = np.zeros((mesh.dim, mesh.num_nodes))
    en = mesh.element_nodes
    for i in range(mesh.dim):
        np.add.at(out[i], en.ravel(), (a[:, None] * local[i][None, :]).ravel())
    return out


def solve_cell_problems(
    cell: TensorMesh, cell_coeff: Coefficient, perforated: bool = False
) -> tuple[list[CellSolution], HomogenizedTensor]:
    """Solve the d periodic cell problems and assemble the effective tensor.

    With ``perforated=True`` the inclusion elements (value a0) are removed
    from both the cell problems and the integral defining the tensor.
    """
    a = np.array(fem._element_values(cell, cell_coeff), dtype=float)
    if perforated:
        if cell.dim == 1:
            raise ValueError("a perforated cell needs an inclusion compactly inside Y (dim >= 2)")
        a[cell_coeff.inclusion_mask()] = 0.0
    active_el = a > 0

    R = _periodic_map(cell)
    A = as_csr(R.T @ fem.assemble_stiffness(cell, a, full=True) @ R)
    B = _gradient_loads(cell, a) @ R
    mass_el = np.where(active_el, 1.0, 0.0)
    mvec = np.asarray(R.T @ _node_measure(cell, mass_el)).ravel()

    active = mvec > 0
    idx = np.flatnonzero(active)
    A = A[idx][:, idx]
    B = B[:, idx]
    mvec = mvec[idx]
    ncomp, _ = connected_components(A, directed=False)
    if ncomp != 1:
        raise ValueError(f"cell domain splits into {ncomp} disconnected pieces")

    solver = ConstrainedSolver(A, sparse.csr_matrix(mvec[None, :]))
    xis = solver.solve(-B.T)
    if xis.ndim == 1:
        xis = xis[:, None]

    weighted = float(np.sum(a) * cell.h**cell.dim)
    ahat = np.empty((cell.dim, cell.dim))
    for i in range(cell.dim):
        for j in range(cell.dim):
            ahat[i, j] = (
                (weighted if i == j else 0.0)
                + xis[:, i] @ B[j]
                + xis[:, j] @ B[i]
                + xis[:, i] @ (A @ xis[:, j])
            )

    sols = []
    for i in range(cell.dim):
        full = np.zeros(R.shape[1])
        full[idx] = xis[:, i]
        sols.append(CellSolution(i, R @ full, cell))
    return sols, HomogenizedTensor(ahat)


def _node_measure(mesh: TensorMesh, el_weight: np.ndarray) -> np.ndarray:
    """integral of phi_j over elements with weight 1 (0 elsewhere), per node."""
    out = np.zeros(mesh.num_nodes)
    share = el_weight * mesh.h**mesh.dim / 2**mesh.dim
    np.add.at(out, mesh.element_nodes.ravel(), np.repeat(share, 2**mesh.dim))
    return out


def voigt_reuss_bounds(cell_coeff) -> tuple[float, float]:
    """(harmonic mean, arithmetic mean) of the cell coefficient."""
    a = np.asarray(cell_coeff.values if isinstance(cell_coeff, Coefficient) else cell_coeff)
    return float(1.0 / np.mean(1.0 / a)), float(np.mean(a))


def homogenized_reference(
    ahat,
    f: fem.Field,
    u0: fem.Field,
    v0: fem.Field,
    mesh: TensorMesh,
    tau: float,
    T: float,
    scheme: str = "midpoint",
    observer=None,
) -> TrajectoryRecorder:
    """Time-stepped solution of the homogenized wave equation on ``mesh``."""
    entries = ahat.entries if isinstance(ahat, HomogenizedTensor) else np.atleast_2d(ahat)
    if np.any(np.linalg.eigvalsh(0.5 * (entries + entries.T)) <= 0):
        raise ValueError("homogenized tensor must be positive definite")
    coeff = float(entries[0, 0]) if mesh.dim == 1 else entries
    S = fem.assemble_stiffness(mesh, coeff)
    M = fem.assemble_mass(mesh)
    F = fem.assemble_load(mesh, f)
    load = None if f.is_zero else (lambda t: F)
    rec = TrajectoryRecorder()
    simulate(M, S, load, fem.interpolate_field(mesh, u0), fem.interpolate_field(mesh, v0),
             tau, T, scheme=scheme, observer=chain(rec, observer))
    return rec
