"""Localized Orthogonal Decomposition for the wave equation.

Each coarse element K contributes corrector columns computed on the patch
U_m(K): find q in ker(I_H) supported in the patch with

    (a grad q, grad w)_{U_m(K)} = -(a grad phi_z, grad w)_K   for w in the same space,

solved as a KKT system with the interpolation rows as constraints. The
corrected basis P + Q then yields the coarse stiffness and mass matrices.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from . import fem
from .interpolation import InterpolationMatrix, build_interpolation, kernel_constraint_rows, prolongation
from .linalg import ConstrainedSolver, Factorization, as_csr, is_symmetric
from .mesh import Patch, TensorMesh, build_patch, refinement_map
from .timestep import Stepper, TrajectoryRecorder, chain, simulate

FORMULATIONS = ("galerkin", "petrov_galerkin")


@lru_cache(maxsize=16)
def _full_prolongation(coarse: TensorMesh, fine: TensorMesh) -> sparse.csc_matrix:
    return sparse.csc_matrix(prolongation(coarse, fine, full=True))


@lru_cache(maxsize=16)
def _refinement(coarse: TensorMesh, fine: TensorMesh) -> np.ndarray:
    return refinement_map(coarse, fine)


@dataclass(frozen=True, eq=False)
class ElementCorrector:
    """Corrector columns of one coarse element, stored on its patch dofs."""

    patch: Patch
    coarse_dofs: np.ndarray  # interior coarse dofs that are vertices of K
    values: np.ndarray  # (len(patch.fine_dofs), len(coarse_dofs))
    rhs: np.ndarray
    constraints: sparse.csr_matrix
    A_patch: sparse.csr_matrix

    def triplets(self):
        dofs = self.patch.fine_dofs
        rows = np.repeat(dofs, len(self.coarse_dofs))
        cols = np.tile(self.coarse_dofs, len(dofs))
        return rows, cols, self.values.ravel()


def element_corrector(
    coarse: TensorMesh,
    fine: TensorMesh,
    K: int,
    m: int,
    coeff,
    I: InterpolationMatrix,
    A_fine=None,
) -> ElementCorrector:
    patch = build_patch(coarse, K, m, fine)
    dofs = patch.fine_dofs
    cdofs = coarse.node_to_dof[coarse.element_nodes[K]]
    cdofs = cdofs[cdofs >= 0]
    if A_fine is None:
        A_fine = fem.assemble_stiffness(fine, coeff)
    A_patch = as_csr(A_fine[dofs][:, dofs])

    P_full = _full_prolongation(coarse, fine)
    fel = _refinement(coarse, fine)[K]
    fine_nodes = fine.interior_nodes[dofs]
    rhs = np.empty((len(dofs), len(cdofs)))
    for j, zd in enumerate(cdofs):
        phi = P_full[:, coarse.interior_nodes[zd]].toarray().ravel()
        rhs[:, j] = -fem.element_stiffness_action(fine, coeff, fel, phi)[fine_nodes]

    if len(dofs) == 0 or len(cdofs) == 0:
        empty = sparse.csr_matrix((0, len(dofs)))
        return ElementCorrector(patch, cdofs, np.zeros((len(dofs), len(cdofs))), rhs, empty, A_patch)

    C, _ = kernel_constraint_rows(I, patch)
    if C.shape[0] == 0:
        raise ValueError(f"no interpolation constraints meet the patch of element {K}")
    values = ConstrainedSolver(A_patch, C).solve(rhs)
    return ElementCorrector(patch, cdofs, values.reshape(len(dofs), len(cdofs)), rhs, C, A_patch)


@dataclass(frozen=True, eq=False)
class LodOperators:
    P: sparse.csr_matrix
    Q: sparse.csr_matrix
    S: sparse.csr_matrix
    M: sparse.csr_matrix
    m: int
    formulation: str
    coarse: TensorMesh
    fine: TensorMesh

    @property
    def basis(self) -> sparse.csr_matrix:
        return as_csr(self.P + self.Q)

    @property
    def test_basis(self) -> sparse.csr_matrix:
        return self.basis if self.formulation == "galerkin" else self.P

    def load(self, F_fine) -> np.ndarray:
        """Coarse load from a fine load vector (tested with the test basis)."""
        return self.test_basis.T @ F_fine

    def dump(self, directory) -> None:
        """Write Q, S and M as (row, col, value) CSV triplets."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, mat in (("Q", self.Q), ("S", self.S), ("M", self.M)):
            coo = mat.tocoo()
            with open(directory / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["row", "col", "value"])
                for r, c, v in zip(coo.row, coo.col, coo.data):
                    w.writerow([int(r), int(c), repr(float(v))])


def corrector_matrix(
    coarse: TensorMesh,
    fine: TensorMesh,
    coeff,
    m: int,
    I: InterpolationMatrix,
    A_fine=None,
    threads: int = 1,
) -> sparse.csr_matrix:
    """Q with column z equal to the sum of element correctors of phi_z."""
    if A_fine is None:
        A_fine = fem.assemble_stiffness(fine, coeff)

    def one(K):
        return element_corrector(coarse, fine, K, m, coeff, I, A_fine).triplets()

    elements = range(coarse.num_elements)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, elements))
    else:
        parts = [one(K) for K in elements]
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    Q = sparse.coo_matrix((vals, (rows, cols)), shape=(fine.num_interior, coarse.num_interior))
    return as_csr(Q)


def assemble_lod(
    coarse: TensorMesh,
    fine: TensorMesh,
    coeff,
    m: int,
    I: InterpolationMatrix | None = None,
    formulation: str = "galerkin",
    weighted: bool = False,
    A_fine=None,
    M_fine=None,
    threads: int = 1,
) -> LodOperators:
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}; expected one of {FORMULATIONS}")
    if I is None:
        I = build_interpolation(coarse, fine, coeff, weighted=weighted)
    if A_fine is None:
        A_fine = fem.assemble_stiffness(fine, coeff)
    if M_fine is None:
        M_fine = fem.assemble_mass(fine)
    P = prolongation(coarse, fine)
    Q = corrector_matrix(coarse, fine, coeff, m, I, A_fine, threads)
    B = as_csr(P + Q)
    T = B if formulation == "galerkin" else P
    S = as_csr(T.T @ A_fine @ B)
    M = as_csr(T.T @ M_fine @ B)
    if formulation == "galerkin":
        # congruence transforms are symmetric; remove the product roundoff
        S, M = as_csr((S + S.T) * 0.5), as_csr((M + M.T) * 0.5)
    return LodOperators(P, Q, S, M, int(m), formulation, coarse, fine)


def _solve(A, b) -> np.ndarray:
    if is_symmetric(A, rtol=1e-12):
        return Factorization(A, check=False).solve(b)
    return spla.spsolve(sparse.csc_matrix(A), b)


def elliptic_projection(u0_fine, ops: LodOperators, A_fine) -> np.ndarray:
    """Coarse coefficients of the energy projection of u0 onto the multiscale space."""
    return _solve(ops.S, ops.test_basis.T @ (A_fine @ np.asarray(u0_fine, dtype=float)))


def l2_projection(v0_fine, ops: LodOperators, M_fine) -> np.ndarray:
    """Coarse coefficients of the L2 projection of v0 onto the multiscale space."""
    return _solve(ops.M, ops.test_basis.T @ (M_fine @ np.asarray(v0_fine, dtype=float)))


def reconstruct(zeta, ops: LodOperators) -> np.ndarray:
    return ops.basis @ np.asarray(zeta, dtype=float)


def simulate_lod(
    ops: LodOperators,
    A_fine,
    M_fine,
    fine_load,
    u0_fine,
    v0_fine,
    tau: float,
    T: float,
    scheme: str = "midpoint",
    v0_projection: str = "elliptic",
    observer=None,
) -> TrajectoryRecorder:
    """Project the initial data, then step the coarse corrected system.

    ``fine_load`` maps t to the fine load vector (or is None for f = 0).
    The observer receives coarse states.
    """
    zeta0 = elliptic_projection(u0_fine, ops, A_fine)
    if v0_projection == "elliptic":
        eta0 = elliptic_projection(v0_fine, ops, A_fine)
    elif v0_projection == "l2":
        eta0 = l2_projection(v0_fine, ops, M_fine)
    else:
        raise ValueError(f"unknown v0 projection {v0_projection!r}")
    load = None if fine_load is None else (lambda t: ops.load(fine_load(t)))
    rec = TrajectoryRecorder()
    stepper = Stepper(ops.M, ops.S, tau)
    simulate(ops.M, ops.S, load, zeta0, eta0, tau, T, scheme, chain(rec, observer), stepper=stepper)
    return rec


def corrector_column(
    coarse: TensorMesh, fine: TensorMesh, coeff, I: InterpolationMatrix, m: int, z: int, A_fine
) -> np.ndarray:
    """Column z of Q for localization m (only elements touching z are solved)."""
    node = coarse.interior_nodes[z]
    col = np.zeros(fine.num_interior)
    for K in np.flatnonzero(np.any(coarse.element_nodes == node, axis=1)):
        ec = element_corrector(coarse, fine, int(K), m, coeff, I, A_fine)
        j = int(np.flatnonzero(ec.coarse_dofs == z)[0])
        col[ec.patch.fine_dofs] += ec.values[:, j]
    return col


def truncation_error_curve(
    coarse: TensorMesh,
    fine: TensorMesh,
    coeff,
    I: InterpolationMatrix,
    m_list,
    z: int | None = None,
    A_fine=None,
) -> np.ndarray:
    """Energy norms of (C_m - C_Omega) phi_z for each m in m_list.

    ``z`` defaults to the coarse dof nearest the domain center.
    """
    if A_fine is None:
        A_fine = fem.assemble_stiffness(fine, coeff)
    if z is None:
        center = np.full(coarse.dim, coarse.n // 2)
        z = int(coarse.node_to_dof[coarse.node_index(center)])
    ref = corrector_column(coarse, fine, coeff, I, coarse.n, z, A_fine)
    out = []
    for m in m_list:
        d = corrector_column(coarse, fine, coeff, I, int(m), z, A_fine) - ref
        out.append(fem.norm_energy(d, A_fine))
    return np.asarray(out)
