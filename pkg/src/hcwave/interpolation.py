"""Quasi-interpolation I_H = E_H o Pi_H from the fine to the coarse Q1 space.

Pi_H is the elementwise (optionally coefficient-weighted) L2 projection onto
Q1 on each coarse element; E_H averages the resulting discontinuous values at
every coarse vertex. The operator is materialized once as a sparse matrix
with rows on coarse interior nodes and columns on fine interior nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sparse

from . import fem
from .coefficients import Coefficient
from .linalg import as_csr
from .mesh import Patch, TensorMesh, coarse_element_fine_nodes, refinement_map, refinement_ratio


def prolongation_1d(nc: int, r: int) -> sparse.csr_matrix:
    """Full-node 1D Q1 prolongation, fine nodes x coarse nodes."""
    nf = nc * r
    i = np.arange(nf + 1)
    q, s = np.divmod(i, r)
    w = s / r
    rows = np.concatenate([i, i[s > 0]])
    cols = np.concatenate([q, q[s > 0] + 1])
    vals = np.concatenate([1.0 - w, w[s > 0]])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(nf + 1, nc + 1))


def prolongation(coarse: TensorMesh, fine: TensorMesh, full: bool = False) -> sparse.csr_matrix:
    """Coarse hat functions evaluated at fine nodes (fine dofs x coarse dofs)."""
    r = refinement_ratio(coarse, fine)
    P1 = prolongation_1d(coarse.n, r)
    P = P1 if coarse.dim == 1 else sparse.kron(P1, P1)
    P = as_csr(P)
    if full:
        return P
    return as_csr(P[fine.interior_nodes][:, coarse.interior_nodes])


def _coarse_basis_on_element(r: int, dim: int) -> np.ndarray:
    """Values of the 2^d coarse shape functions at the (r+1)^d fine nodes of K."""
    sub = TensorMesh(dim, r)
    xi = sub.node_coords
    vals, _ = fem.reference_basis(dim, xi)
    return vals


def _local_fine_mass(r: int, dim: int, h: float, weights: np.ndarray) -> np.ndarray:
    sub = TensorMesh(dim, r)
    local = fem.local_mass(dim, h)
    M = np.zeros((sub.num_nodes, sub.num_nodes))
    en = sub.element_nodes
    np.add.at(M, (en[:, :, None], en[:, None, :]), weights[:, None, None] * local)
    return M


def _element_weights(fine: TensorMesh, coeff) -> np.ndarray:
    if coeff is None:
        return np.ones(fine.num_elements)
    return fem._element_values(fine, coeff)


def elementwise_projection_matrix(
    coarse: TensorMesh, fine: TensorMesh, K: int, weight=None
) -> np.ndarray:
    """(2^d, (r+1)^d) map from fine nodal values on closed K to the Q1 values
    of the (weighted) L2 projection at K's vertices."""
    r = refinement_ratio(coarse, fine)
    fel = refinement_map(coarse, fine)[K]
    w = _element_weights(fine, weight)[fel]
    Mk = _local_fine_mass(r, coarse.dim, fine.h, w)
    Psi = _coarse_basis_on_element(r, coarse.dim)
    G = Psi.T @ Mk @ Psi
    B = Psi.T @ Mk
    assert np.all(np.linalg.eigvalsh(G) > 0), "singular local Gram matrix"
    return scipy.linalg.solve(G, B, assume_a="pos")


def elementwise_projection(coarse: TensorMesh, fine: TensorMesh, K: int, v_full, weight=None):
    """Vertex values of Pi_H(v) on K for a full fine nodal vector v."""
    nodes = coarse_element_fine_nodes(coarse, fine, K)
    return elementwise_projection_matrix(coarse, fine, K, weight) @ np.asarray(v_full)[nodes]


def averaging(coarse: TensorMesh, element_values) -> np.ndarray:
    """E_H: vertex-wise mean of elementwise Q1 data, on coarse interior nodes.

    ``element_values`` has shape (elements, 2^d) in local vertex order.
    """
    element_values = np.asarray(element_values, dtype=float)
    en = coarse.element_nodes
    total = np.zeros(coarse.num_nodes)
    count = np.zeros(coarse.num_nodes)
    np.add.at(total, en.ravel(), element_values.ravel())
    np.add.at(count, en.ravel(), 1.0)
    return (total / count)[coarse.interior_nodes]


@dataclass(frozen=True, eq=False)
class InterpolationMatrix:
    matrix: sparse.csr_matrix
    coarse: TensorMesh
    fine: TensorMesh
    weighted: bool
    coeff: Coefficient | None = None

    def __matmul__(self, other):
        return self.matrix @ other

    @property
    def shape(self):
        return self.matrix.shape


def build_interpolation(
    coarse: TensorMesh, fine: TensorMesh, coeff=None, weighted: bool = False
) -> InterpolationMatrix:
    """Assemble E_H o Pi_H (or E_H o Pi_{H,a} when ``weighted``)."""
    if weighted and coeff is None:
        raise ValueError("weighted interpolation needs a coefficient")
    weight = coeff if weighted else None
    count = np.zeros(coarse.num_nodes)
    np.add.at(count, coarse.element_nodes.ravel(), 1.0)

    rows, cols, vals = [], [], []
    shared = None if weighted else elementwise_projection_matrix(coarse, fine, 0, None)
    for K in range(coarse.num_elements):
        PK = shared if shared is not None else elementwise_projection_matrix(coarse, fine, K, weight)
        cnodes = coarse.element_nodes[K]
        fnodes = coarse_element_fine_nodes(coarse, fine, K)
        rows.append(np.repeat(cnodes, len(fnodes)))
        cols.append(np.tile(fnodes, len(cnodes)))
        vals.append((PK / count[cnodes][:, None]).ravel())
    I = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(coarse.num_nodes, fine.num_nodes),
    )
    I = as_csr(I)[coarse.interior_nodes][:, fine.interior_nodes]
    I = as_csr(I)
    I.eliminate_zeros()
    return InterpolationMatrix(I, coarse, fine, weighted, coeff if weighted else None)


_ROW_TOL = 1e-12


def kernel_constraint_rows(I: InterpolationMatrix, patch: Patch):
    """Rows of I restricted to the patch's fine dofs, keeping nonzero rows.

    Entries below 1e-12 times the largest entry of I count as zero.

    Returns (C, coarse_rows) where coarse_rows are the coarse interior dof
    indices of the kept rows.
    """
    if patch.fine_dofs is None or len(patch.fine_dofs) == 0:
        raise ValueError("patch has no fine dofs")
    C = as_csr(I.matrix[:, patch.fine_dofs])
    # rows touching the patch only through roundoff are treated as zero
    tol = _ROW_TOL * abs(I.matrix).max()
    C.data[np.abs(C.data) <= tol] = 0.0
    C.eliminate_zeros()
    keep = np.flatnonzero(np.diff(C.indptr) > 0)
    return as_csr(C[keep]), keep


def stability_constant(I: InterpolationMatrix, P, A_fine, samples: int = 50, seed: int = 0) -> float:
    """Largest observed ratio ||sqrt(a) grad I_H v|| / ||sqrt(a) grad v|| over random v."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        v = rng.standard_normal(I.shape[1])
        Iv = P @ (I.matrix @ v)
        num = np.sqrt(max(Iv @ (A_fine @ Iv), 0.0))
        den = np.sqrt(max(v @ (A_fine @ v), 0.0))
        if den > 0:
            worst = max(worst, num / den)
    return worst


def weighted_poincare_constant(A_fine, M_fine) -> float:
    """1/sqrt(lambda_min) for A v = lambda M v (dense; small meshes only)."""
    lam = scipy.linalg.eigh(A_fine.toarray(), M_fine.toarray(), eigvals_only=True, subset_by_index=[0, 0])
    return float(1.0 / np.sqrt(lam[0]))
