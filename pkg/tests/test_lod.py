import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from hcwave import fem
from hcwave.coefficients import periodic_inclusion, random_checkerboard
from hcwave.interpolation import build_interpolation, prolongation
from hcwave.lod import (
    assemble_lod,
    corrector_column,
    element_corrector,
    elliptic_projection,
    l2_projection,
    reconstruct,
    simulate_lod,
    truncation_error_curve,
)
from hcwave.mesh import build_mesh, build_patch
from hcwave.timestep import EnergyRecorder


def _setup(dim=1, nc=4, nf=32, eps=None, a0=2**-6, seed=None, weighted=False):
    coarse, fine = build_mesh(dim, nc), build_mesh(dim, nf)
    eps = eps or 4.0 / nf * 2
    c = random_checkerboard(fine, eps, a0, seed) if seed is not None else periodic_inclusion(fine, eps, a0)
    I = build_interpolation(coarse, fine, c, weighted=weighted)
    return coarse, fine, c, I, fem.assemble_stiffness(fine, c), fem.assemble_mass(fine)


def _global_corrector_dense(coarse, fine, A, I):
    N = scipy.linalg.null_space(I.matrix.toarray())
    Ad = A.toarray()
    P = prolongation(coarse, fine).toarray()
    return -N @ np.linalg.solve(N.T @ Ad @ N, N.T @ Ad @ P)


@pytest.mark.parametrize("dim,nc,nf", [(1, 4, 32), (2, 2, 16)])
@pytest.mark.parametrize("weighted", [False, True])
def test_saturated_corrector_matches_dense_oracle(dim, nc, nf, weighted):
    coarse, fine, c, I, A, M = _setup(dim, nc, nf, eps=0.25 if dim == 2 else None, weighted=weighted)
    ops = assemble_lod(coarse, fine, c, coarse.n, I, A_fine=A, M_fine=M)
    Q_ref = _global_corrector_dense(coarse, fine, A, I)
    assert np.max(np.abs(ops.Q.toarray() - Q_ref)) <= 1e-8 * np.max(np.abs(Q_ref))


def test_saturated_orthogonality_on_random_kernel_vectors():
    coarse, fine, c, I, A, M = _setup()
    ops = assemble_lod(coarse, fine, c, coarse.n, I, A_fine=A, M_fine=M)
    N = scipy.linalg.null_space(I.matrix.toarray())
    W = N @ np.random.default_rng(0).standard_normal((N.shape[1], 20))
    R = W.T @ (A @ ops.basis.toarray())
    assert np.max(np.abs(R)) <= 1e-9 * np.max(np.abs(A.toarray()))


def test_element_corrector_patch_orthogonality():
    coarse, fine, c, I, A, M = _setup(1, 8, 64)
    ec = element_corrector(coarse, fine, 3, 1, c, I, A)
    C = ec.constraints.toarray()
    N = scipy.linalg.null_space(C)
    W = N @ np.random.default_rng(1).standard_normal((N.shape[1], 20))
    res = W.T @ (ec.A_patch @ ec.values - ec.rhs)
    assert np.max(np.abs(res)) <= 1e-9 * max(1.0, np.max(np.abs(ec.rhs)))
    assert np.max(np.abs(C @ ec.values)) <= 1e-10 * np.max(np.abs(ec.values))
    # linear in the input: the zero coarse function gets the zero corrector
    assert np.all(ec.values @ np.zeros(len(ec.coarse_dofs)) == 0)


def test_corrector_locality():
    coarse, fine, c, I, A, M = _setup(1, 8, 64)
    ops = assemble_lod(coarse, fine, c, 1, I, A_fine=A, M_fine=M)
    Q = ops.Q.toarray()
    x = fine.node_coords[fine.interior_nodes, 0]
    for z in range(coarse.num_interior):
        node = z + 1  # interior coarse node index in 1D
        # union of U_1(K) for the two elements at node: (node-2, node+2) * H
        outside = (x <= (node - 2) * coarse.h) | (x >= (node + 2) * coarse.h)
        assert np.all(Q[outside, z] == 0)


def test_equal_meshes_give_fine_operators():
    fine = build_mesh(1, 32)
    c = periodic_inclusion(fine, 2**-2, 2**-4)
    A, M = fem.assemble_stiffness(fine, c), fem.assemble_mass(fine)
    ops = assemble_lod(fine, fine, c, 1, A_fine=A, M_fine=M)
    assert ops.Q.nnz == 0 or abs(ops.Q).max() < 1e-14
    assert abs(ops.S - A).max() < 1e-13 and abs(ops.M - M).max() < 1e-15


@pytest.mark.parametrize("formulation", ["galerkin", "petrov_galerkin"])
def test_structure(formulation):
    coarse, fine, c, I, A, M = _setup(2, 4, 16, eps=0.25, seed=2)
    ops = assemble_lod(coarse, fine, c, 1, I, formulation, A_fine=A, M_fine=M)
    assert np.max(np.abs(I @ ops.Q.toarray())) <= 1e-10 * np.max(np.abs(ops.Q.toarray()))
    Sd, Md = ops.S.toarray(), ops.M.toarray()
    if formulation == "galerkin":
        assert np.max(np.abs(Sd - Sd.T)) <= 1e-12 * np.max(np.abs(Sd))
        assert np.max(np.abs(Md - Md.T)) <= 1e-12 * np.max(np.abs(Md))
        assert np.linalg.eigvalsh(Md).min() > 0 and np.linalg.eigvalsh(Sd).min() > 0
        assert ops.test_basis is not ops.P
    else:
        assert ops.test_basis is ops.P


def test_constant_coefficient_galerkin_symmetric():
    coarse, fine = build_mesh(1, 4), build_mesh(1, 32)
    ops = assemble_lod(coarse, fine, 1.0, 2)
    S = ops.S.toarray()
    assert np.max(np.abs(S - S.T)) <= 1e-12 * np.max(np.abs(S))
    with pytest.raises(ValueError):
        assemble_lod(coarse, fine, 1.0, 2, formulation="other")


def test_projections_and_reconstruction():
    coarse, fine, c, I, A, M = _setup(1, 8, 64, seed=5)
    ops = assemble_lod(coarse, fine, c, 2, I, A_fine=A, M_fine=M)
    B = ops.basis
    rng = np.random.default_rng(3)
    zc = rng.standard_normal(coarse.num_interior)
    assert np.all(elliptic_projection(np.zeros(fine.num_interior), ops, A) == 0)
    assert np.all(l2_projection(np.zeros(fine.num_interior), ops, M) == 0)
    assert np.allclose(elliptic_projection(B @ zc, ops, A), zc, atol=1e-10)
    assert np.allclose(l2_projection(B @ zc, ops, M), zc, atol=1e-10)
    u = rng.standard_normal(fine.num_interior)
    z = elliptic_projection(u, ops, A)
    assert np.max(np.abs(B.T @ (A @ (u - B @ z)))) <= 1e-9 * max(1.0, np.max(np.abs(B.T @ (A @ u))))
    z2 = l2_projection(u, ops, M)
    assert np.max(np.abs(B.T @ (M @ (u - B @ z2)))) <= 1e-9
    assert np.all(reconstruct(np.zeros(coarse.num_interior), ops) == 0)
    e = np.zeros(coarse.num_interior)
    e[3] = 1.0
    assert np.allclose(reconstruct(e, ops), (ops.P + ops.Q)[:, 3].toarray().ravel())
    assert np.allclose(I @ reconstruct(zc, ops), zc, atol=1e-10)


def test_truncation_curve():
    coarse, fine, c, I, A, M = _setup(1, 16, 256, eps=2**-6, a0=2**-12)
    curve = truncation_error_curve(coarse, fine, c, I, [1, 2, 3, 4, 5, 6, 16], A_fine=A)
    assert curve[-1] <= 1e-9
    assert np.all(curve[1:6] <= 1.05 * curve[:5])
    gamma = np.exp(np.polyfit(np.arange(1, 7), np.log(curve[:6]), 1)[0])
    assert gamma < 1
    col = corrector_column(coarse, fine, c, I, 16, 7, A)
    ops = assemble_lod(coarse, fine, c, 16, I, A_fine=A, M_fine=M)
    assert np.allclose(col, ops.Q[:, 7].toarray().ravel(), atol=1e-12)


@pytest.mark.parametrize("dim", [1, 2])
def test_energy_conserved_for_free_lod_waves(dim):
    coarse, fine, c, I, A, M = _setup(dim, 4, 16 if dim == 2 else 64, eps=0.25 if dim == 2 else None)
    ops = assemble_lod(coarse, fine, c, 2, I, A_fine=A, M_fine=M)
    rec = EnergyRecorder(ops.M, ops.S)
    g = fem.interpolate_field(fine, fem.make_field("gaussian", center=0.5, sigma=0.2))
    simulate_lod(ops, A, M, None, g, g, 2.0**-6, 0.25, observer=rec)
    assert rec.max_relative_drift() <= 1e-10
    with pytest.raises(ValueError):
        simulate_lod(ops, A, M, None, g, g, 2.0**-6, 0.25, v0_projection="cubic")


def test_dump(tmp_path):
    coarse, fine, c, I, A, M = _setup()
    ops = assemble_lod(coarse, fine, c, 1, I, A_fine=A, M_fine=M)
    ops.dump(tmp_path)
    lines = (tmp_path / "S.csv").read_text().splitlines()
    assert lines[0] == "row,col,value" and len(lines) == ops.S.nnz + 1


def test_threads_give_same_result():
    coarse, fine, c, I, A, M = _setup(2, 4, 16, eps=0.25, seed=3)
    a = assemble_lod(coarse, fine, c, 1, I, A_fine=A, M_fine=M)
    b = assemble_lod(coarse, fine, c, 1, I, A_fine=A, M_fine=M, threads=4)
    assert abs(a.Q - b.Q).max() == 0


@settings(max_examples=100, deadline=None)
@given(dim=st.sampled_from([1, 2]), seed=st.integers(0, 2**32 - 1), m=st.integers(1, 2),
       weighted=st.booleans(), data=st.data())
def test_lod_invariants_random(dim, seed, m, weighted, data):
    nf = data.draw(st.sampled_from([32, 64] if dim == 1 else [8, 16]))
    nc = data.draw(st.sampled_from([2, 4]))
    coarse, fine = build_mesh(dim, nc), build_mesh(dim, nf)
    c = random_checkerboard(fine, 1.0 / nc, 10.0 ** -data.draw(st.integers(1, 4)), seed)
    I = build_interpolation(coarse, fine, c, weighted=weighted)
    A, M = fem.assemble_stiffness(fine, c), fem.assemble_mass(fine)
    ops = assemble_lod(coarse, fine, c, m, I, A_fine=A, M_fine=M)
    Q = ops.Q.toarray()
    assert np.max(np.abs(I @ Q)) <= 1e-10 * max(np.max(np.abs(Q)), 1e-300)
    Sd, Md = ops.S.toarray(), ops.M.toarray()
    assert np.max(np.abs(Sd - Sd.T)) <= 1e-11 * np.max(np.abs(Sd))
    assert np.linalg.eigvalsh(0.5 * (Md + Md.T)).min() > 0
    assert np.linalg.eigvalsh(0.5 * (Sd + Sd.T)).min() > 0
