"""Q1 finite elements on tensor meshes with piecewise-constant coefficients.

All systems live on interior nodes (homogeneous Dirichlet data eliminated).
Element integrals use the 2-point Gauss rule per axis, which is exact for
every Q1 x Q1 integrand with an elementwise-constant coefficient.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sparse

from .coefficients import Coefficient
from .linalg import as_csr
from .mesh import TensorMesh, _local_offsets

_G = 0.5 / np.sqrt(3.0)
GAUSS_POINTS = np.array([0.5 - _G, 0.5 + _G])
GAUSS_WEIGHTS = np.array([0.5, 0.5])


def _quadrature(dim: int):
    """Tensor Gauss points on the reference cell [0,1]^dim, axis 0 fastest."""
    if dim == 1:
        return GAUSS_POINTS[:, None], GAUSS_WEIGHTS.copy()
    q0, q1 = np.meshgrid(GAUSS_POINTS, GAUSS_POINTS, indexing="xy")
    w0, w1 = np.meshgrid(GAUSS_WEIGHTS, GAUSS_WEIGHTS, indexing="xy")
    return np.stack([q0.ravel(), q1.ravel()], axis=-1), (w0 * w1).ravel()


def reference_basis(dim: int, xi: np.ndarray):
    """Q1 shape values (npts, 2^d) and gradients (npts, 2^d, d) on [0,1]^d."""
    offsets = _local_offsets(dim)
    xi = np.atleast_2d(xi)
    f = np.where(offsets[None, :, :] == 1, xi[:, None, :], 1.0 - xi[:, None, :])
    df = np.where(offsets == 1, 1.0, -1.0)
    values = np.prod(f, axis=2)
    grads = np.empty(values.shape + (dim,))
    for i in range(dim):
        g = np.broadcast_to(df[None, :, i], values.shape).copy()
        for j in range(dim):
            if j != i:
                g = g * f[:, :, j]
        grads[:, :, i] = g
    return values, grads


def local_stiffness(dim: int, h: float, tensor=None) -> np.ndarray:
    """Element stiffness for a constant scalar 1 or a constant (d, d) tensor."""
    pts, wts = _quadrature(dim)
    _, grads = reference_basis(dim, pts)
    A = np.eye(dim) if tensor is None else np.asarray(tensor, dtype=float).reshape(dim, dim)
    K = np.einsum("q,qai,ij,qbj->ab", wts, grads, A, grads)
    return K * h ** (dim - 2)


def local_mass(dim: int, h: float) -> np.ndarray:
    pts, wts = _quadrature(dim)
    vals, _ = reference_basis(dim, pts)
    return np.einsum("q,qa,qb->ab", wts, vals, vals) * h**dim


def _element_values(mesh: TensorMesh, coeff) -> np.ndarray:
    if coeff is None:
        return np.ones(mesh.num_elements)
    if isinstance(coeff, Coefficient):
        vals = coeff.values
    else:
        vals = np.asarray(coeff, dtype=float)
        if vals.ndim == 0:
            return np.full(mesh.num_elements, float(vals))
    if vals.shape != (mesh.num_elements,):
        raise ValueError(f"coefficient has {vals.shape} values, mesh has {mesh.num_elements} elements")
    return vals


def _is_tensor(coeff, dim) -> bool:
    if coeff is None or isinstance(coeff, Coefficient):
        return False
    arr = np.asarray(coeff)
    return arr.shape == (dim, dim) and dim > 1


def _assemble(mesh: TensorMesh, local: np.ndarray, scale: np.ndarray, full: bool):
    en = mesh.element_nodes
    nloc = en.shape[1]
    rows = np.repeat(en, nloc, axis=1).ravel()
    cols = np.tile(en, (1, nloc)).ravel()
    data = (scale[:, None, None] * local[None, :, :]).ravel()
    A = sparse.coo_matrix((data, (rows, cols)), shape=(mesh.num_nodes,) * 2)
    A = as_csr(A)
    if full:
        return A
    idx = mesh.interior_nodes
    return as_csr(A[idx][:, idx])


def assemble_stiffness(mesh: TensorMesh, coeff=None, full: bool = False) -> sparse.csr_matrix:
    """Stiffness matrix of (a grad u, grad v).

    ``coeff`` is a Coefficient, per-element array, scalar, or (in 2D) a
    constant (d, d) tensor. ``full=True`` keeps boundary nodes.
    """
    if _is_tensor(coeff, mesh.dim):
        local = local_stiffness(mesh.dim, mesh.h, tensor=coeff)
        return _assemble(mesh, local, np.ones(mesh.num_elements), full)
    local = local_stiffness(mesh.dim, mesh.h)
    return _assemble(mesh, local, _element_values(mesh, coeff), full)


def assemble_mass(mesh: TensorMesh, weight=None, full: bool = False) -> sparse.csr_matrix:
    """Consistent mass matrix, optionally weighted elementwise."""
    local = local_mass(mesh.dim, mesh.h)
    return _assemble(mesh, local, _element_values(mesh, weight), full)


def element_stiffness_action(mesh: TensorMesh, coeff, elements, v_full) -> np.ndarray:
    """sum over the given elements of A_T v, as a full nodal vector."""
    elements = np.asarray(elements)
    vals = _element_values(mesh, coeff)[elements]
    local = local_stiffness(mesh.dim, mesh.h)
    en = mesh.element_nodes[elements]
    contrib = vals[:, None] * (v_full[en] @ local.T)
    out = np.zeros(mesh.num_nodes)
    np.add.at(out, en.ravel(), contrib.ravel())
    return out


@dataclass(frozen=True, eq=False)
class Field:
    """A scalar function on the closed domain, identified by name and parameters.

    gaussian: exp(-sum (x_i - c)^2 / sigma^2); poly_bubble: prod x_i (x_i - 1);
    sine: prod sin(pi x_i); box_indicator: ``inside`` on the open box
    (lo, hi)^d, ``outside`` elsewhere; combination: sum of c_k * field_k.
    """

    name: str
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.params
        if self.name == "zero":
            return np.zeros(len(x))
        if self.name == "constant":
            return np.full(len(x), float(p.get("value", 1.0)))
        if self.name == "gaussian":
            c, s = float(p.get("center", 0.5)), float(p.get("sigma", 0.1))
            return np.exp(-np.sum((x - c) ** 2, axis=1) / s**2)
        if self.name == "poly_bubble":
            return np.prod(x * (x - 1.0), axis=1)
        if self.name == "sine":
            return np.prod(np.sin(np.pi * x), axis=1)
        if self.name == "box_indicator":
            lo, hi = float(p.get("lo", 0.25)), float(p.get("hi", 0.75))
            inside = np.all((x > lo) & (x < hi), axis=1)
            return np.where(inside, float(p.get("inside", 1.0)), float(p.get("outside", 0.0)))
        if self.name == "combination":
            out = np.zeros(len(x))
            for c, f in p["terms"]:
                out = out + c * f(x)
            return out
        raise ValueError(f"unknown field {self.name!r}")

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


FIELD_NAMES = ("zero", "constant", "gaussian", "poly_bubble", "sine", "box_indicator")


def make_field(name: str, **params) -> Field:
    if name not in FIELD_NAMES:
        raise ValueError(f"unknown field {name!r}; expected one of {FIELD_NAMES}")
    return Field(name, dict(params))


def combination(terms) -> Field:
    return Field("combination", {"terms": tuple((float(c), f) for c, f in terms)})


def interpolate_field(mesh: TensorMesh, f: Field) -> np.ndarray:
    """Nodal values at interior nodes."""
    return f(mesh.node_coords[mesh.interior_nodes])


def assemble_load(mesh: TensorMesh, f: Field, time_scale: float = 1.0) -> np.ndarray:
    """Load vector (time_scale * f, phi_i) on interior dofs."""
    if f.is_zero or time_scale == 0:
        return np.zeros(mesh.num_interior)
    pts, wts = _quadrature(mesh.dim)
    vals, _ = reference_basis(mesh.dim, pts)
    emulti = mesh.element_multi(np.arange(mesh.num_elements))
    x = (emulti[:, None, :] + pts[None, :, :]) * mesh.h
    fq = f(x.reshape(-1, mesh.dim)).reshape(mesh.num_elements, len(wts))
    contrib = (fq * wts) @ vals * mesh.h**mesh.dim
    out = np.zeros(mesh.num_nodes)
    np.add.at(out, mesh.element_nodes.ravel(), contrib.ravel())
    return time_scale * out[mesh.interior_nodes]


def _quadratic_form(v, A, what: str) -> float:
    v = np.asarray(v, dtype=float)
    q = float(v @ (A @ v))
    scale = float(np.abs(v) @ (abs(A) @ np.abs(v)))
    if q < -1e-14 * max(scale, 1e-300):
        raise ValueError(f"negative {what} quadratic form {q:.3e}: matrix not symmetric PSD")
    return max(q, 0.0)


def norm_l2(v, M) -> float:
    return float(np.sqrt(_quadratic_form(v, M, "mass")))


def norm_energy(v, A) -> float:
    return float(np.sqrt(_quadratic_form(v, A, "energy")))


def full_vector(mesh: TensorMesh, dofs) -> np.ndarray:
    out = np.zeros(mesh.num_nodes)
    out[mesh.interior_nodes] = dofs
    return out


def dump_field(mesh: TensorMesh, dofs, path, name: str = "value", header: str | None = None) -> None:
    """CSV with node_index, coordinates and the nodal value (boundary zeros included)."""
    values = full_vector(mesh, dofs)
    coords = mesh.node_coords
    cols = ["node_index", "x"] + (["y"] if mesh.dim == 2 else []) + [name]
    with open(Path(path), "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(mesh.num_nodes):
            w.writerow([i, *(repr(float(c)) for c in coords[i]), repr(float(values[i]))])
