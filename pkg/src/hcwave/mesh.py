"""Uniform tensor-product meshes on the unit cube and coarse patches."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TensorMesh:
    """Uniform grid of ``cells_per_axis**dim`` cells on (0, 1)^dim.

    Nodes and elements are numbered lexicographically with axis 0 running
    fastest. No coordinates are stored; everything derives from indices.
    """

    dim: int
    cells_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        n = self.cells_per_axis
        if not isinstance(n, (int, np.integer)) or n < 1 or not _is_power_of_two(int(n)):
            raise ValueError(f"cells_per_axis must be a power of two, got {n}")

    @property
    def h(self) -> float:
        return 1.0 / self.cells_per_axis

    @property
    def n(self) -> int:
        return self.cells_per_axis

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.n + 1,) * self.dim

    @property
    def num_nodes(self) -> int:
        return (self.n + 1) ** self.dim

    @property
    def num_elements(self) -> int:
        return self.n ** self.dim

    @property
    def num_interior(self) -> int:
        return (self.n - 1) ** self.dim

    def node_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        idx = multi[..., 0].copy()
        if self.dim == 2:
            idx = idx + (self.n + 1) * multi[..., 1]
        return idx

    def element_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        idx = multi[..., 0].copy()
        if self.dim == 2:
            idx = idx + self.n * multi[..., 1]
        return idx

    def element_multi(self, elements) -> np.ndarray:
        e = np.asarray(elements)
        if self.dim == 1:
            return e[..., None]
        return np.stack([e % self.n, e // self.n], axis=-1)

    def node_multi(self, nodes) -> np.ndarray:
        p = np.asarray(nodes)
        if self.dim == 1:
            return p[..., None]
        return np.stack([p % (self.n + 1), p // (self.n + 1)], axis=-1)

    @cached_property
    def node_coords(self) -> np.ndarray:
        """(num_nodes, dim) coordinates, derived from the indices."""
        return self.node_multi(np.arange(self.num_nodes)) * self.h

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """(num_elements, 2**dim) node indices, local vertex order axis 0 fastest."""
        emulti = self.element_multi(np.arange(self.num_elements))
        offsets = _local_offsets(self.dim)
        return self.node_index(emulti[:, None, :] + offsets[None, :, :])

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        multi = self.node_multi(np.arange(self.num_nodes))
        return np.any((multi == 0) | (multi == self.n), axis=1)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        """Global indices of interior nodes, in dof order."""
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def node_to_dof(self) -> np.ndarray:
        """Dof index per node, -1 on the Dirichlet boundary."""
        dof = np.full(self.num_nodes, -1, dtype=np.int64)
        dof[self.interior_nodes] = np.arange(self.num_interior)
        return dof

    def element_midpoints(self) -> np.ndarray:
        return (self.element_multi(np.arange(self.num_elements)) + 0.5) * self.h


def _local_offsets(dim: int) -> np.ndarray:
    if dim == 1:
        return np.array([[0], [1]])
    return np.array([[0, 0], [1, 0], [0, 1], [1, 1]])


def build_mesh(dim: int, cells_per_axis: int) -> TensorMesh:
    if cells_per_axis < 2:
        raise ValueError("cells_per_axis must be at least 2")
    return TensorMesh(dim, cells_per_axis)


def refinement_ratio(coarse: TensorMesh, fine: TensorMesh) -> int:
    if coarse.dim != fine.dim:
        raise ValueError("coarse and fine meshes differ in dimension")
    if fine.n % coarse.n != 0:
        raise ValueError(
            f"fine resolution {fine.n} is not a multiple of coarse resolution {coarse.n}"
        )
    return fine.n // coarse.n


def refinement_map(coarse: TensorMesh, fine: TensorMesh) -> np.ndarray:
    """Fine elements of each coarse element, shape (coarse elements, ratio**dim).

    Within a coarse element the fine elements are listed lexicographically.
    """
    r = refinement_ratio(coarse, fine)
    cmulti = coarse.element_multi(np.arange(coarse.num_elements))
    sub = np.arange(r)
    if coarse.dim == 1:
        local = sub[:, None]
    else:
        local = np.stack(np.meshgrid(sub, sub, indexing="xy"), axis=-1).reshape(-1, 2)
    fmulti = r * cmulti[:, None, :] + local[None, :, :]
    return fine.element_index(fmulti)


def coarse_element_fine_nodes(coarse: TensorMesh, fine: TensorMesh, K: int) -> np.ndarray:
    """Fine node indices of the closed coarse element K, lexicographic."""
    r = refinement_ratio(coarse, fine)
    lo = coarse.element_multi(K) * r
    axes = [np.arange(lo[i], lo[i] + r + 1) for i in range(coarse.dim)]
    if coarse.dim == 1:
        return axes[0]
    i0, i1 = np.meshgrid(axes[0], axes[1], indexing="xy")
    return fine.node_index(np.stack([i0.ravel(), i1.ravel()], axis=-1))


@dataclass(frozen=True)
class Patch:
    """The element patch U_m(K): a box of coarse elements around K."""

    center_element: int
    m: int
    lo: tuple[int, ...]
    hi: tuple[int, ...]  # inclusive coarse element bounds per axis
    elements: np.ndarray = field(repr=False)
    boundary_clipped: bool = False
    fine_dofs: np.ndarray | None = field(default=None, repr=False)

    def node_box(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Inclusive coarse node bounds of the closed patch."""
        return self.lo, tuple(h + 1 for h in self.hi)


def build_patch(coarse: TensorMesh, K: int, m: int, fine: TensorMesh | None = None) -> Patch:
    """Grow the patch by ``m`` layers of vertex-adjacent elements.

    With ``fine`` given, the fine interior dofs strictly inside the patch are
    attached (functions vanishing outside the patch live on these).
    """
    if not 0 <= K < coarse.num_elements:
        raise IndexError(f"element {K} out of range")
    if m < 0:
        raise ValueError("m must be non-negative")
    k = coarse.element_multi(K)
    lo = np.maximum(k - m, 0)
    hi = np.minimum(k + m, coarse.n - 1)
    clipped = bool(np.any(k - m < 0) or np.any(k + m > coarse.n - 1))
    axes = [np.arange(lo[i], hi[i] + 1) for i in range(coarse.dim)]
    if coarse.dim == 1:
        elements = axes[0]
    else:
        e0, e1 = np.meshgrid(axes[0], axes[1], indexing="xy")
        elements = coarse.element_index(np.stack([e0.ravel(), e1.ravel()], axis=-1))

    fine_dofs = None
    if fine is not None:
        r = refinement_ratio(coarse, fine)
        faxes = [np.arange(lo[i] * r + 1, (hi[i] + 1) * r) for i in range(coarse.dim)]
        if coarse.dim == 1:
            nodes = faxes[0]
        else:
            f0, f1 = np.meshgrid(faxes[0], faxes[1], indexing="xy")
            nodes = fine.node_index(np.stack([f0.ravel(), f1.ravel()], axis=-1))
        fine_dofs = fine.node_to_dof[nodes]

    return Patch(
        center_element=int(K),
        m=int(m),
        lo=tuple(int(v) for v in lo),
        hi=tuple(int(v) for v in hi),
        elements=np.asarray(elements),
        boundary_clipped=clipped,
        fine_dofs=fine_dofs,
    )
