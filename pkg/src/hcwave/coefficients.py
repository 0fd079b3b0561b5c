"""Piecewise-constant two-valued coefficients on the fine mesh."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import TensorMesh

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class Coefficient:
    values: np.ndarray = field(repr=False)
    kind: str
    a0: float
    eps: float | None = None

    def __post_init__(self):
        if np.any(self.values <= 0):
            raise ValueError("coefficient values must be positive")

    def __len__(self):
        return len(self.values)

    def inclusion_mask(self) -> np.ndarray:
        """Elements carrying the contrast value a0 (empty for a0 == 1)."""
        if self.a0 == 1.0:
            return np.zeros(len(self.values), dtype=bool)
        return self.values == self.a0

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element_index", "value"])
            for i, v in enumerate(self.values):
                w.writerow([i, repr(float(v))])


def _integral_ratio(length: float, h: float) -> int | None:
    q = length / h
    k = round(q)
    return k if abs(q - k) <= 1e-12 * max(1.0, abs(q)) else None


def _check_dyadic(eps: float) -> None:
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    k = -np.log2(eps)
    if abs(k - round(k)) > 1e-12:
        raise ValueError(f"eps must be a power of two, got {eps}")


def constant(mesh: TensorMesh, value: float = 1.0) -> Coefficient:
    return Coefficient(np.full(mesh.num_elements, float(value)), "constant", float(value))


def periodic_inclusion(
    fine: TensorMesh, eps: float, a0: float, inclusion: tuple[float, float] = (0.25, 0.75)
) -> Coefficient:
    """eps-periodic coefficient equal to a0 on the inclusion, 1 elsewhere.

    The inclusion is (lo, hi] in 1D and (lo, hi)^2 in 2D in cell coordinates;
    membership is decided at element midpoints.
    """
    _check_dyadic(eps)
    lo, hi = inclusion
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"invalid inclusion bounds {inclusion}")
    for edge in (lo, hi):
        if _integral_ratio(eps * edge, fine.h) is None:
            raise ValueError(
                f"mesh width h={fine.h} must divide eps*{edge}={eps * edge} "
                "so that inclusion boundaries fall on element edges"
            )
    if _integral_ratio(eps, fine.h) is None:
        raise ValueError(f"mesh width h={fine.h} must divide eps={eps}")
    y = np.mod(fine.element_midpoints() / eps, 1.0)
    inside = np.all((y > lo) & (y <= hi), axis=1)
    values = np.where(inside, float(a0), 1.0)
    kind = "constant" if a0 == 1 else "periodic"
    return Coefficient(values, kind, float(a0), float(eps))


def cell_inclusion(cell: TensorMesh, a0: float, sigma_fraction: float | None = None) -> Coefficient:
    """Unit-cell coefficient with a centered inclusion.

    ``sigma_fraction`` is the inclusion measure (interval length in 1D, square
    area in 2D); the default is the inclusion (1/4, 3/4)^d.
    """
    if sigma_fraction is None:
        return periodic_inclusion(cell, 1.0, a0)
    if not 0 <= sigma_fraction < 1:
        raise ValueError("sigma_fraction must lie in [0, 1)")
    if sigma_fraction == 0:
        return constant(cell, 1.0)
    side = sigma_fraction ** (1.0 / cell.dim)
    return periodic_inclusion(cell, 1.0, a0, inclusion=((1 - side) / 2, (1 + side) / 2))


def splitmix64(state: int) -> tuple[int, int]:
    """One step of the splitmix64 generator: (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def bernoulli_bits(seed: int, count: int) -> np.ndarray:
    """``count`` fair coin flips from the top bit of successive splitmix64 outputs."""
    state = int(seed) & _MASK64
    out = np.empty(count, dtype=bool)
    for i in range(count):
        state, z = splitmix64(state)
        out[i] = bool(z >> 63)
    return out


def random_checkerboard(
    fine: TensorMesh,
    eps: float,
    a0: float,
    seed: int,
    region: tuple[float, float] | tuple[tuple[float, float], ...] = (0.0, 1.0),
) -> Coefficient:
    """Checkerboard of eps-cells, each independently a0 or 1 with probability 1/2.

    Only cells inside the axis-aligned ``region`` are randomized; outside the
    value is 1. Cells are drawn in lexicographic order (axis 0 fastest).
    """
    _check_dyadic(eps)
    if _integral_ratio(eps, fine.h) is None:
        raise ValueError(f"mesh width h={fine.h} must divide eps={eps}")
    if np.ndim(region) == 1:
        region = (tuple(region),) * fine.dim
    if len(region) != fine.dim:
        raise ValueError("region needs one (lo, hi) pair per axis")
    ncell = _integral_ratio(1.0, eps)
    lo_cell, hi_cell = [], []
    for lo, hi in region:
        a, b = _integral_ratio(lo, eps), _integral_ratio(hi, eps)
        if a is None or b is None:
            raise ValueError(f"region bounds ({lo}, {hi}) must align with eps-cells of size {eps}")
        lo_cell.append(max(a, 0))
        hi_cell.append(min(b, ncell))

    counts = [max(b - a, 0) for a, b in zip(lo_cell, hi_cell)]
    cell_values = np.ones((ncell,) * fine.dim)
    total = int(np.prod(counts))
    if total:
        bits = bernoulli_bits(seed, total)
        draws = np.where(bits, float(a0), 1.0)
        if fine.dim == 1:
            cell_values[lo_cell[0] : hi_cell[0]] = draws
        else:
            # draws run axis 0 fastest; cell_values is indexed [axis0, axis1]
            block = draws.reshape(counts[1], counts[0]).T
            cell_values[lo_cell[0] : hi_cell[0], lo_cell[1] : hi_cell[1]] = block

    cells = np.floor(fine.element_midpoints() / eps).astype(int)
    values = cell_values[tuple(cells.T)]
    return Coefficient(values, "random_checkerboard", float(a0), float(eps))


def high_contrast_value(eps: float, p: float) -> float:
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if p < 0:
        raise ValueError("p must be non-negative")
    return float(eps) ** p
