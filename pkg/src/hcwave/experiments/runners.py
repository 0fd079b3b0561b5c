"""Experiment drivers: fine reference runs, homogenization error studies,
the high-contrast limit check and LOD convergence tables."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import fem
from ..coefficients import Coefficient, periodic_inclusion
from ..homogenize import HomogenizedTensor, harmonic_average_1d, homogenized_reference, limit_solution_1d, solve_cell_problems
from ..interpolation import build_interpolation
from ..lod import assemble_lod, reconstruct, simulate_lod
from ..mesh import TensorMesh, build_mesh
from ..timestep import EnergyRecorder, TrajectoryRecorder, chain, simulate
from .config import ExperimentConfig


# ----------------------------------------------------------------------
# rates


def estimate_rate(H_list, error_list) -> float:
    """Least-squares slope of log(error) against log(H)."""
    H = np.asarray(H_list, dtype=float)
    e = np.asarray(error_list, dtype=float)
    if H.shape != e.shape or H.ndim != 1:
        raise ValueError("H_list and error_list must be 1D and of equal length")
    if len(H) < 3:
        raise ValueError(f"a rate needs at least 3 points, got {len(H)}")
    if np.any(H <= 0) or np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ValueError("mesh sizes and errors must be positive and finite")
    if len(np.unique(H)) < 2:
        raise ValueError("need at least two distinct mesh sizes")
    return float(np.polyfit(np.log(H), np.log(e), 1)[0])


def pairwise_rates(H_list, error_list) -> np.ndarray:
    """log(e_i / e_{i+1}) / log(H_i / H_{i+1}) for consecutive entries."""
    H = np.asarray(H_list, dtype=float)
    e = np.asarray(error_list, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(H[:-1] / H[1:])


# ----------------------------------------------------------------------
# norms


@dataclass(frozen=True, eq=False)
class NormSet:
    """Fine-mesh matrices defining the reported norms."""

    M: object
    Ma: object
    A: object

    def matrix(self, name: str):
        return {"l2": self.M, "weighted_l2": self.Ma, "energy": self.A}[name]

    def max_norm(self, name: str, vectors) -> float:
        mat = self.matrix(name)
        norm = fem.norm_energy if name == "energy" else fem.norm_l2
        return max(norm(v, mat) for v in vectors)


def norm_set(mesh: TensorMesh, coeff: Coefficient, A=None) -> NormSet:
    A = fem.assemble_stiffness(mesh, coeff) if A is None else A
    return NormSet(fem.assemble_mass(mesh), fem.assemble_mass(mesh, coeff), A)


# ----------------------------------------------------------------------
# reports


@dataclass(eq=False)
class ErrorReport:
    """Errors per (key..., norm) with least-squares rates over the first key.

    ``rows`` holds tuples (key values..., norm, error, relative_error).
    """

    key_names: tuple
    rows: list
    config: ExperimentConfig
    rate_key: str | None = None
    group_key: str | None = None

    def errors(self, norm: str, **fixed) -> tuple[np.ndarray, np.ndarray]:
        """(key values along rate_key, errors) for one norm and fixed keys."""
        i_rate = self.key_names.index(self.rate_key)
        xs, es = [], []
        for row in self.rows:
            keys = dict(zip(self.key_names, row))
            if row[len(self.key_names)] != norm:
                continue
            if all(keys[k] == v for k, v in fixed.items()):
                xs.append(row[i_rate])
                es.append(row[len(self.key_names) + 1])
        return np.asarray(xs, dtype=float), np.asarray(es, dtype=float)

    def rates(self) -> list[tuple]:
        """(norm, group value, rate) for each group with at least 3 points."""
        if self.rate_key is None:
            return []
        out = []
        i_group = self.key_names.index(self.group_key) if self.group_key else None
        groups = sorted({row[i_group] for row in self.rows}) if i_group is not None else [None]
        for norm in self.config.norms:
            for g in groups:
                fixed = {self.group_key: g} if g is not None else {}
                H, e = self.errors(norm, **fixed)
                if len(H) >= 3 and np.all(e > 0):
                    out.append((norm, g, estimate_rate(H, e)))
        return out

    def rate(self, norm: str, group=None) -> float:
        for n, g, r in self.rates():
            if n == norm and g == group:
                return r
        raise KeyError((norm, group))

    def write_errors(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.config.echo()}\n")
            w = csv.writer(fh)
            w.writerow([*self.key_names, "norm", "error", "relative_error"])
            for row in self.rows:
                w.writerow([_fmt(x) for x in row])

    def write_rates(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.config.echo()}\n")
            w = csv.writer(fh)
            w.writerow(["norm", self.group_key or "group", "rate"])
            for norm, g, r in self.rates():
                w.writerow([norm, _fmt(g), _fmt(r)])

    def write_pairwise_rates(self, path) -> None:
        i_group = self.key_names.index(self.group_key)
        groups = sorted({row[i_group] for row in self.rows})
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.config.echo()}\n")
            w = csv.writer(fh)
            w.writerow(["norm", self.group_key, f"{self.rate_key}_coarse", f"{self.rate_key}_fine", "rate"])
            for norm in self.config.norms:
                for g in groups:
                    H, e = self.errors(norm, **{self.group_key: g})
                    if len(H) < 2 or np.any(e <= 0):
                        continue
                    for a, b, r in zip(H[:-1], H[1:], pairwise_rates(H, e)):
                        w.writerow([norm, _fmt(g), _fmt(a), _fmt(b), _fmt(r)])


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# ----------------------------------------------------------------------
# fine reference


@dataclass(eq=False)
class FineRun:
    mesh: TensorMesh
    coeff: Coefficient
    t: np.ndarray
    snapshots: np.ndarray  # (steps + 1, interior dofs)
    norms: NormSet
    energy: EnergyRecorder
    load: np.ndarray


def run_fine_reference(config: ExperimentConfig, eps: float | None = None, a0: float | None = None) -> FineRun:
    """Fine FEM + time stepping; every step is kept."""
    mesh = config.fine_mesh()
    coeff = config.coefficient(mesh, eps=eps, a0=a0)
    norms = norm_set(mesh, coeff)
    F = fem.assemble_load(mesh, config.f)
    load = None if config.f.is_zero else (lambda t: F)
    rec = TrajectoryRecorder()
    en = EnergyRecorder(norms.M, norms.A)
    simulate(
        norms.M, norms.A, load,
        fem.interpolate_field(mesh, config.u0), fem.interpolate_field(mesh, config.v0),
        config.tau, config.T, config.scheme, observer=chain(rec, en),
    )
    return FineRun(mesh, coeff, np.asarray(rec.t), rec.snapshots(), norms, en, F)


def write_snapshots(run: FineRun, config: ExperimentConfig, directory) -> list[Path]:
    """snapshot_<t>.csv for each requested time (default: final time)."""
    directory = Path(directory)
    times = config.snapshot_times or (config.T,)
    paths = []
    for t in times:
        n = int(round(t / config.tau))
        path = directory / f"snapshot_{float(run.t[n])!r}.csv"
        fem.dump_field(run.mesh, run.snapshots[n], path, name="u", header=config.echo())
        paths.append(path)
    return paths


def write_energy(run: FineRun, config: ExperimentConfig, path) -> None:
    l2 = [fem.norm_l2(z, run.norms.M) for z in run.snapshots]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {config.echo()}\n")
        w = csv.writer(fh)
        w.writerow(["step", "t", "energy", "l2_norm"])
        for row in run.energy.rows(l2):
            w.writerow([_fmt(x) for x in row])


# ----------------------------------------------------------------------
# homogenization


def homogenized_tensor(config: ExperimentConfig, a0: float, perforated: bool = False) -> HomogenizedTensor:
    """Effective tensor for the configured inclusion shape."""
    lo, hi = config.inclusion
    if config.dim == 1 and not perforated:
        return HomogenizedTensor(np.array([[harmonic_average_1d(a0, hi - lo)]]))
    cell = build_mesh(config.dim, config.cell_n)
    _, ahat = solve_cell_problems(cell, periodic_inclusion(cell, 1.0, a0, inclusion=config.inclusion), perforated)
    return ahat


def run_homogenization_error(config: ExperimentConfig) -> ErrorReport:
    """max_n ||u_eps - u_hat|| over the eps and a0 grids of the config."""
    if config.coeff_kind != "periodic":
        raise ValueError("homogenization error needs coeff.kind = periodic")
    for eps in config.eps_list:
        config.check_eps(eps)
    mesh = config.fine_mesh()
    rows = []
    for a0 in config.a0_list:
        ahat = homogenized_tensor(config, a0)
        hom = homogenized_reference(ahat, config.f, config.u0, config.v0, mesh, config.tau, config.T, config.scheme)
        U_hat = hom.snapshots()
        for eps in config.eps_list:
            run = run_fine_reference(config, eps=eps, a0=a0)
            diff = run.snapshots - U_hat
            for norm in config.norms:
                err = run.norms.max_norm(norm, diff)
                base = run.norms.max_norm(norm, U_hat)
                rows.append((float(eps), float(a0), norm, err, err / base if base > 0 else float("nan")))
    rows.sort(key=lambda r: (-r[1], -r[0], r[2]))
    return ErrorReport(("eps", "a0"), rows, config, rate_key="eps", group_key="a0")


@dataclass(eq=False)
class LimitReport:
    """Distances ||u_eps(t) - (u0 + t v0)|| for a0 in {1, eps^2, eps^3}."""

    config: ExperimentConfig
    labels: tuple
    a0_values: tuple
    t: np.ndarray
    distances: np.ndarray  # (len(labels), steps + 1)
    relative: np.ndarray
    finals: dict = field(default_factory=dict)
    M: object = None

    def final_distance(self, label: str) -> float:
        return float(self.distances[self.labels.index(label), -1])

    def gap(self, a: str, b: str) -> float:
        """Relative L2 distance between the final states of runs a and b."""
        d = self.finals[a] - self.finals[b]
        return fem.norm_l2(d, self.M) / fem.norm_l2(self.finals[b], self.M)

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.config.echo()}\n")
            w = csv.writer(fh)
            w.writerow(["label", "a0", "t", "distance", "relative_distance"])
            for i, (lab, a0) in enumerate(zip(self.labels, self.a0_values)):
                for n, t in enumerate(self.t):
                    w.writerow([lab, _fmt(a0), _fmt(t), _fmt(self.distances[i, n]), _fmt(self.relative[i, n])])


def run_highcontrast_limit(config: ExperimentConfig) -> LimitReport:
    if config.dim != 1:
        raise ValueError("the high-contrast limit study is one-dimensional")
    if not config.f.is_zero:
        raise ValueError("the high-contrast limit study needs f = 0")
    eps = config.eps
    labels = ("a0=1", "a0=eps^2", "a0=eps^3")
    a0s = (1.0, eps**2, eps**3)
    mesh = config.fine_mesh()
    M = fem.assemble_mass(mesh)
    dist = []
    rel = []
    finals = {}
    t = None
    for lab, a0 in zip(labels, a0s):
        run = run_fine_reference(config, eps=eps, a0=a0)
        t = run.t
        limits = [fem.interpolate_field(mesh, limit_solution_1d(config.u0, config.v0, float(tn))) for tn in t]
        d = np.array([fem.norm_l2(u - g, M) for u, g in zip(run.snapshots, limits)])
        scale = np.array([fem.norm_l2(g, M) for g in limits])
        dist.append(d)
        rel.append(np.divide(d, scale, out=np.full_like(d, np.nan), where=scale > 0))
        finals[lab] = run.snapshots[-1]
    return LimitReport(config, labels, a0s, t, np.array(dist), np.array(rel), finals, M)


# ----------------------------------------------------------------------
# LOD convergence


def _lod_cell(config, fine, coeff, norms, F, ref, ref_norms, coarse, k):
    I = build_interpolation(coarse, fine, coeff, weighted=config.weighted)
    ops = assemble_lod(coarse, fine, coeff, k, I, config.formulation, A_fine=norms.A, M_fine=norms.M)
    load = None if config.f.is_zero else (lambda t: F)
    rec = simulate_lod(
        ops, norms.A, norms.M, load,
        fem.interpolate_field(fine, config.u0), fem.interpolate_field(fine, config.v0),
        config.tau, config.T, config.scheme, config.v0_projection,
    )
    diff = np.array([reconstruct(z, ops) for z in rec.zeta]) - ref
    rows = []
    for norm in config.norms:
        err = norms.max_norm(norm, diff)
        base = ref_norms[norm]
        rows.append((float(coarse.h), int(k), norm, err, err / base if base > 0 else float("nan")))
    return rows


def run_lod_convergence(config: ExperimentConfig, threads: int = 1, reference: FineRun | None = None) -> ErrorReport:
    """Errors of the LOD solution against the fine reference for every (H, k)."""
    ref = run_fine_reference(config) if reference is None else reference
    ref_norms = {n: ref.norms.max_norm(n, ref.snapshots) for n in config.norms}
    tasks = [(c, k) for c in config.coarse_meshes() for k in config.k_list]

    def one(task):
        coarse, k = task
        return _lod_cell(config, ref.mesh, ref.coeff, ref.norms, ref.load, ref.snapshots, ref_norms, coarse, k)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, tasks))
    else:
        parts = [one(t) for t in tasks]
    order = {n: i for i, n in enumerate(config.norms)}
    rows = sorted((r for p in parts for r in p), key=lambda r: (-r[0], r[1], order[r[2]]))
    return ErrorReport(("H", "k"), rows, config, rate_key="H", group_key="k")
