"""Acceptance suite: every criterion at its stated tolerance and runtime limit.

Each test records a verdict line (see conftest.py) before asserting, so the
terminal summary lists every criterion even when some of them fail.
"""
import os
import time

import numpy as np
import pytest
import scipy.sparse as sparse

from conftest import record
from hcwave import fem
from hcwave.coefficients import cell_inclusion, constant, random_checkerboard
from hcwave.experiments import ExperimentConfig, estimate_rate, parse_field, run_lod_convergence
from hcwave.experiments.runners import (
    run_fine_reference,
    run_highcontrast_limit,
    run_homogenization_error,
)
from hcwave.homogenize import harmonic_average_1d, solve_cell_problems, voigt_reuss_bounds
from hcwave.interpolation import build_interpolation, prolongation
from hcwave.linalg import solve_constrained
from hcwave.lod import assemble_lod, simulate_lod, truncation_error_curve
from hcwave.mesh import build_mesh
from hcwave.timestep import EnergyRecorder, TrajectoryRecorder, simulate

THREADS = min(4, os.cpu_count() or 1)
FORMULATIONS = ["galerkin", "petrov_galerkin"]
GAUSS = "gaussian(center=0.5, sigma=0.1)"


def _verdict(criterion, variant, ok, detail, start, limit):
    elapsed = time.perf_counter() - start
    in_time = limit is None or elapsed <= limit
    record(criterion, variant, ok and in_time, detail, elapsed, limit)
    assert ok, detail
    assert in_time, f"runtime {elapsed:.1f}s exceeds {limit}s"


def _fmt(xs):
    return "[" + ", ".join(f"{x:.3g}" for x in xs) + "]"


# ---------------------------------------------------------------------------
# 1. 1D cell problem against the harmonic average


def test_c01_cell_problem_1d():
    start = time.perf_counter()
    cell = build_mesh(1, 64)
    worst = 0.0
    for a0, sigma in [(0.25, 0.5), (0.1, 0.5), (0.5, 0.25), ((2**-4) ** 2, 0.5), (0.9, 0.75)]:
        _, ahat = solve_cell_problems(cell, cell_inclusion(cell, a0, sigma))
        ref = harmonic_average_1d(a0, sigma)
        worst = max(worst, abs(ahat.entries[0, 0] - ref) / ref)
    _verdict(1, "5 pairs", worst <= 1e-8, f"max relative deviation {worst:.2e} <= 1e-8", start, 5)


# ---------------------------------------------------------------------------
# 2. 2D homogenized tensor


def test_c02_tensor_2d():
    start = time.perf_counter()
    cell = build_mesh(2, 64)
    _, one = solve_cell_problems(cell, constant(cell, 1.0))
    dev = np.max(np.abs(one.entries - np.eye(2)))
    coeff = cell_inclusion(cell, 0.25)
    _, ahat = solve_cell_problems(cell, coeff)
    e = ahat.entries
    lo, hi = voigt_reuss_bounds(coeff)
    ok = dev <= 1e-10 and abs(e[0, 1]) <= 1e-8 and abs(e[0, 0] - e[1, 1]) <= 1e-8 and lo <= e[0, 0] <= hi
    detail = (f"|a-I|={dev:.1e}, a11={e[0, 0]:.6f}, |a12|={abs(e[0, 1]):.1e}, "
              f"|a11-a22|={abs(e[0, 0] - e[1, 1]):.1e}, bounds [{lo:.4f}, {hi:.4f}]")
    _verdict(2, "cell 64^2", ok, detail, start, 30)


# ---------------------------------------------------------------------------
# 3. energy conservation for f = 0


def _drift_lod(dim, weighted):
    cfg = ExperimentConfig(dim=dim, eps=2**-3 if dim == 2 else 2**-5, h=2**-5 if dim == 2 else 2**-8)
    fine, c = cfg.fine_mesh(), cfg.coefficient()
    A, M = fem.assemble_stiffness(fine, c), fem.assemble_mass(fine)
    coarse = build_mesh(dim, 4 if dim == 2 else 16)
    ops = assemble_lod(coarse, fine, c, 2, build_interpolation(coarse, fine, c, weighted), A_fine=A, M_fine=M)
    g = fem.interpolate_field(fine, parse_field(GAUSS))
    rec = EnergyRecorder(ops.M, ops.S)
    simulate_lod(ops, A, M, None, g, g, 2**-7, 0.25, observer=rec)
    return rec.max_relative_drift()


def test_c03_energy_conservation():
    start = time.perf_counter()
    drifts = {}
    for dim in (1, 2):
        for scheme in ("midpoint", "crank_nicolson"):
            cfg = ExperimentConfig(dim=dim, eps=2**-3 if dim == 2 else 2**-5, h=2**-5 if dim == 2 else 2**-9,
                                   u0=parse_field(GAUSS), v0=parse_field("sine"), scheme=scheme)
            drifts[f"fine {dim}D {scheme}"] = run_fine_reference(cfg).energy.max_relative_drift()
        for weighted in (False, True):
            drifts[f"LOD {dim}D {'weighted' if weighted else 'standard'} I"] = _drift_lod(dim, weighted)
    worst = max(drifts.values())
    _verdict(3, "fine+LOD, 1D+2D", worst <= 1e-10, f"max drift {worst:.1e} <= 1e-10 over {len(drifts)} runs", start, None)


# ---------------------------------------------------------------------------
# 4. homogenization error trends


def test_c04_homogenization_trends():
    start = time.perf_counter()
    base = ExperimentConfig(dim=1, h=2**-11, tau=2**-7, T=0.25, u0=parse_field(GAUSS), norms=("l2",), eps=2**-5)
    rep = run_homogenization_error(base.replace(eps_list=(2**-3, 2**-4, 2**-5, 2**-6), a0_list=(0.25,)))
    e_eps = [r[3] for r in rep.rows]  # rows ordered by decreasing eps
    rep2 = run_homogenization_error(base.replace(eps_list=(2**-5,), a0_list=(2**-1, 2**-2, 2**-3, 2**-4, 2**-5)))
    e_a0 = [r[3] for r in rep2.rows]  # rows ordered by decreasing a0
    dec = all(b < 1.1 * a for a, b in zip(e_eps, e_eps[1:]))
    inc = all(b >= 0.9 * a for a, b in zip(e_a0, e_a0[1:]))
    detail = f"eps sweep {_fmt(e_eps)} decreasing={dec}; a0 sweep {_fmt(e_a0)} nondecreasing={inc}"
    _verdict(4, "1D gaussian", dec and inc, detail, start, 120)


# ---------------------------------------------------------------------------
# 5. high-contrast limit


def test_c05_highcontrast_limit():
    start = time.perf_counter()
    cfg = ExperimentConfig(dim=1, eps=2**-6, h=2**-11, tau=2**-7, T=0.25, u0=parse_field(GAUSS))
    rep = run_highcontrast_limit(cfg)
    ratio = rep.final_distance("a0=eps^2") / rep.final_distance("a0=1")
    gap = rep.gap("a0=eps^3", "a0=eps^2")
    detail = f"||u(T)-u0|| ratio eps^2/1 = {ratio:.3f} <= 0.2; eps^3 vs eps^2 relative gap {gap:.3f} <= 0.1"
    _verdict(5, "1D eps=2^-6", ratio <= 0.2 and gap <= 0.1, detail, start, 60)


# ---------------------------------------------------------------------------
# 6. exactness at H = h


@pytest.mark.parametrize("formulation", FORMULATIONS)
def test_c06_exactness(formulation):
    start = time.perf_counter()
    worst = 0.0
    for dim, h, weighted in ((1, 2**-7, False), (1, 2**-7, True), (2, 2**-6, False)):
        cfg = ExperimentConfig(dim=dim, eps=2**-4, h=h, H_list=(h,), k_list=(1,), tau=2**-7, T=0.25,
                               formulation=formulation, weighted=weighted, f=parse_field("poly_bubble"),
                               u0=parse_field("sine"), v0=parse_field(GAUSS), norms=("l2", "weighted_l2", "energy"))
        rep = run_lod_convergence(cfg, threads=THREADS)
        worst = max(worst, max(r[3] for r in rep.rows if r[2] != "energy"))
    _verdict(6, formulation, worst <= 1e-8, f"max L-inf(L2) error {worst:.1e} <= 1e-8 (1D both I, 2D)", start, None)


# ---------------------------------------------------------------------------
# 7-9. 1D LOD convergence


def _lod_1d(kind, f, weighted, formulation, norms=("l2", "weighted_l2")):
    cfg = ExperimentConfig(
        dim=1, eps=2**-8, a0="eps^2", coeff_kind=kind, seed=1, h=2**-11, tau=2**-7, T=0.25,
        H_list=tuple(2.0**-k for k in range(2, 7)), k_list=(3,), f=parse_field(f),
        weighted=weighted, formulation=formulation, norms=norms,
    )
    return run_lod_convergence(cfg, threads=THREADS)


@pytest.mark.parametrize("formulation", FORMULATIONS)
@pytest.mark.parametrize("weighted", [False, True], ids=["standard_I", "weighted_I"])
def test_c07_lod_1d_periodic(weighted, formulation):
    start = time.perf_counter()
    rep = _lod_1d("periodic", "poly_bubble", weighted, formulation)
    r_l2, r_a = rep.rate("l2", 3), rep.rate("weighted_l2", 3)
    detail = (f"rate L2 {r_l2:.3f}, rate L2_a {r_a:.3f} (need >= 1.7 both); "
              f"L2 errors {_fmt(rep.errors('l2', k=3)[1])}")
    variant = f"{formulation}, {'weighted' if weighted else 'standard'} I"
    _verdict(7, variant, r_l2 >= 1.7 and r_a >= 1.7, detail, start, 300)


@pytest.mark.parametrize("formulation", FORMULATIONS)
def test_c08_lod_1d_random(formulation):
    start = time.perf_counter()
    rep = _lod_1d("checkerboard", "poly_bubble", False, formulation)
    r_l2, r_a = rep.rate("l2", 3), rep.rate("weighted_l2", 3)
    detail = (f"rate L2 {r_l2:.3f}, rate L2_a {r_a:.3f} (need >= 0.8 both); "
              f"L2 errors {_fmt(rep.errors('l2', k=3)[1])}")
    _verdict(8, formulation, r_l2 >= 0.8 and r_a >= 0.8, detail, start, 300)


@pytest.mark.parametrize("formulation", FORMULATIONS)
def test_c09_lod_1d_constant_load(formulation):
    start = time.perf_counter()
    rates = {}
    for kind in ("periodic", "checkerboard"):
        rep = _lod_1d(kind, "constant(value=1)", False, formulation, norms=("weighted_l2",))
        rates[kind] = rep.rate("weighted_l2", 3)
    detail = f"L2_a rate periodic {rates['periodic']:.3f}, random {rates['checkerboard']:.3f} (need >= 0.45)"
    _verdict(9, formulation, min(rates.values()) >= 0.45, detail, start, 300)


# ---------------------------------------------------------------------------
# 10-11. 2D LOD convergence


def _lod_2d(kind, f, k_list, formulation):
    cfg = ExperimentConfig(
        dim=2, eps=2**-3, a0="eps^2", coeff_kind=kind, seed=1, region=(0.25, 0.75), h=2**-5,
        tau=2**-7, T=0.25, H_list=(2**-1, 2**-2, 2**-3), k_list=k_list, f=parse_field(f),
        formulation=formulation, norms=("l2", "weighted_l2"),
    )
    return run_lod_convergence(cfg, threads=THREADS)


def _strictly_decreasing(e):
    return bool(np.all(np.diff(e) < 0))


@pytest.mark.parametrize("formulation", FORMULATIONS)
def test_c10_lod_2d_periodic(formulation):
    start = time.perf_counter()
    rep = _lod_2d("periodic", "poly_bubble", (2,), formulation)
    e2, ea = rep.errors("l2", k=2)[1], rep.errors("weighted_l2", k=2)[1]
    rate = rep.rate("weighted_l2", 2)
    ok = _strictly_decreasing(e2) and _strictly_decreasing(ea) and rate >= 0.9
    detail = f"L2 {_fmt(e2)}, L2_a {_fmt(ea)}, L2_a rate {rate:.3f} (need >= 0.9, strictly decreasing)"
    _verdict(10, formulation, ok, detail, start, 600)


@pytest.mark.parametrize("formulation", FORMULATIONS)
def test_c11_lod_2d_random(formulation):
    start = time.perf_counter()
    rep = _lod_2d("checkerboard", "box_indicator(lo=0.25, hi=0.75, inside=0, outside=1)", (1, 2, 3), formulation)
    dec = all(_strictly_decreasing(rep.errors(n, k=k)[1]) for n in ("l2", "weighted_l2") for k in (2, 3))
    rate = rep.rate("weighted_l2", 3)
    e1 = rep.errors("weighted_l2", k=1)[1]
    stall = e1[-1] / e1[-2]
    ok = dec and rate >= 0.8 and stall > 0.7
    detail = (f"k>=2 decreasing={dec}; L2_a rate k=3 {rate:.3f} (need >= 0.8); "
              f"k=1 last-step ratio {stall:.3f} (need > 0.7), k=1 L2_a {_fmt(e1)}")
    _verdict(11, formulation, ok, detail, start, 900)


# ---------------------------------------------------------------------------
# 12. corrector truncation decay


@pytest.mark.parametrize("weighted", [False, True], ids=["standard_I", "weighted_I"])
def test_c12_truncation_decay(weighted):
    start = time.perf_counter()
    cfg = ExperimentConfig(dim=1, eps=2**-6, a0="eps^2", h=2**-8)
    fine, c = cfg.fine_mesh(), cfg.coefficient()
    coarse = build_mesh(1, 16)
    I = build_interpolation(coarse, fine, c, weighted)
    curve = truncation_error_curve(coarse, fine, c, I, range(1, 7))
    mono = all(b <= 1.05 * a for a, b in zip(curve, curve[1:]))
    ratio = curve[-1] / curve[0]
    detail = f"curve {_fmt(curve)}, nonincreasing={mono}, m=6/m=1 = {ratio:.2e} <= 0.05"
    _verdict(12, "standard I" if not weighted else "weighted I", mono and ratio <= 0.05, detail, start, 60)


# ---------------------------------------------------------------------------
# 13. randomized property suite


def _random_mesh_pair(rng):
    dim = int(rng.integers(1, 3))
    nf = int(rng.choice([16, 32, 64] if dim == 1 else [8, 16]))
    nc = int(rng.choice([n for n in (2, 4, 8) if n < nf]))
    return dim, build_mesh(dim, nc), build_mesh(dim, nf)


def test_c13_property_suite():
    start = time.perf_counter()
    trials = 100
    rng = np.random.default_rng(20240601)
    failures = {k: 0 for k in ("I*P=id", "I*Q=0", "S,M sym/PD", "KKT residual", "seeded coeff", "scheme equiv")}
    for _ in range(trials):
        dim, coarse, fine = _random_mesh_pair(rng)
        seed = int(rng.integers(0, 2**63))
        eps = fine.h * int(rng.choice([1, 2, 4]))
        a0 = float(10.0 ** -rng.integers(1, 5))
        c = random_checkerboard(fine, eps, a0, seed)
        if not np.array_equal(c.values, random_checkerboard(fine, eps, a0, seed).values):
            failures["seeded coeff"] += 1
        weighted = bool(rng.integers(0, 2))
        I = build_interpolation(coarse, fine, c, weighted)
        P = prolongation(coarse, fine)
        if np.max(np.abs((I.matrix @ P).toarray() - np.eye(coarse.num_interior))) > 1e-12:
            failures["I*P=id"] += 1
        A, M = fem.assemble_stiffness(fine, c), fem.assemble_mass(fine)
        ops = assemble_lod(coarse, fine, c, int(rng.integers(1, 3)), I, A_fine=A, M_fine=M)
        Q = ops.Q.toarray()
        if np.max(np.abs(I.matrix @ Q)) > 1e-10 * max(np.max(np.abs(Q)), 1e-300):
            failures["I*Q=0"] += 1
        Sd, Md = ops.S.toarray(), ops.M.toarray()
        sym = max(np.max(np.abs(Sd - Sd.T)) / np.max(np.abs(Sd)), np.max(np.abs(Md - Md.T)) / np.max(np.abs(Md)))
        if sym > 1e-12 or np.linalg.eigvalsh(Md).min() <= 0 or np.linalg.eigvalsh(Sd).min() <= 0:
            failures["S,M sym/PD"] += 1
        # constrained solve on a random SPD system
        n, k = int(rng.integers(4, 40)), int(rng.integers(1, 4))
        B = rng.standard_normal((n, n))
        As = sparse.csr_matrix(B @ B.T + n * np.eye(n))
        C = sparse.csr_matrix(rng.standard_normal((k, n)))
        b = rng.standard_normal(n)
        w = solve_constrained(As, C, b)
        kernel = np.linalg.svd(C.toarray())[2][k:].T
        if (np.max(np.abs(C @ w)) > 1e-10 * np.max(np.abs(w)) + 1e-14
                or np.max(np.abs(kernel.T @ (As @ w - b))) > 1e-10 * max(np.linalg.norm(b), 1.0)):
            failures["KKT residual"] += 1
        # midpoint and Crank-Nicolson agree for loads affine in t
        F0, F1 = rng.standard_normal(fine.num_interior), rng.standard_normal(fine.num_interior)
        z0 = rng.standard_normal(fine.num_interior)
        r1, r2 = TrajectoryRecorder(), TrajectoryRecorder()
        load = lambda t: F0 + t * F1
        simulate(M, A, load, z0, 0 * z0, 0.125, 0.5, "midpoint", observer=r1)
        simulate(M, A, load, z0, 0 * z0, 0.125, 0.5, "crank_nicolson", observer=r2)
        if np.max(np.abs(r1.snapshots() - r2.snapshots())) > 1e-12 * max(1.0, np.max(np.abs(r1.snapshots()))):
            failures["scheme equiv"] += 1
    bad = {k: v for k, v in failures.items() if v}
    detail = f"{trials} trials x {len(failures)} invariants, failures {bad or 'none'}"
    _verdict(13, "randomized", not bad, detail, start, 60)
