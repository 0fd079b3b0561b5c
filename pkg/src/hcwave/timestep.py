"""Implicit midpoint / Crank-Nicolson stepping for M z'' + S z = F(t).

The second-order system is advanced in the first-order form (zeta, eta) with
eta = zeta'. Each step solves one system with the fixed matrix
M + tau^2/4 S, factorized once per run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .linalg import Factorization, SingularSystemError, is_symmetric

SCHEMES = ("midpoint", "crank_nicolson")

LoadProvider = Callable[[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class WaveState:
    zeta: np.ndarray
    eta: np.ndarray
    step_index: int
    tau: float

    @property
    def t(self) -> float:
        return self.step_index * self.tau


class Stepper:
    """Factorization of M + tau^2/4 S together with the operators it came from."""

    def __init__(self, M, S, tau: float, method: str = "direct"):
        if not np.isfinite(tau) or tau == 0:
            raise ValueError(f"time step must be finite and nonzero, got {tau}")
        self.M, self.S, self.tau = M, S, float(tau)
        # M + tau^2/4 S is only required to be invertible; Petrov-Galerkin
        # matrices are not symmetric, so symmetry is checked only if present.
        system = M + (tau**2 / 4.0) * S
        self.system = system
        self.factor = _factor(system, method)

    def solve(self, b):
        return self.factor.solve(b)


class _LUFactor:
    def __init__(self, A):
        self.A = sparse.csc_matrix(A)
        try:
            self._lu = spla.splu(self.A)
        except RuntimeError as exc:
            raise SingularSystemError(f"factorization failed: {exc}") from exc

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))


def _factor(A, method):
    if is_symmetric(A, rtol=1e-12):
        return Factorization(A, method=method, check=False)
    return _LUFactor(A)


def prepare_stepper(M, S, tau: float, method: str = "direct") -> Stepper:
    return Stepper(M, S, tau, method=method)


def midpoint_load(load: LoadProvider | None, t: float, tau: float, scheme: str):
    if load is None:
        return None
    if scheme == "midpoint":
        return load(t + 0.5 * tau)
    if scheme == "crank_nicolson":
        return 0.5 * (load(t) + load(t + tau))
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def step(
    state: WaveState,
    stepper: Stepper,
    load: LoadProvider | None = None,
    scheme: str = "midpoint",
    literal_mass_load: bool = False,
) -> WaveState:
    """One step of the (zeta, eta) recursion.

    ``literal_mass_load=True`` multiplies the load by M before it enters the
    right-hand side, for comparison with that variant of the update.
    """
    M, S, tau = stepper.M, stepper.S, stepper.tau
    rhs = -(S @ state.zeta)
    F = midpoint_load(load, state.t, tau, scheme)
    if F is not None:
        rhs = rhs + (M @ F if literal_mass_load else F)
    rhs = M @ state.eta + 0.5 * tau * rhs
    eta_half = stepper.solve(rhs)
    zeta = state.zeta + tau * eta_half
    eta = 2.0 * eta_half - state.eta
    return WaveState(zeta, eta, state.step_index + 1, tau)


def num_steps(T: float, tau: float) -> int:
    q = T / tau
    n = round(q)
    if n < 0 or abs(q - n) > 1e-9 * max(1.0, abs(q)):
        raise ValueError(f"T/tau = {q} is not a non-negative integer")
    return int(n)


def energy(state: WaveState, M, S) -> float:
    return 0.5 * float(state.eta @ (M @ state.eta)) + 0.5 * float(state.zeta @ (S @ state.zeta))


def simulate(
    M,
    S,
    load: LoadProvider | None,
    zeta0,
    eta0,
    tau: float,
    T: float,
    scheme: str = "midpoint",
    observer: Callable[[WaveState], None] | None = None,
    stepper: Stepper | None = None,
    literal_mass_load: bool = False,
) -> WaveState:
    """Run T/tau steps; ``observer`` sees the initial state and every step."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    n = num_steps(T, tau)
    if stepper is None:
        stepper = prepare_stepper(M, S, tau)
    state = WaveState(np.asarray(zeta0, dtype=float), np.asarray(eta0, dtype=float), 0, tau)
    if observer is not None:
        observer(state)
    for _ in range(n):
        state = step(state, stepper, load, scheme, literal_mass_load)
        if observer is not None:
            observer(state)
    return state


class EnergyRecorder:
    """Observer collecting the discrete energy per step."""

    def __init__(self, M, S):
        self.M, self.S = M, S
        self.t: list[float] = []
        self.values: list[float] = []

    def __call__(self, state: WaveState) -> None:
        self.t.append(state.t)
        self.values.append(energy(state, self.M, self.S))

    def max_relative_drift(self) -> float:
        E = np.asarray(self.values)
        return float(np.max(np.abs(E - E[0])) / max(E[0], 1.0))

    def rows(self, l2_norms=None):
        """(step, t, energy, l2_norm) tuples for CSV output."""
        l2 = l2_norms if l2_norms is not None else [float("nan")] * len(self.values)
        return [(i, t, e, n) for i, (t, e, n) in enumerate(zip(self.t, self.values, l2))]


class TrajectoryRecorder:
    """Observer keeping (t, zeta) for every step."""

    def __init__(self):
        self.t: list[float] = []
        self.zeta: list[np.ndarray] = []

    def __call__(self, state: WaveState) -> None:
        self.t.append(state.t)
        self.zeta.append(state.zeta.copy())

    def snapshots(self) -> np.ndarray:
        return np.array(self.zeta)


def chain(*observers):
    """Combine several observers into one."""
    obs = [o for o in observers if o is not None]

    def _call(state):
        for o in obs:
            o(state)

    return _call
