"""Fidelity and Fisher-information tools for magnetic-field estimation.

Conventions
-----------
* Fidelity is the squared Uhlmann fidelity F = (tr sqrt(sqrt(rho) sigma
  sqrt(rho)))^2, evaluated through spectral square roots.
* Quantum Fisher information is taken with respect to the field B from a
  finite-difference triple rho(B - delta), rho(B), rho(B + delta); units
  1/T^2 per atom.  Two routes are provided: the SLD spectral formula and
  the Bures expansion 8(1 - sqrt(F))/delta^2 (symmetrized over +-delta),
  which agree on pure states with QFI = 4 Var.
* "Rescaled" information divides by the interrogation time t (units
  1/(T^2 s)); the precision bound is dB = 1/sqrt(n * I / t) in T/sqrtHz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .angular import CoupledSpace, coupled_space

__all__ = [
    "MetrologyError",
    "StateTrajectory",
    "Povm",
    "PrecisionSeries",
    "fidelity",
    "qfi",
    "qfi_cross_checked",
    "fisher_information",
    "sz_povm",
    "rescaled",
    "delta_b",
    "precision_series",
]

_HERM_TOL = 1e-8
_PSD_TOL = 1e-8
_EIG_PAIR_RTOL = 1e-12
_PROB_FLOOR = 1e-14


class MetrologyError(ValueError):
    pass


@dataclass(frozen=True)
class StateTrajectory:
    """Snapshots of a density-matrix evolution at increasing times."""

    times: np.ndarray  # s, shape (n,)
    states: np.ndarray  # shape (n, d, d)
    params_tag: str = ""

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=complex)
        if times.ndim != 1 or states.ndim != 3 or states.shape[0] != times.shape[0]:
            raise MetrologyError(
                f"times {times.shape} and states {states.shape} are inconsistent"
            )
        if states.shape[1] != states.shape[2]:
            raise MetrologyError("states must be square matrices")
        if times.shape[0] and np.any(np.diff(times) <= 0):
            raise MetrologyError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return self.times.shape[0]


@dataclass(frozen=True)
class Povm:
    """Measurement with PSD elements summing to the identity."""

    elements: tuple[np.ndarray, ...]
    name: str = ""

    def __post_init__(self) -> None:
        if not self.elements:
            raise MetrologyError("POVM needs at least one element")
        d = self.elements[0].shape[0]
        total = np.zeros((d, d), dtype=complex)
        for e in self.elements:
            if e.shape != (d, d):
                raise MetrologyError("POVM elements must share one square shape")
            if np.max(np.abs(e - e.conj().T)) > _HERM_TOL:
                raise MetrologyError("POVM element is not Hermitian")
            if np.min(np.linalg.eigvalsh((e + e.conj().T) / 2)) < -_PSD_TOL:
                raise MetrologyError("POVM element is not positive semidefinite")
            total += e
        if np.max(np.abs(total - np.eye(d))) > 1e-10:
            raise MetrologyError("POVM elements do not sum to the identity")

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.array([float(np.trace(e @ rho).real) for e in self.elements])


@dataclass(frozen=True)
class PrecisionSeries:
    """Per-snapshot information and precision curves for one trajectory triple."""

    times: np.ndarray  # s
    qfi: np.ndarray  # 1/T^2
    qfi_rescaled: np.ndarray  # 1/(T^2 s)
    fisher_sz: np.ndarray  # 1/T^2
    fisher_sz_rescaled: np.ndarray  # 1/(T^2 s)
    delta_b_optimal: np.ndarray  # T/sqrtHz
    delta_b_sz: np.ndarray  # T/sqrtHz
    n_atoms: float
    params_tag: str = ""

    def peak(self, curve: str = "qfi_rescaled") -> tuple[float, float]:
        """(argmax time, max value) of one of the rescaled curves."""
        values = getattr(self, curve)
        i = int(np.argmax(values))
        return float(self.times[i]), float(values[i])


def _check_state(rho: np.ndarray, name: str) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise MetrologyError(f"{name} must be a square matrix")
    if np.max(np.abs(rho - rho.conj().T)) > _HERM_TOL:
        raise MetrologyError(f"{name} is not Hermitian within {_HERM_TOL}")
    return (rho + rho.conj().T) / 2


def _psd_eigh(rho: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(rho)
    if w[0] < -_PSD_TOL:
        raise MetrologyError(f"{name} has eigenvalue {w[0]:.3e} below -{_PSD_TOL}")
    return np.clip(w, 0.0, None), v


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Squared Uhlmann fidelity (trace norm of sqrt(rho) sqrt(sigma), squared)."""
    rho = _check_state(rho, "rho")
    sigma = _check_state(sigma, "sigma")
    wr, vr = _psd_eigh(rho, "rho")
    ws, vs = _psd_eigh(sigma, "sigma")
    a = (vr * np.sqrt(wr)) @ vr.conj().T @ (vs * np.sqrt(ws)) @ vs.conj().T
    sv = np.linalg.svd(a, compute_uv=False)
    return float(sv.sum() ** 2)


def _qfi_sld(rho_minus: np.ndarray, rho_center: np.ndarray, rho_plus: np.ndarray, delta: float) -> float:
    drho = (rho_plus - rho_minus) / (2 * delta)
    w, v = _psd_eigh(_check_state(rho_center, "rho_center"), "rho_center")
    d_in_eig = v.conj().T @ drho @ v
    pair_sums = w[:, None] + w[None, :]
    keep = pair_sums > _EIG_PAIR_RTOL * max(w[-1], np.finfo(float).tiny)
    info = np.where(keep, np.abs(d_in_eig) ** 2 / np.where(keep, pair_sums, 1.0), 0.0)
    return float(2 * info.sum())


def _qfi_fidelity_fd(rho_minus: np.ndarray, rho_center: np.ndarray, rho_plus: np.ndarray, delta: float) -> float:
    deficit_plus = 1.0 - math.sqrt(fidelity(rho_center, rho_plus))
    deficit_minus = 1.0 - math.sqrt(fidelity(rho_center, rho_minus))
    mean_deficit = (deficit_plus + deficit_minus) / 2
    if mean_deficit < 100 * np.finfo(float).eps:
        raise MetrologyError(
            f"fidelity deficit {mean_deficit:.2e} below 100*eps; "
            "delta too small to resolve, increase the field step"
        )
    return float(8 * mean_deficit / delta**2)


def qfi(
    rho_minus: np.ndarray,
    rho_center: np.ndarray,
    rho_plus: np.ndarray,
    delta: float,
    method: str = "sld",
) -> float:
    """Quantum Fisher information from a central-difference state triple.

    delta is the half-spacing of the parameter (e.g. Tesla for field
    estimation); method is "sld" or "fidelity_fd".
    """
    if delta <= 0:
        raise MetrologyError("delta must be positive")
    rho_minus = _check_state(rho_minus, "rho_minus")
    rho_plus = _check_state(rho_plus, "rho_plus")
    if method == "sld":
        return _qfi_sld(rho_minus, rho_center, rho_plus, delta)
    if method == "fidelity_fd":
        return _qfi_fidelity_fd(rho_minus, rho_center, rho_plus, delta)
    raise MetrologyError(f"unknown method {method!r}")


def qfi_cross_checked(
    rho_minus: np.ndarray,
    rho_center: np.ndarray,
    rho_plus: np.ndarray,
    delta: float,
    max_rel_disagreement: float = 0.01,
) -> tuple[float, float]:
    """(SLD, fidelity-FD) QFI pair; rejects the step size if they disagree."""
    i_sld = qfi(rho_minus, rho_center, rho_plus, delta, method="sld")
    i_fid = qfi(rho_minus, rho_center, rho_plus, delta, method="fidelity_fd")
    scale = max(abs(i_sld), abs(i_fid), np.finfo(float).tiny)
    if abs(i_sld - i_fid) / scale > max_rel_disagreement:
        raise MetrologyError(
            f"QFI methods disagree by {abs(i_sld - i_fid) / scale:.2%} "
            f"(sld={i_sld:.6e}, fidelity_fd={i_fid:.6e}); delta too large"
        )
    return i_sld, i_fid


def fisher_information(
    rho_minus: np.ndarray,
    rho_center: np.ndarray,
    rho_plus: np.ndarray,
    delta: float,
    povm: Povm,
) -> float:
    """Classical Fisher information of a POVM, central differences in delta.

    Outcomes with center probability below 1e-14 are dropped (they carry
    no resolvable information at double precision).
    """
    if delta <= 0:
        raise MetrologyError("delta must be positive")
    p_minus = povm.probabilities(_check_state(rho_minus, "rho_minus"))
    p_center = povm.probabilities(_check_state(rho_center, "rho_center"))
    p_plus = povm.probabilities(_check_state(rho_plus, "rho_plus"))
    dp = (p_plus - p_minus) / (2 * delta)
    keep = p_center > _PROB_FLOOR
    return float(np.sum(dp[keep] ** 2 / p_center[keep]))


def sz_povm(space: CoupledSpace | None = None) -> Povm:
    """Two-outcome projective measurement of the electron spin S_z."""
    space = space or coupled_space()
    w, v = np.linalg.eigh(space.sz)
    up = v[:, w > 0]
    pi_up = up @ up.conj().T
    pi_down = np.eye(space.dim) - pi_up
    return Povm(elements=(pi_up, pi_down), name="sz")


def rescaled(info: float, t: float) -> float:
    """Information per unit interrogation time, I/t."""
    if t <= 0:
        raise MetrologyError("t must be positive")
    return info / t


def delta_b(rescaled_info: float, n_atoms: float) -> float:
    """Precision bound 1/sqrt(n * I/t) in T/sqrtHz."""
    if n_atoms <= 0:
        raise MetrologyError("n_atoms must be positive")
    if rescaled_info <= 0:
        return math.inf
    return 1.0 / math.sqrt(n_atoms * rescaled_info)


def precision_series(
    traj_minus: StateTrajectory,
    traj_center: StateTrajectory,
    traj_plus: StateTrajectory,
    delta: float,
    povm: Povm,
    n_atoms: float,
) -> PrecisionSeries:
    """Information and precision curves from three field-offset trajectories.

    Snapshots at t = 0 are skipped (rescaling is undefined there).  The
    classical Fisher information must not exceed the QFI; a violation
    beyond 1e-6 relative indicates inconsistent inputs and is rejected.
    """
    if not (
        len(traj_minus) == len(traj_center) == len(traj_plus)
        and np.array_equal(traj_minus.times, traj_center.times)
        and np.array_equal(traj_center.times, traj_plus.times)
    ):
        raise MetrologyError("trajectories must share identical snapshot times")
    keep = traj_center.times > 0
    times = traj_center.times[keep]
    if times.size == 0:
        raise MetrologyError("no snapshots at positive times")

    q = np.empty(times.size)
    c = np.empty(times.size)
    for i, idx in enumerate(np.nonzero(keep)[0]):
        rm = traj_minus.states[idx]
        rc = traj_center.states[idx]
        rp = traj_plus.states[idx]
        q[i] = qfi(rm, rc, rp, delta, method="sld")
        c[i] = fisher_information(rm, rc, rp, delta, povm)
        scale = max(q[i], np.finfo(float).tiny)
        if c[i] > q[i] + 1e-6 * scale + 1e-12:
            raise MetrologyError(
                f"classical Fisher {c[i]:.6e} exceeds QFI {q[i]:.6e} at t={times[i]}"
            )

    q_resc = q / times
    c_resc = c / times
    db_opt = np.array([delta_b(v, n_atoms) for v in q_resc])
    db_sz = np.array([delta_b(v, n_atoms) for v in c_resc])
    return PrecisionSeries(
        times=times,
        qfi=q,
        qfi_rescaled=q_resc,
        fisher_sz=c,
        fisher_sz_rescaled=c_resc,
        delta_b_optimal=db_opt,
        delta_b_sz=db_sz,
        n_atoms=float(n_atoms),
        params_tag=traj_center.params_tag,
    )
