"""Master-equation dynamics of the kicked cesium SERF magnetometer.

Units
-----
Everything inside this module is SI with hbar factored out: Hamiltonians
and rates are angular frequencies (rad/s), times are seconds, fields are
Tesla, intensities W/m^2.  Unit-suffixed config keys are converted at the
CLI boundary, nowhere else.

The evolved object is the 16-dim ground-manifold density matrix in the
coupled basis of ``angular.coupled_space()``.  Hyperfine coherences
(f=3 x f=4 blocks) dephase at the ~GHz hyperfine splitting and are zeroed
after every Euler step, which also renders the explicit hyperfine
commutator term inert for block-diagonal states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .angular import (
    CoupledSpace,
    SPHERICAL_Q,
    c2_coeff,
    coupled_space,
    dipole_raising,
    spherical_basis_vector,
)
from .metrology import StateTrajectory

__all__ = [
    "PhysicalConstants",
    "CESIUM_D1",
    "MagnetometerParams",
    "PulseSchedule",
    "DopplerGrid",
    "EvolutionDiagnostics",
    "EvolveResult",
    "DynamicsError",
    "IntegrationError",
    "SerfModel",
    "thermal_state",
    "zero_hyperfine_coherences",
    "nuclear_part",
    "larmor_frequency",
    "rabi_frequency",
    "doppler_fwhm_from_temperature",
]

_TWO_PI = 2 * math.pi

# Abort threshold for positivity during integration; softer than the
# -1e-8 monitoring bound so genuine blowups abort while benign Euler
# noise is only reported.
POSITIVITY_ABORT = 1e-6
TRACE_RENORM_THRESHOLD = 1e-9

GROUND_F = (3, 4)
EXCITED_F = (3, 4)


class DynamicsError(ValueError):
    pass


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhysicalConstants:
    """Cesium D1 line and bulk constants (SI, angular frequencies)."""

    gamma_nat: float = _TWO_PI * 4.5612e6  # natural linewidth, rad/s (34.89 ns lifetime)
    i_sat: float = 25.0  # saturation intensity, W/m^2 (2.5 mW/cm^2)
    excited_splitting: float = _TWO_PI * 1167.68e6  # 6P1/2 hyperfine splitting, rad/s
    hyperfine_a: float = _TWO_PI * 2.2981579425e9  # ground magnetic-dipole constant, rad/s
    bohr_magneton_over_hbar: float = 8.7941e10  # rad/(s T)
    g_f3: float = -0.2503  # ground f=3 Lande factor
    g_f4: float = +0.2503  # ground f=4 Lande factor
    atom_mass: float = 2.2069469e-25  # kg
    boltzmann: float = 1.380649e-23  # J/K
    d1_wavelength: float = 894.59296e-9  # m
    # Wall-collision relaxation of an antirelaxation-coated cell, kept for
    # context only; it never enters the generator.
    wall_collision_rate: float = 0.011  # 1/s


CESIUM_D1 = PhysicalConstants()


@dataclass(frozen=True)
class MagnetometerParams:
    """Vapor, field and integrator parameters (internal SI units)."""

    r_se: float = 12.0  # spin-exchange rate, 1/s
    r_sd: float = 0.12  # spin-destruction rate, 1/s
    b_field: float = 4e-14  # T, along y
    polarization_q: float = 0.95  # initial spin polarization, along z
    temperature: float = 294.0  # K
    density: float = 2e16  # atoms/m^3
    doppler_fwhm: float = _TWO_PI * 357e6  # rad/s
    doppler_points: int = 21
    doppler_sigma_cut: float = 3.0
    dt_free: float = 10e-6  # s
    dt_pulse: float = 20e-9  # s
    larmor_mode: str = "configured"  # "configured" | "formula"
    larmor_configured: float = _TWO_PI * 0.44e-3  # rad/s at the reference field
    larmor_reference_b: float = 4e-14  # T
    larmor_form: str = "literal"  # "literal": Omega*F_y | "signed": opposite per manifold
    hermitize_each_step: bool = True
    renormalize_trace: bool = True
    hyperfine_commutator: bool = True
    se_symmetrized: bool = True
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    def validate(self) -> "MagnetometerParams":
        if self.r_se < 0 or self.r_sd < 0:
            raise DynamicsError("relaxation rates must be non-negative")
        if self.b_field <= 0:
            raise DynamicsError("b_field must be positive")
        if not 0 <= self.polarization_q < 1:
            raise DynamicsError("polarization_q must lie in [0, 1)")
        if self.temperature <= 0 or self.density <= 0:
            raise DynamicsError("temperature and density must be positive")
        if self.doppler_fwhm < 0 or self.doppler_points < 1:
            raise DynamicsError("doppler_fwhm must be >= 0 and doppler_points >= 1")
        if self.doppler_sigma_cut <= 0:
            raise DynamicsError("doppler_sigma_cut must be positive")
        if self.dt_free <= 0 or self.dt_pulse <= 0:
            raise DynamicsError("step sizes must be positive")
        if self.larmor_mode not in ("configured", "formula"):
            raise DynamicsError(f"unknown larmor_mode {self.larmor_mode!r}")
        if self.larmor_form not in ("literal", "signed"):
            raise DynamicsError(f"unknown larmor_form {self.larmor_form!r}")
        if self.larmor_reference_b <= 0:
            raise DynamicsError("larmor_reference_b must be positive")
        return self


@dataclass(frozen=True)
class PulseSchedule:
    """Kick-pulse timing and laser parameters."""

    period_tau: float = 1e-3  # s
    pulse_duration: float = 2e-6  # s, pulse occupies [tau - duration, tau)
    i_kick: float = 1.0  # W/m^2 (0.1 mW/cm^2)
    detuning_34: float = -_TWO_PI * 584e6  # rad/s, laser relative to f=3 -> f'=4
    polarization: tuple[float, float, float] = (1.0, 0.0, 0.0)  # linear, x
    propagation: tuple[float, float, float] = (0.0, 0.0, 1.0)  # z
    kicks_enabled: bool = True

    def validate(self) -> "PulseSchedule":
        if self.period_tau <= 0:
            raise DynamicsError("period_tau must be positive")
        if not 0 < self.pulse_duration < self.period_tau:
            raise DynamicsError("pulse_duration must lie inside one period")
        if self.i_kick < 0:
            raise DynamicsError("i_kick must be non-negative")
        pol = np.asarray(self.polarization, dtype=float)
        prop = np.asarray(self.propagation, dtype=float)
        if pol.shape != (3,) or prop.shape != (3,):
            raise DynamicsError("polarization and propagation must be 3-vectors")
        if abs(pol @ pol - 1) > 1e-12 or abs(prop @ prop - 1) > 1e-12:
            raise DynamicsError("polarization and propagation must be unit vectors")
        if abs(pol @ prop) > 1e-12:
            raise DynamicsError("polarization must be orthogonal to propagation")
        return self


@dataclass(frozen=True)
class DopplerGrid:
    """Gauss-Legendre detuning-shift grid under a truncated thermal Gaussian."""

    shifts: np.ndarray  # rad/s
    weights: np.ndarray  # sum to 1

    @staticmethod
    def build(fwhm: float, points: int, sigma_cut: float = 3.0) -> "DopplerGrid":
        if points < 1:
            raise DynamicsError("doppler_points must be >= 1")
        if points == 1 or fwhm == 0.0:
            return DopplerGrid(np.zeros(1), np.ones(1))
        sigma = fwhm / (2 * math.sqrt(2 * math.log(2)))
        nodes, glw = np.polynomial.legendre.leggauss(points)
        shifts = nodes * sigma_cut * sigma
        weights = glw * np.exp(-0.5 * (shifts / sigma) ** 2)
        weights = weights / weights.sum()
        return DopplerGrid(shifts, weights)


@dataclass
class EvolutionDiagnostics:
    """Numerical health counters accumulated over one trajectory."""

    max_trace_drift: float = 0.0  # max |tr-1| before renormalization
    max_hermiticity_drift: float = 0.0  # max removed anti-Hermitian amplitude
    min_eigenvalue: float = math.inf  # smallest eigenvalue at any snapshot check
    cumulative_trace_correction: float = 0.0  # sum of |tr-1| absorbed by renormalization
    renormalization_count: int = 0
    steps: int = 0


@dataclass(frozen=True)
class EvolveResult:
    trajectory: StateTrajectory
    diagnostics: EvolutionDiagnostics


# ---------------------------------------------------------------------------
# stateless helpers


def larmor_frequency(params: MagnetometerParams, b_field: float | None = None) -> float:
    """Larmor angular frequency Omega(B), linear in B in both modes.

    "configured" pins the value at the reference field and scales it;
    "formula" uses |g_f| mu_B B / hbar with the f=4 Lande factor.
    """
    b = params.b_field if b_field is None else b_field
    if b <= 0:
        raise DynamicsError("b_field must be positive")
    if params.larmor_mode == "configured":
        return params.larmor_configured * b / params.larmor_reference_b
    return abs(params.constants.g_f4) * params.constants.bohr_magneton_over_hbar * b


def rabi_frequency(i_kick: float, constants: PhysicalConstants = CESIUM_D1) -> float:
    """Omega = gamma sqrt(I / 2 I_sat)."""
    if i_kick < 0:
        raise DynamicsError("intensity must be non-negative")
    return constants.gamma_nat * math.sqrt(i_kick / (2 * constants.i_sat))


def doppler_fwhm_from_temperature(
    temperature: float, constants: PhysicalConstants = CESIUM_D1
) -> float:
    """Thermal Doppler FWHM of the D1 line, rad/s."""
    omega0 = _TWO_PI * 299792458.0 / constants.d1_wavelength
    return omega0 * math.sqrt(
        8 * math.log(2) * constants.boltzmann * temperature
        / (constants.atom_mass * 299792458.0**2)
    )


def thermal_state(q: float, space: CoupledSpace | None = None) -> np.ndarray:
    """Spin-temperature state exp(beta K_z) exp(beta S_z) / (Z_K Z_S).

    Built diagonally in the product basis and rotated to the coupled
    basis; beta = ln((1+q)/(1-q)).
    """
    if not 0 <= q < 1:
        raise DynamicsError(f"polarization q must lie in [0, 1), got {q}")
    space = space or coupled_space()
    beta = math.log((1 + q) / (1 - q)) if q > 0 else 0.0
    mk = np.arange(3.5, -4.0, -1.0)
    ms = np.array([0.5, -0.5])
    wk = np.exp(beta * mk)
    ws = np.exp(beta * ms)
    diag = np.kron(wk / wk.sum(), ws / ws.sum())
    rho_prod = np.diag(diag).astype(complex)
    cg = space.cg_matrix
    return cg @ rho_prod @ cg.T


def zero_hyperfine_coherences(rho: np.ndarray) -> np.ndarray:
    """Project out the f=3 x f=4 coherence blocks (a pinching map)."""
    out = rho.copy()
    out[:7, 7:] = 0.0
    out[7:, :7] = 0.0
    return out


def nuclear_part(rho: np.ndarray, space: CoupledSpace | None = None) -> np.ndarray:
    """Purely nuclear part phi = rho/4 + sum_i S_i rho S_i."""
    space = space or coupled_space()
    out = rho / 4.0
    for s in space.s_ops:
        out = out + s @ rho @ s
    return out


def _superop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of rho -> a rho b acting on row-major vec(rho)."""
    return np.kron(a, b.T)


def _commutator_superop(h: np.ndarray, dim: int) -> np.ndarray:
    """Matrix of rho -> -i (h rho - rho h^dagger)."""
    eye = np.eye(dim)
    return -1j * (_superop(h, eye) - _superop(eye, h.conj().T))


# ---------------------------------------------------------------------------
# the model


class SerfModel:
    """Precomputed operators and superoperators for one parameter set.

    All public matrix methods return plain 16x16 arrays in the coupled
    basis; the heavy per-configuration objects (Doppler-averaged light
    superoperator, dipole blocks) are built once in the constructor.
    """

    def __init__(self, params: MagnetometerParams, schedule: PulseSchedule):
        self.params = params.validate()
        self.schedule = schedule.validate()
        self.space = coupled_space()
        self.dim = self.space.dim

        c = params.constants
        self.rabi = rabi_frequency(schedule.i_kick, c)
        # Detunings depend on the excited manifold only: f'=4 sits at
        # detuning_34, f'=3 is one excited hyperfine splitting higher.
        self.detunings = {
            (f, fp): schedule.detuning_34 + (c.excited_splitting if fp == 3 else 0.0)
            for f in GROUND_F
            for fp in EXCITED_F
        }
        self.c2 = {(fp, f): c2_coeff(fp, f) for f in GROUND_F for fp in EXCITED_F}

        pol = np.asarray(schedule.polarization, dtype=float)
        f_pol = pol[0] * self.space.fx + pol[1] * self.space.fy + pol[2] * self.space.fz
        f_pol2 = f_pol @ f_pol
        self.f_pol2_blocks = {}
        for f in GROUND_F:
            blk = np.zeros((self.dim, self.dim), dtype=complex)
            s = self.space.block_slice(f)
            blk[s, s] = f_pol2[s, s]
            self.f_pol2_blocks[f] = blk

        # ground <- excited dipole blocks keyed (q, ground f, excited f');
        # struct[q][fp][f] = spherical component q of D+ from f to f'.
        self._dipole_up = {
            (f, fp): dipole_raising(f, fp) for f in GROUND_F for fp in EXCITED_F
        }
        self._pol_spherical = {
            q: complex(pol @ spherical_basis_vector(q).conj()) for q in SPHERICAL_Q
        }

        self._h_larmor_unit = self._build_larmor_unit()
        self._grid = DopplerGrid.build(
            params.doppler_fwhm, params.doppler_points, params.doppler_sigma_cut
        )
        self._light_super_avg: np.ndarray | None = None
        # K.S is exactly block-scalar, (f(f+1) - K(K+1) - s(s+1))/2; using
        # the exact values keeps the huge hyperfine scale from amplifying
        # basis-rotation round-off.
        self._ks_exact = np.array([-2.25] * 7 + [1.75] * 9)

    # -- operator construction ------------------------------------------------

    def _build_larmor_unit(self) -> np.ndarray:
        fy = self.space.fy
        if self.params.larmor_form == "literal":
            return fy.copy()
        out = np.zeros_like(fy)
        s4 = self.space.block_slice(4)
        s3 = self.space.block_slice(3)
        out[s4, s4] = fy[s4, s4]
        out[s3, s3] = -fy[s3, s3]
        return out

    def larmor(self, b_field: float | None = None) -> float:
        return larmor_frequency(self.params, b_field)

    def evolve_fields(
        self,
        rho0: np.ndarray,
        b_fields: Sequence[float],
        total_time: float,
        snapshot_stride: int = 1,
        record_intra_period: int = 1,
        log_stream: IO[str] | None = None,
        tag: str = "",
    ) -> list[EvolveResult]:
        """Evolve one initial state at several field values in lockstep.

        The fields enter only through the Larmor frequency, so the batch
        shares all precomputed laser structure; this is the entry point
        for the B - delta, B, B + delta finite-difference triples.
        """
        omegas = [self.larmor(b) for b in b_fields]
        tags = [f"{tag}[B={b:.6e} T]" if tag else f"B={b:.6e} T" for b in b_fields]
        return self._evolve_batch(
            rho0,
            omegas,
            total_time,
            snapshot_stride=snapshot_stride,
            record_intra_period=record_intra_period,
            log_stream=log_stream,
            params_tags=tags,
        )

    def _light_hamiltonian(self, doppler_shift: float = 0.0) -> np.ndarray:
        """ac-Stark rank-2 term, complex coefficients (non-Hermitian)."""
        gamma = self.params.constants.gamma_nat
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for f in GROUND_F:
            for fp in EXCITED_F:
                den = self.detunings[(f, fp)] + doppler_shift + 0.5j * gamma
                coeff = self.rabi**2 * self.c2[(fp, f)] / (4 * den)
                h = h + coeff * self.f_pol2_blocks[f]
        return h

    def effective_hamiltonian(self, laser_on: bool, doppler_shift: float = 0.0) -> np.ndarray:
        """Larmor term plus (when the laser is on) the ac-Stark term; rad/s."""
        h = self.larmor() * self._h_larmor_unit
        if laser_on:
            h = h + self._light_hamiltonian(doppler_shift)
        return h

    def jump_operators(self, doppler_shift: float = 0.0) -> dict[tuple[int, int, int], np.ndarray]:
        """Optical-pumping operators W keyed (q, f_out, f_in), embedded 16x16.

        W_q^(fb,fa) = sum_f' [Omega/2 / (Delta_(fa,f') + i gamma/2)]
                      (e_q* . D_(fb,f'))  (eps_L . D+_(fa,f'))
        """
        gamma = self.params.constants.gamma_nat
        out = {}
        for iq, q in enumerate(SPHERICAL_Q):
            for fb in GROUND_F:
                for fa in GROUND_F:
                    w = np.zeros((self.dim, self.dim), dtype=complex)
                    sb = self.space.block_slice(fb)
                    sa = self.space.block_slice(fa)
                    for fp in EXCITED_F:
                        den = self.detunings[(fa, fp)] + doppler_shift + 0.5j * gamma
                        up_a = self._dipole_up[(fa, fp)]
                        up_b = self._dipole_up[(fb, fp)]
                        pol_up = sum(
                            self._pol_spherical[qq] * up_a[i]
                            for i, qq in enumerate(SPHERICAL_Q)
                        )
                        w[sb, sa] += (
                            (self.rabi / 2)
                            / den
                            * (up_b[iq].conj().T @ pol_up)
                        )
                    out[(q, fb, fa)] = w
        return out

    def effective_kick_strength(self, f: int = 3) -> float:
        """Dimensionless kicked-top strength accumulated by one pulse."""
        if f not in GROUND_F:
            raise DynamicsError(f"f must be one of {GROUND_F}")
        total = sum(
            self.rabi**2 * self.c2[(fp, f)] / (4 * self.detunings[(f, fp)])
            for fp in EXCITED_F
        )
        return abs(total.real if isinstance(total, complex) else total) * (
            self.schedule.pulse_duration
        ) * (2 * f + 1)

    def doppler_grid(self) -> DopplerGrid:
        return self._grid

    # -- right-hand sides -----------------------------------------------------

    def _free_rhs(self, rho: np.ndarray) -> np.ndarray:
        p = self.params
        space = self.space
        phi = nuclear_part(rho, space)
        s_exp = [float(np.trace(s @ rho).real) for s in space.s_ops]
        a_op = np.eye(self.dim, dtype=complex)
        for sv, s in zip(s_exp, space.s_ops):
            a_op = a_op + 4.0 * sv * s
        if p.se_symmetrized:
            se = 0.5 * (phi @ a_op + a_op @ phi) - rho
        else:
            se = phi @ a_op - rho
        rhs = p.r_se * se + p.r_sd * (phi - rho)

        h = self.larmor() * self._h_larmor_unit
        rhs = rhs - 1j * (h @ rho - rho @ h)
        if p.hyperfine_commutator:
            ks = self._ks_exact
            rhs = rhs - 1j * p.constants.hyperfine_a * (
                ks[:, None] * rho - rho * ks[None, :]
            )
        return rhs

    def _light_rhs(self, rho: np.ndarray, doppler_shift: float = 0.0) -> np.ndarray:
        gamma = self.params.constants.gamma_nat
        h = self._light_hamiltonian(doppler_shift)
        rhs = -1j * (h @ rho - rho @ h.conj().T)
        w = self.jump_operators(doppler_shift)
        feed = np.zeros_like(rho)
        for q in SPHERICAL_Q:
            for fb in GROUND_F:
                for fa in GROUND_F:
                    wm = w[(q, fb, fa)]
                    feed += wm @ rho @ wm.conj().T
            feed += w[(q, 4, 4)] @ rho @ w[(q, 3, 3)].conj().T
            feed += w[(q, 3, 3)] @ rho @ w[(q, 4, 4)].conj().T
        return rhs + gamma * feed

    def master_rhs(self, rho: np.ndarray, laser_on: bool, doppler_shift: float = 0.0) -> np.ndarray:
        """d rho/dt at a single Doppler detuning shift."""
        rhs = self._free_rhs(rho)
        if laser_on:
            rhs = rhs + self._light_rhs(rho, doppler_shift)
        return rhs

    def averaged_master_rhs(self, rho: np.ndarray, laser_on: bool) -> np.ndarray:
        """d rho/dt with laser terms averaged over the Doppler grid."""
        rhs = self._free_rhs(rho)
        if laser_on:
            rhs = rhs + self.light_superop_avg().dot(rho.reshape(-1)).reshape(rho.shape)
        return rhs

    # -- superoperators -------------------------------------------------------

    def _phi_superop(self) -> np.ndarray:
        d = self.dim
        phi = 0.25 * np.eye(d * d, dtype=complex)
        for s in self.space.s_ops:
            phi = phi + _superop(s, s)
        return phi

    def nonlinear_superops(self) -> np.ndarray:
        """Stack N_i of rho -> phi-weighted S_i products for the 4<S>.S term."""
        d = self.dim
        eye = np.eye(d)
        phi = self._phi_superop()
        out = np.empty((3, d * d, d * d), dtype=complex)
        for i, s in enumerate(self.space.s_ops):
            if self.params.se_symmetrized:
                mult = 0.5 * (_superop(s, eye) + _superop(eye, s))
            else:
                mult = _superop(eye, s)
            out[i] = mult @ phi
        return out

    def free_superop(self, omega_larmor: float | None = None) -> np.ndarray:
        """Linear part of the laser-off generator (excludes the <S>.S term)."""
        p = self.params
        d = self.dim
        omega = self.larmor() if omega_larmor is None else omega_larmor
        eye_ss = np.eye(d * d, dtype=complex)
        l = (p.r_se + p.r_sd) * (self._phi_superop() - eye_ss)
        l += _commutator_superop(omega * self._h_larmor_unit, d)
        if p.hyperfine_commutator:
            l += _commutator_superop(
                p.constants.hyperfine_a * np.diag(self._ks_exact), d
            )
        return l

    def larmor_superop_unit(self) -> np.ndarray:
        """Rotation superoperator per unit Larmor frequency."""
        return _commutator_superop(self._h_larmor_unit, self.dim)

    def light_superop(self, doppler_shift: float = 0.0) -> np.ndarray:
        """Laser-linear generator (ac-Stark + feeding) at one detuning shift."""
        d = self.dim
        gamma = self.params.constants.gamma_nat
        l = _commutator_superop(self._light_hamiltonian(doppler_shift), d)
        w = self.jump_operators(doppler_shift)
        for q in SPHERICAL_Q:
            for fb in GROUND_F:
                for fa in GROUND_F:
                    wm = w[(q, fb, fa)]
                    l += gamma * _superop(wm, wm.conj().T)
            l += gamma * _superop(w[(q, 4, 4)], w[(q, 3, 3)].conj().T)
            l += gamma * _superop(w[(q, 3, 3)], w[(q, 4, 4)].conj().T)
        return l

    def light_superop_avg(self) -> np.ndarray:
        """Doppler-averaged laser generator; built once, cached."""
        if self._light_super_avg is None:
            grid = self._grid
            acc = np.zeros((self.dim**2, self.dim**2), dtype=complex)
            for shift, weight in zip(grid.shifts, grid.weights):
                acc += weight * self.light_superop(shift)
            self._light_super_avg = acc
        return self._light_super_avg

    # -- integration ----------------------------------------------------------

    def euler_step(self, rho: np.ndarray, dt: float, laser_on: bool, validate: bool = True) -> np.ndarray:
        """One explicit Euler step with coherence zeroing and cleanups."""
        if dt <= 0:
            raise DynamicsError("dt must be positive")
        out = rho + dt * self.averaged_master_rhs(rho, laser_on)
        out = zero_hyperfine_coherences(out)
        if self.params.hermitize_each_step:
            out = 0.5 * (out + out.conj().T)
        if self.params.renormalize_trace:
            tr = float(np.trace(out).real)
            if abs(tr - 1.0) > TRACE_RENORM_THRESHOLD:
                out = out / tr
        if validate:
            w = np.linalg.eigvalsh(0.5 * (out + out.conj().T))
            if w[0] < -POSITIVITY_ABORT:
                raise IntegrationError(
                    f"positivity violated: min eigenvalue {w[0]:.3e} after a "
                    f"dt={dt:.3e} step (laser_on={laser_on})"
                )
        return out

    def _segments(self) -> list[tuple[int, float, bool]]:
        """Per-period plan: (n_steps, dt, laser_on) with exact boundaries."""
        p, s = self.params, self.schedule
        if not s.kicks_enabled:
            n = max(1, math.ceil(s.period_tau / p.dt_free - 1e-12))
            return [(n, s.period_tau / n, False)]
        free = s.period_tau - s.pulse_duration
        n_free = max(1, math.ceil(free / p.dt_free - 1e-12))
        n_pulse = max(1, math.ceil(s.pulse_duration / p.dt_pulse - 1e-12))
        return [
            (n_free, free / n_free, False),
            (n_pulse, s.pulse_duration / n_pulse, True),
        ]

    def evolve(
        self,
        rho0: np.ndarray,
        total_time: float,
        snapshot_stride: int = 1,
        record_intra_period: int = 1,
        log_stream: IO[str] | None = None,
        params_tag: str = "",
    ) -> EvolveResult:
        """Integrate one trajectory; snapshots at period boundaries.

        total_time must be an integer number of periods.  The initial
        state has its hyperfine coherences zeroed before stepping (the
        vapor ensemble is dephased across the ground hyperfine splitting).
        """
        results = self._evolve_batch(
            rho0,
            [self.larmor()],
            total_time,
            snapshot_stride=snapshot_stride,
            record_intra_period=record_intra_period,
            log_stream=log_stream,
            params_tags=[params_tag],
        )
        return results[0]

    def _evolve_batch(
        self,
        rho0: np.ndarray,
        omegas: Sequence[float],
        total_time: float,
        snapshot_stride: int = 1,
        record_intra_period: int = 1,
        log_stream: IO[str] | None = None,
        params_tags: Sequence[str] | None = None,
    ) -> list[EvolveResult]:
        """Evolve several trajectories differing only in Larmor frequency.

        They share every laser- and relaxation-parameter, so one fused
        generator application per step advances the whole batch; used for
        the B - delta, B, B + delta finite-difference triples.
        """
        p, s = self.params, self.schedule
        n_periods = int(round(total_time / s.period_tau))
        if n_periods < 1 or abs(total_time - n_periods * s.period_tau) > 1e-9 * s.period_tau:
            raise DynamicsError(
                f"total_time {total_time} must be a positive integer multiple "
                f"of the period {s.period_tau}"
            )
        if snapshot_stride < 1 or record_intra_period < 1:
            raise DynamicsError("snapshot_stride and record_intra_period must be >= 1")
        rho0 = np.asarray(rho0, dtype=complex)
        if rho0.shape != (self.dim, self.dim):
            raise DynamicsError(f"rho0 must be {self.dim}x{self.dim}")
        n_traj = len(omegas)
        tags = list(params_tags) if params_tags is not None else [""] * n_traj

        d = self.dim
        segments = self._segments()
        any_laser = any(on for _, _, on in segments)

        # Hot loop works on the trajectory stack (n, 16, 16) with batched
        # 16x16 products; the only large operator, the Doppler-averaged
        # light generator, is restricted to the 130-dim block-diagonal
        # subspace the stepping scheme confines states to.
        s_stack = np.stack(self.space.s_ops)
        svecs = s_stack.transpose(0, 2, 1).reshape(3, d * d)
        h_u = self._h_larmor_unit
        # The hyperfine commutator only populates the f3-f4 coherence
        # blocks (K.S is scalar within each block), and those entries are
        # zeroed again immediately after every Euler update, so the term
        # is skipped here; master_rhs keeps it for generator-level users.
        mask = np.ones((d, d))
        mask[:7, 7:] = 0.0
        mask[7:, :7] = 0.0
        diag_idx = np.arange(d) * (d + 1)
        block_sel = np.flatnonzero(mask.reshape(-1))
        light_t = None
        if any_laser:
            lavg = self.light_superop_avg()
            light_t = lavg[np.ix_(block_sel, block_sel)].T.copy()
        omega_col = np.asarray(omegas, dtype=float)[:, None, None]
        rse, rsd = p.r_se, p.r_sd

        v = np.repeat(
            zero_hyperfine_coherences(rho0)[None, :, :], n_traj, axis=0
        )
        # Step buffers, allocated once; the state update runs in place so
        # vflat stays a live view of v throughout.
        vflat = v.reshape(n_traj, d * d)
        nb = block_sel.size
        sv = np.empty((3, n_traj, d, d), dtype=complex)
        svs = np.empty_like(sv)
        phi = np.empty((n_traj, d, d), dtype=complex)
        t1 = np.empty_like(phi)
        t2 = np.empty_like(phi)
        t3 = np.empty_like(phi)
        rhs = np.empty_like(phi)
        rhs_flat = rhs.reshape(n_traj, d * d)
        a_flat = np.empty((n_traj, d * d), dtype=complex)
        a_m = a_flat.reshape(n_traj, d, d)
        g = np.empty((n_traj, nb), dtype=complex)
        glin = np.empty((n_traj, nb), dtype=complex)
        sexp = np.empty((n_traj, 3), dtype=complex)
        absbuf = np.empty((n_traj, d, d), dtype=float)
        s_flat = s_stack.reshape(3, d * d)
        svb_t = svecs[:, block_sel].T.copy()
        neg_i_omega = -1j * omega_col
        rtot = rse + rsd

        diags = [EvolutionDiagnostics() for _ in range(n_traj)]
        max_trace_drift = np.zeros(n_traj)
        max_herm_drift = 0.0
        cumul_correction = np.zeros(n_traj)
        renorm_count = np.zeros(n_traj, dtype=int)
        total_steps = 0
        times: list[float] = []
        snaps: list[np.ndarray] = []

        def check_and_snapshot(t: float, record: bool) -> None:
            states = v
            for k in range(n_traj):
                w = np.linalg.eigvalsh(states[k])
                diags[k].min_eigenvalue = min(diags[k].min_eigenvalue, float(w[0]))
                if w[0] < -POSITIVITY_ABORT:
                    raise IntegrationError(
                        f"positivity violated at t={t:.6f}s (trajectory {k}): "
                        f"min eigenvalue {w[0]:.3e}"
                    )
            if record:
                times.append(t)
                snaps.append(states.copy())
            if log_stream is not None:
                st = states[0]
                s_exp = [float(np.trace(op @ st).real) for op in self.space.s_ops]
                f_exp = [float(np.trace(op @ st).real) for op in self.space.f_ops]
                log_stream.write(
                    f"t={t:.6f} trace_drift={max_trace_drift[0]:.3e} "
                    f"min_eig={diags[0].min_eigenvalue:.3e} "
                    f"S=({s_exp[0]:+.4e},{s_exp[1]:+.4e},{s_exp[2]:+.4e}) "
                    f"F=({f_exp[0]:+.4e},{f_exp[1]:+.4e},{f_exp[2]:+.4e})\n"
                )

        t = 0.0
        for period in range(1, n_periods + 1):
            for seg_idx, (n_steps, dt, laser_on) in enumerate(segments):
                intra_marks = set()
                if record_intra_period > 1 and seg_idx == 0:
                    intra_marks = {
                        (n_steps * j) // record_intra_period
                        for j in range(1, record_intra_period)
                    }
                for step in range(1, n_steps + 1):
                    np.take(vflat, block_sel, axis=1, out=g)
                    # phi = v/4 + sum_i S_i v S_i, kept as a full matrix:
                    # its coherence block feeds block-diagonal entries
                    # through the nonlinear product below.
                    np.matmul(s_stack[:, None], v[None], out=sv)
                    np.matmul(sv, s_stack[:, None], out=svs)
                    np.sum(svs, axis=0, out=phi)
                    np.multiply(v, 0.25, out=t1)
                    phi += t1
                    np.matmul(g, svb_t, out=sexp)
                    np.matmul(sexp.real, s_flat, out=a_flat)
                    if p.se_symmetrized:
                        np.matmul(phi, a_m, out=t1)
                        np.matmul(a_m, phi, out=t2)
                        t1 += t2
                        t1 *= 2.0 * rse
                    else:
                        np.matmul(phi, a_m, out=t1)
                        t1 *= 4.0 * rse
                    np.subtract(phi, v, out=rhs)
                    rhs *= rtot
                    rhs += t1
                    np.matmul(h_u, v, out=t2)
                    np.matmul(v, h_u, out=t3)
                    t2 -= t3
                    t2 *= neg_i_omega
                    rhs += t2
                    if laser_on:
                        np.matmul(g, light_t, out=glin)
                        rhs_flat[:, block_sel] += glin
                    rhs *= dt
                    v += rhs
                    v[:, :7, 7:] = 0.0
                    v[:, 7:, :7] = 0.0
                    np.conjugate(v.transpose(0, 2, 1), out=t2)
                    np.subtract(v, t2, out=t3)
                    np.abs(t3, out=absbuf)
                    drift = 0.5 * float(absbuf.max())
                    if drift > max_herm_drift:
                        max_herm_drift = drift
                    if p.hermitize_each_step:
                        v += t2
                        v *= 0.5
                    total_steps += 1
                    traces = vflat[:, diag_idx].real.sum(axis=1)
                    dev = np.abs(traces - 1.0)
                    np.maximum(max_trace_drift, dev, out=max_trace_drift)
                    if p.renormalize_trace:
                        need = dev > TRACE_RENORM_THRESHOLD
                        if need.any():
                            v /= np.where(need, traces, 1.0)[:, None, None]
                            cumul_correction += np.where(need, dev, 0.0)
                            renorm_count += need
                    if step in intra_marks:
                        check_and_snapshot(t + step * dt, record=True)
                t += n_steps * dt
            record = (period % snapshot_stride == 0) or period == n_periods
            check_and_snapshot(t, record)

        results = []
        times_arr = np.asarray(times)
        for k in range(n_traj):
            dgs = diags[k]
            dgs.max_trace_drift = float(max_trace_drift[k])
            dgs.max_hermiticity_drift = max_herm_drift
            dgs.cumulative_trace_correction = float(cumul_correction[k])
            dgs.renormalization_count = int(renorm_count[k])
            dgs.steps = total_steps
            traj = StateTrajectory(
                times=times_arr.copy(),
                states=np.stack([sn[k] for sn in snaps]),
                params_tag=tags[k],
            )
            results.append(EvolveResult(trajectory=traj, diagnostics=dgs))
        return results
