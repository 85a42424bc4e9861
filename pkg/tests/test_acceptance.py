"""Acceptance gate: the headline requirements, one PASS/FAIL line each.

Each test prints exactly one "CRITERION n: PASS/FAIL ..." line on the real
stdout (bypassing capture) and then asserts, so a scan of the output gives
the full scoreboard even when one criterion fails.

The big fixture runs the default 60 s comparison once (about 20 minutes);
criteria 1, 2, 4 and 6 all read from it.
"""

import csv
import io
import itertools
import json
import math
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from serfkick import cli
from serfkick.angular import clebsch_gordan, coupled_space, wigner6j
from serfkick.config import config_from_dict
from serfkick.dynamics import (
    MagnetometerParams,
    PulseSchedule,
    SerfModel,
    larmor_frequency,
    thermal_state,
)
from serfkick.kickedtop import (
    KickedTopParams,
    floquet_operator,
    rotation_angle_qfi,
    stretched_state,
)
from serfkick.metrology import fisher_information, qfi, sz_povm

from oracles import cg_oracle, sixj_oracle, wigner_d_oracle


@pytest.fixture
def report(request):
    """Scoreboard writer reaching the real terminal despite fd capture."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def _report(n: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
        if tr is not None:
            tr.write_line("\n" + line)
        else:
            print(line, file=sys.__stdout__, flush=True)
        assert ok, line

    return _report


def read_series(path):
    with open(path) as fh:
        fh.readline()  # schema comment
        rows = list(csv.DictReader(fh))
    curves = {}
    for row in rows:
        arm = curves.setdefault(row["scenario"], {"t": [], "q": []})
        arm["t"].append(float(row["time"]))
        arm["q"].append(float(row["qfi_rescaled"]))
    return {k: (np.array(v["t"]), np.array(v["q"])) for k, v in curves.items()}


# ---------------------------------------------------------------------------
# shared runs


@pytest.fixture(scope="session")
def full_compare(tmp_path_factory):
    """Default comparison scenario, run once; wall time is part of criterion 1."""
    out = tmp_path_factory.mktemp("acceptance")
    cfg = config_from_dict({"output_dir": str(out)})
    t0 = time.monotonic()
    artifacts, summary = cli.run_serf(cfg, "serf_compare", converge=False)
    wall = time.monotonic() - t0
    return artifacts, summary, wall


@pytest.fixture(scope="session")
def snapshot_triple():
    """100 field-derivative snapshots of the plain (unkicked) magnetometer.

    fd_delta_rel is widened to 1e-2 so the fidelity route resolves the
    earliest snapshots above double-precision roundoff.
    """
    cfg = config_from_dict(
        {
            "kicks_enabled": False,
            "total_time_s": 10.0,
            "snapshot_stride": 100,
            "fd_delta_rel": 1e-2,
        }
    )
    model = SerfModel(cfg.params, cfg.schedule)
    rho0 = thermal_state(cfg.params.polarization_q)
    b = cfg.params.b_field
    delta = cfg.fd_delta_rel * b
    results = model.evolve_fields(
        rho0, (b - delta, b, b + delta), cfg.total_time,
        snapshot_stride=cfg.snapshot_stride,
    )
    return results, delta


@pytest.fixture(scope="session")
def convergence_summary(tmp_path_factory):
    """Kicked single-arm run with the dt/delta/Doppler convergence variants.

    A 2 s window keeps the four extra trajectories affordable; the step and
    grid errors it probes do not depend on the horizon.
    """
    out = tmp_path_factory.mktemp("converge")
    cfg = config_from_dict(
        {"scenario": "serf_single", "total_time_s": 2.0, "output_dir": str(out)}
    )
    _, summary = cli.run_serf(cfg, "serf_single", converge=True)
    return summary


# ---------------------------------------------------------------------------
# criteria


def test_criterion_01_improvement_windows(report, full_compare):
    _, summary, wall = full_compare
    imp = summary["improvements"]
    opt, sz = imp["optimal_percent"], imp["sz_percent"]
    ok = 16.0 <= opt <= 46.0 and 50.0 <= sz <= 86.0 and wall <= 1800.0
    report(
        1,
        ok,
        f"improvement optimal {opt:.1f}% (want 16..46), S_z {sz:.1f}% "
        f"(want 50..86), wall {wall / 60:.1f} min (limit 30)",
    )


def test_criterion_02_kick_delays_the_optimum(report, full_compare):
    artifacts, _, _ = full_compare
    curves = read_series(artifacts.series_path)
    t_u, q_u = curves["unkicked"]
    t_k, q_k = curves["kicked"]
    i_u = int(np.argmax(q_u))
    interior = 0 < i_u < len(q_u) - 1
    # same snapshot grid on both arms; forward difference of the kicked
    # curve at the unkicked optimum should still be positive
    assert np.allclose(t_u, t_k)
    rising = q_k[i_u + 1] - q_k[i_u] > 0 if i_u + 1 < len(q_k) else False
    ok = interior and rising
    report(
        2,
        ok,
        f"unkicked optimum interior={interior} at t={t_u[i_u]:.2f} s; "
        f"kicked curve rising there={rising} "
        f"(forward difference {q_k[i_u + 1] - q_k[i_u]:+.3e})",
    )


def test_criterion_03_larmor_modes_agree_to_factor_4(report):
    params = MagnetometerParams().validate()
    configured = larmor_frequency(params)
    formula = larmor_frequency(replace(params, larmor_mode="formula"))
    ratio = formula / configured
    ok = 0.25 <= ratio <= 4.0
    report(3, ok, f"formula/configured Larmor ratio {ratio:.4f} (want within x4)")


def test_criterion_04_kick_strength_window(report, full_compare):
    _, summary, _ = full_compare
    k = summary["curves"]["kicked"]["effective_kick_strength"]
    ok = 4.9e-4 <= k <= 8.1e-4
    report(4, ok, f"effective kick strength {k:.3e} (want 4.9e-4..8.1e-4)")


def test_criterion_05_coupling_algebra_vs_oracles(report):
    t0 = time.monotonic()
    spins = [t / 2 for t in range(0, 9)]  # 0..4
    worst_cg = 0.0
    for j1, j2 in itertools.product(spins, repeat=2):
        for tj in range(round(2 * (j1 + j2)), round(2 * abs(j1 - j2)) - 1, -2):
            for tm in range(-tj, tj + 1, 2):
                for tm1 in range(-round(2 * j1), round(2 * j1) + 1, 2):
                    m, m1 = tm / 2, tm1 / 2
                    m2 = m - m1
                    if abs(m2) > j2:
                        continue
                    got = clebsch_gordan(j1, m1, j2, m2, tj / 2, m)
                    worst_cg = max(worst_cg, abs(got - cg_oracle(j1, m1, j2, m2, tj / 2, m)))

    def tri(x, y, z):
        return abs(x - y) <= z <= x + y and (x + y + z) % 2 == 0

    worst_6j = 0.0
    count = 0
    for t in itertools.product(range(0, 9), repeat=6):
        ta, tb, tc, td, te, tf = t
        if not (tri(ta, tb, tc) and tri(tc, td, te) and tri(tb, td, tf) and tri(ta, tf, te)):
            continue
        args = [x / 2 for x in t]
        worst_6j = max(worst_6j, abs(wigner6j(*args) - sixj_oracle(*args)))
        count += 1
    wall = time.monotonic() - t0
    ok = worst_cg < 1e-12 and worst_6j < 1e-12 and count > 10000 and wall < 120.0
    report(
        5,
        ok,
        f"max |CG err| {worst_cg:.1e}, max |6j err| {worst_6j:.1e} over "
        f"{count} admissible 6j symbols in {wall:.1f} s (want <1e-12)",
    )


def test_criterion_06_numerical_health(report, full_compare):
    _, summary, _ = full_compare
    worst = {"max_trace_drift": 0.0, "max_hermiticity_drift": 0.0, "min_eigenvalue": 0.0}
    for health in summary["numerical_health"].values():
        worst["max_trace_drift"] = max(worst["max_trace_drift"], health["max_trace_drift"])
        worst["max_hermiticity_drift"] = max(
            worst["max_hermiticity_drift"], health["max_hermiticity_drift"]
        )
        worst["min_eigenvalue"] = min(worst["min_eigenvalue"], health["min_eigenvalue"])
    ok = (
        worst["max_trace_drift"] <= 1e-6
        and worst["max_hermiticity_drift"] <= 1e-10
        and worst["min_eigenvalue"] >= -1e-8
    )
    report(
        6,
        ok,
        f"trace drift {worst['max_trace_drift']:.1e} (<=1e-6), hermiticity "
        f"{worst['max_hermiticity_drift']:.1e} (<=1e-10), min eig "
        f"{worst['min_eigenvalue']:.1e} (>=-1e-8)",
    )


def test_criterion_07_identity_fixed_point(report):
    model = SerfModel(MagnetometerParams().validate(), PulseSchedule().validate())
    rho = np.eye(16, dtype=complex) / 16
    residual = float(np.max(np.abs(model.averaged_master_rhs(rho, laser_on=False))))
    ok = residual < 1e-14
    report(7, ok, f"laser-off generator on I/16: max |rhs| {residual:.1e} (<1e-14)")


def test_criterion_08_qfi_estimators(report, snapshot_triple):
    # pure rotation: QFI must equal 4 Var(Fy)
    space = coupled_space()
    fy = space.fy
    rng = np.random.default_rng(7)
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    psi /= np.linalg.norm(psi)
    w, v = np.linalg.eigh(fy)

    def rotated(theta):
        u = (v * np.exp(-1j * theta * w)) @ v.conj().T
        chi = u @ psi
        return np.outer(chi, chi.conj())

    eps = 3e-6
    got = qfi(rotated(-eps), rotated(0.0), rotated(eps), eps, method="sld")
    var = np.vdot(psi, fy @ (fy @ psi)).real - np.vdot(psi, fy @ psi).real ** 2
    rot_err = abs(got - 4 * var) / (4 * var)

    # magnetometer snapshots: the two mixed-state routes must agree and the
    # S_z readout can never beat the quantum bound
    results, delta = snapshot_triple
    states = [r.trajectory.states for r in results]
    n = states[1].shape[0]
    povm = sz_povm()
    worst_pair = 0.0
    fisher_ok = True
    for i in range(n):
        triple = (states[0][i], states[1][i], states[2][i])
        i_sld = qfi(*triple, delta, method="sld")
        i_fid = qfi(*triple, delta, method="fidelity_fd")
        worst_pair = max(worst_pair, abs(i_sld - i_fid) / max(i_sld, i_fid))
        f_sz = fisher_information(*triple, delta, povm)
        if f_sz > i_sld * (1 + 1e-6):
            fisher_ok = False
    ok = rot_err < 1e-8 and worst_pair < 1e-3 and fisher_ok and n == 100
    report(
        8,
        ok,
        f"pure-rotation QFI rel err {rot_err:.1e} (<1e-8); SLD vs fidelity "
        f"worst rel gap {worst_pair:.1e} over {n} snapshots (<1e-3); "
        f"Fisher<=QFI everywhere: {fisher_ok}",
    )


def test_criterion_09_stroboscopic_rotation_qfi(report):
    f = 3
    worst_u = 0.0
    for alpha in (0.3, 0.5, 1.2):
        u = floquet_operator(KickedTopParams.create(f, alpha, 0.0))
        worst_u = max(worst_u, float(np.max(np.abs(u - wigner_d_oracle(f, alpha)))))
    params = KickedTopParams.create(f, 0.5, 0.0)
    psi = stretched_state(f)
    worst_q = 0.0
    for n in range(1, 101):
        got = rotation_angle_qfi(params, psi, n)
        want = 2 * n * n * f  # 4 n^2 Var(Fy), stretched-state variance f/2
        worst_q = max(worst_q, abs(got - want) / want)
    ok = worst_u < 1e-13 and worst_q < 1e-8
    report(
        9,
        ok,
        f"k=0 Floquet vs rotation {worst_u:.1e} (<1e-13); stroboscopic QFI "
        f"vs 4 n^2 Var rel err {worst_q:.1e} for n<=100 (<1e-8)",
    )


def test_criterion_10_convergence(report, convergence_summary):
    block = convergence_summary["convergence"]
    rels = [
        arm["rel_change"]
        for variant in ("dt_half", "delta_half", "doppler_double")
        for arm in block[variant].values()
    ]
    worst = max(rels)
    ok = block["all_within_tolerance"] and worst < cli.CONVERGENCE_TOL
    report(
        10,
        ok,
        f"dt/delta/Doppler halving-doubling: worst peak shift {worst:.2%} "
        f"(<{cli.CONVERGENCE_TOL:.0%})",
    )
