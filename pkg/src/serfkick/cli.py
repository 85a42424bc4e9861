"""Command-line entry point: scenario orchestration and result files.

Scenarios
---------
* serf_compare: the magnetometer with and without light kicks, each run
  as a field triple B - delta, B, B + delta for finite-difference Fisher
  information; emits both curves plus improvement percentages.
* serf_single: one arm only (kicks as configured), no improvements.
* kicked_top_sweep: pure-state idealized-model grid over (alpha, k, n).

Each run writes a series CSV, a JSON summary, and a per-period log, all
atomically (temp file + rename).  With worker_count = 1 the bytes are a
pure function of the config:  no timestamps, no machine identifiers.

Exit codes: 0 success, 1 configuration/validation error, 2 numerical
failure (integration abort, non-finite output, or an unbracketed
unkicked rescaled-QFI maximum in serf_compare).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, SCENARIOS, config_from_dict, load_config, serf_warning
from .dynamics import DynamicsError, IntegrationError, SerfModel, thermal_state
from .kickedtop import KickedTopParams, rotation_angle_qfi, stretched_state
from .metrology import MetrologyError, precision_series, sz_povm

SERIES_SCHEMA = "serf-series/1"
SWEEP_SCHEMA = "kicked-top-sweep/1"
SUMMARY_SCHEMA = "serf-summary/1"

SERIES_HEADER = (
    "time",
    "qfi",
    "qfi_rescaled",
    "fisher_sz",
    "fisher_sz_rescaled",
    "delta_b_optimal",
    "delta_b_sz",
    "scenario",
)
SWEEP_HEADER = ("f", "alpha", "k", "n", "qfi_alpha")

CONVERGENCE_TOL = 0.01

# Convergence variants as config-dict edits (all in config units).
_VARIANTS = ("dt_half", "delta_half", "doppler_double")


@dataclass(frozen=True)
class RunArtifacts:
    series_path: str
    summary_path: str
    log_path: str


def _fmt(x: float) -> str:
    return f"{x:.12e}"


def _variant_source(source: dict[str, Any], variant: str) -> dict[str, Any]:
    out = json.loads(json.dumps(source))
    if variant == "base":
        pass
    elif variant == "dt_half":
        out["dt_free_us"] = out["dt_free_us"] / 2
        out["dt_pulse_ns"] = out["dt_pulse_ns"] / 2
    elif variant == "delta_half":
        out["fd_delta_rel"] = out["fd_delta_rel"] / 2
    elif variant == "doppler_double":
        out["doppler_points"] = out["doppler_points"] * 2
    else:
        raise ValueError(f"unknown variant {variant}")
    return out


def _variant_matters(variant: str, kicks_enabled: bool) -> bool:
    # Doppler nodes enter only through the pulse generator; an arm that
    # never switches the laser on is bit-identical under node doubling.
    if variant == "doppler_double":
        return kicks_enabled
    return True


def _run_arm(task: dict[str, Any]) -> dict[str, Any]:
    """Evolve one field triple and reduce it to a precision series.

    Runs inside a worker process; everything in and out must pickle.
    """
    cfg = config_from_dict(task["source"])
    params, schedule = cfg.params, cfg.schedule
    model = SerfModel(params, schedule)
    rho0 = thermal_state(params.polarization_q)
    delta = cfg.fd_delta_rel * params.b_field
    log = io.StringIO()
    log.write(
        f"# arm={task['key']} kicks={'on' if schedule.kicks_enabled else 'off'} "
        f"delta_b={delta:.6e} T total_time={cfg.total_time} s\n"
    )
    fields = (params.b_field - delta, params.b_field, params.b_field + delta)
    results = model.evolve_fields(
        rho0,
        fields,
        cfg.total_time,
        snapshot_stride=cfg.snapshot_stride,
        log_stream=log,
        tag=task["key"],
    )
    series = precision_series(
        results[0].trajectory,
        results[1].trajectory,
        results[2].trajectory,
        delta,
        sz_povm(),
        cfg.n_atoms,
    )
    diags = [r.diagnostics for r in results]
    return {
        "key": task["key"],
        "series": series,
        "log": log.getvalue(),
        "kick_strength": model.effective_kick_strength() if schedule.kicks_enabled else 0.0,
        "health": {
            "max_trace_drift": max(d.max_trace_drift for d in diags),
            "max_hermiticity_drift": max(d.max_hermiticity_drift for d in diags),
            "min_eigenvalue": min(d.min_eigenvalue for d in diags),
            "cumulative_trace_correction": max(d.cumulative_trace_correction for d in diags),
            "renormalization_count": max(d.renormalization_count for d in diags),
            "steps": diags[0].steps,
        },
    }


def _execute(tasks: list[dict[str, Any]], workers: int) -> dict[str, dict[str, Any]]:
    if workers <= 1 or len(tasks) <= 1:
        results = [_run_arm(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_run_arm, tasks))
    return {r["key"]: r for r in results}


def _curve_stats(arm: dict[str, Any]) -> dict[str, Any]:
    series = arm["series"]
    t_q, v_q = series.peak("qfi_rescaled")
    t_c, v_c = series.peak("fisher_sz_rescaled")
    last = float(series.times[-1])
    return {
        "qfi_rescaled_max": v_q,
        "qfi_rescaled_argmax_s": t_q,
        "fisher_sz_rescaled_max": v_c,
        "fisher_sz_rescaled_argmax_s": t_c,
        "delta_b_optimal_min": float(np.min(series.delta_b_optimal)),
        "delta_b_sz_min": float(np.min(series.delta_b_sz)),
        "qfi_bracketed": t_q < last,
        "fisher_sz_bracketed": t_c < last,
        "effective_kick_strength": arm["kick_strength"],
    }


def _improvement_percent(unkicked_min: float, kicked_min: float) -> float:
    return 100.0 * (unkicked_min - kicked_min) / unkicked_min


def _convergence_block(
    base: dict[str, dict[str, Any]],
    variants: dict[str, dict[str, dict[str, Any]]],
    arm_keys: list[str],
) -> dict[str, Any]:
    block: dict[str, Any] = {}
    all_ok = True
    for variant in _VARIANTS:
        per_arm = {}
        for key in arm_keys:
            ref = base[key]["series"].peak("qfi_rescaled")[1]
            arm_variants = variants[variant]
            if key in arm_variants:
                new = arm_variants[key]["series"].peak("qfi_rescaled")[1]
            else:
                new = ref  # variant provably inert for this arm
            rel = abs(new - ref) / abs(ref)
            ok = rel < CONVERGENCE_TOL
            all_ok = all_ok and ok
            per_arm[key] = {
                "qfi_rescaled_max_base": ref,
                "qfi_rescaled_max_variant": new,
                "rel_change": rel,
                "within_tolerance": ok,
            }
        block[variant] = per_arm
    block["tolerance"] = CONVERGENCE_TOL
    block["all_within_tolerance"] = all_ok
    return block


def _series_csv(arms: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SERIES_SCHEMA} tool=serfkick/{__version__}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SERIES_HEADER)
    for arm in arms:
        series = arm["series"]
        cols = (
            series.times,
            series.qfi,
            series.qfi_rescaled,
            series.fisher_sz,
            series.fisher_sz_rescaled,
            series.delta_b_optimal,
            series.delta_b_sz,
        )
        for col in cols:
            if not np.all(np.isfinite(col)):
                raise IntegrationError(
                    f"non-finite value in series for arm {arm['key']}"
                )
        for i in range(series.times.size):
            writer.writerow([_fmt(float(c[i])) for c in cols] + [arm["key"]])
    return buf.getvalue()


def _sweep_csv(cfg: ExperimentConfig) -> tuple[str, int, float]:
    sweep = cfg.kicked_top
    psi = stretched_state(sweep.f)
    buf = io.StringIO()
    buf.write(f"# schema={SWEEP_SCHEMA} tool=serfkick/{__version__}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    count = 0
    best = 0.0
    for alpha in sweep.alphas:
        for k in sweep.ks:
            params = KickedTopParams.create(sweep.f, alpha, k)
            for n in sweep.ns:
                value = rotation_angle_qfi(params, psi, n)
                best = max(best, value)
                writer.writerow(
                    [str(sweep.f), _fmt(alpha), _fmt(k), str(n), _fmt(value)]
                )
                count += 1
    return buf.getvalue(), count, best


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".serfkick-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.remove(tmp)
        raise


def _write_artifacts(
    out_dir: str,
    scenario: str,
    series_text: str,
    summary: dict[str, Any],
    log_text: str,
) -> RunArtifacts:
    paths = RunArtifacts(
        series_path=os.path.join(out_dir, f"{scenario}_series.csv"),
        summary_path=os.path.join(out_dir, f"{scenario}_summary.json"),
        log_path=os.path.join(out_dir, f"{scenario}.log"),
    )
    written: list[str] = []
    try:
        for path, text in (
            (paths.series_path, series_text),
            (paths.summary_path, json.dumps(summary, indent=2, sort_keys=True) + "\n"),
            (paths.log_path, log_text),
        ):
            _atomic_write(path, text)
            written.append(path)
    except BaseException:
        for path in written:
            with contextlib.suppress(OSError):
                os.remove(path)
        raise
    return paths


def _base_summary(cfg: ExperimentConfig, scenario: str) -> dict[str, Any]:
    return {
        "schema": SUMMARY_SCHEMA,
        "tool": {"name": "serfkick", "version": __version__},
        "config_sha256": cfg.fingerprint(),
        "scenario": scenario,
        "n_atoms": cfg.n_atoms,
        "serf_ratio": cfg.serf_ratio(),
        "warnings": [],
    }


def run_serf(cfg: ExperimentConfig, scenario: str, converge: bool) -> tuple[RunArtifacts, dict[str, Any]]:
    """serf_compare and serf_single share one pipeline; compare has two arms."""
    if scenario == "serf_compare":
        # The "kicked" arm honors the configured kicks_enabled switch, so
        # disabling kicks compares two identical arms (improvements 0).
        arm_kicks = {"kicked": cfg.schedule.kicks_enabled, "unkicked": False}
    else:
        key = "kicked" if cfg.schedule.kicks_enabled else "unkicked"
        arm_kicks = {key: cfg.schedule.kicks_enabled}
    arm_keys = list(arm_kicks)

    tasks = []
    for variant in ("base",) + (_VARIANTS if converge else ()):
        source = _variant_source(cfg.source, variant)
        for key, kicks in arm_kicks.items():
            if variant != "base" and not _variant_matters(variant, kicks):
                continue
            arm_source = dict(source)
            arm_source["kicks_enabled"] = kicks
            tasks.append({"key": f"{variant}/{key}", "source": arm_source})
    results = _execute(tasks, cfg.worker_count)

    base = {}
    for key in arm_keys:
        arm = dict(results[f"base/{key}"])
        arm["key"] = key  # strip the variant prefix for user-facing labels
        base[key] = arm
    summary = _base_summary(cfg, scenario)
    summary["curves"] = {key: _curve_stats(base[key]) for key in arm_keys}
    summary["numerical_health"] = {key: base[key]["health"] for key in arm_keys}

    for key in arm_keys:
        stats = summary["curves"][key]
        if not stats["qfi_bracketed"]:
            msg = f"{key}: rescaled QFI maximum at the final snapshot; extend total_time_s"
            if scenario == "serf_compare" and key == "unkicked":
                raise IntegrationError(msg)
            summary["warnings"].append(msg)
        if not stats["fisher_sz_bracketed"]:
            summary["warnings"].append(
                f"{key}: rescaled S_z Fisher maximum at the final snapshot; "
                "its improvement figure uses the window-end optimum"
            )

    if scenario == "serf_compare":
        ck, cu = summary["curves"]["kicked"], summary["curves"]["unkicked"]
        summary["improvements"] = {
            "optimal_percent": _improvement_percent(
                cu["delta_b_optimal_min"], ck["delta_b_optimal_min"]
            ),
            "sz_percent": _improvement_percent(
                cu["delta_b_sz_min"], ck["delta_b_sz_min"]
            ),
        }

    if converge:
        variants = {
            variant: {
                key: results[f"{variant}/{key}"]
                for key in arm_keys
                if f"{variant}/{key}" in results
            }
            for variant in _VARIANTS
        }
        summary["convergence"] = _convergence_block(base, variants, arm_keys)
        if not summary["convergence"]["all_within_tolerance"]:
            summary["warnings"].append(
                f"convergence check exceeded {CONVERGENCE_TOL:.0%} on at least one arm"
            )

    series_text = _series_csv([base[key] for key in arm_keys])
    log_text = "".join(results[t["key"]]["log"] for t in tasks)
    artifacts = _write_artifacts(cfg.output_dir, scenario, series_text, summary, log_text)
    return artifacts, summary


def run_kicked_top_sweep(cfg: ExperimentConfig) -> tuple[RunArtifacts, dict[str, Any]]:
    series_text, count, best = _sweep_csv(cfg)
    summary = _base_summary(cfg, "kicked_top_sweep")
    summary["rows"] = count
    summary["qfi_alpha_max"] = best
    log_text = f"# kicked_top_sweep rows={count}\n"
    artifacts = _write_artifacts(cfg.output_dir, "kicked_top_sweep", series_text, summary, log_text)
    return artifacts, summary


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    source = dict(cfg.source)
    if args.scenario:
        source["scenario"] = args.scenario
    if args.out:
        source["output_dir"] = args.out
    if args.workers is not None:
        source["worker_count"] = args.workers
    return config_from_dict(source)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="serfkick",
        description="SERF vapor magnetometer simulation with nonlinear light kicks",
    )
    parser.add_argument("--config", metavar="PATH", help="JSON config file (defaults used if omitted)")
    parser.add_argument("--scenario", choices=SCENARIOS, help="override the configured scenario")
    parser.add_argument("--out", metavar="DIR", help="override the configured output directory")
    parser.add_argument("--workers", type=int, metavar="N", help="override the configured worker count")
    parser.add_argument("--strict", action="store_true", help="escalate the SERF-regime warning to an error")
    parser.add_argument("--converge", action="store_true", help="rerun with halved dt, halved delta, doubled Doppler nodes")
    args = parser.parse_args(argv)

    try:
        cfg = _apply_overrides(load_config(args.config), args)
        warning = serf_warning(cfg)
        if warning is not None:
            if args.strict:
                raise ConfigError(warning)
            print(f"warning: {warning}", file=sys.stderr)
    except (ConfigError, DynamicsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        if cfg.scenario == "kicked_top_sweep":
            artifacts, summary = run_kicked_top_sweep(cfg)
        else:
            artifacts, summary = run_serf(cfg, cfg.scenario, args.converge)
    except (ConfigError, DynamicsError, MetrologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IntegrationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2

    for warning in summary["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote {artifacts.series_path}")
    print(f"wrote {artifacts.summary_path}")
    print(f"wrote {artifacts.log_path}")
    if "curves" in summary:
        for key, stats in summary["curves"].items():
            print(
                f"{key}: max I_B/t = {stats['qfi_rescaled_max']:.4e} 1/(T^2 s) "
                f"at t = {stats['qfi_rescaled_argmax_s']:.3f} s, "
                f"best dB = {stats['delta_b_optimal_min']:.4e} T/sqrtHz"
            )
        if "improvements" in summary:
            imp = summary["improvements"]
            print(
                f"improvement: optimal {imp['optimal_percent']:.1f}%, "
                f"S_z readout {imp['sz_percent']:.1f}%"
            )
    else:
        print(f"sweep rows: {summary['rows']}, max qfi_alpha = {summary['qfi_alpha_max']:.6e}")
    if "convergence" in summary:
        print(f"convergence within {CONVERGENCE_TOL:.0%}: {summary['convergence']['all_within_tolerance']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
