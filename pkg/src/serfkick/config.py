"""Configuration ingestion for the command-line tool.

Config files are JSON objects whose keys carry explicit units in their
names (b_field_T, tau_ms, i_kick_mw_cm2, ...).  This module is the only
place where those units are converted to the internal SI/angular-frequency
conventions of :mod:`serfkick.dynamics`; everything downstream is SI.

An empty file (or ``{}``) yields the full default configuration.  Unknown
keys are errors, not warnings: silently ignored typos in physics inputs
are worse than a failed run.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any

from .dynamics import MagnetometerParams, PulseSchedule, larmor_frequency

_TWO_PI = 2 * math.pi

SCENARIOS = ("serf_compare", "serf_single", "kicked_top_sweep")

# Minimum spin-exchange to Larmor ratio for the magnetometer to sit in
# the spin-exchange relaxation-free regime.
SERF_MIN_RATIO = 1e3


class ConfigError(ValueError):
    pass


# Defaults in config units.  These reproduce the reference configuration:
# tau = 1 ms with 2 us pulses of 0.1 mW/cm^2 tuned halfway between the
# excited hyperfine components, vapor at 294 K and 2e10 atoms/cm^3 with
# q = 0.95 polarization in a 4e-14 T field.
DEFAULTS: dict[str, Any] = {
    "r_se_hz": 12.0,
    "r_sd_hz": 0.12,
    "b_field_T": 4e-14,
    "polarization_q": 0.95,
    "temperature_K": 294.0,
    "density_per_cm3": 2e10,
    "doppler_fwhm_mhz": 357.0,
    "doppler_points": 21,
    "doppler_sigma_cut": 3.0,
    "dt_free_us": 10.0,
    "dt_pulse_ns": 20.0,
    "larmor_mode": "configured",
    "larmor_configured_hz": 0.44e-3,
    "larmor_reference_b_T": 4e-14,
    "larmor_form": "literal",
    "hermitize_each_step": True,
    "renormalize_trace": True,
    "hyperfine_commutator": True,
    "se_symmetrized": True,
    "tau_ms": 1.0,
    "pulse_duration_us": 2.0,
    "i_kick_mw_cm2": 0.1,
    "detuning_34_mhz": -584.0,
    "polarization_axis": [1.0, 0.0, 0.0],
    "propagation_axis": [0.0, 0.0, 1.0],
    "kicks_enabled": True,
    # The reference curves need to bracket the unkicked rescaled-QFI
    # maximum (~57 s under default decay rates); see the bracket check
    # in the compare scenario.
    "total_time_s": 60.0,
    "snapshot_stride": 10,
    "fd_delta_rel": 1e-4,
    "scenario": "serf_compare",
    "output_dir": "results",
    "worker_count": 1,
    "kicked_top": {
        "f": 3,
        "alphas": [0.5],
        "ks": [0.0, 0.5, 1.5, 3.0],
        "ns": [0, 1, 2, 5, 10, 20, 50, 100],
    },
}


@dataclass(frozen=True)
class KickedTopSweep:
    f: int
    alphas: tuple[float, ...]
    ks: tuple[float, ...]
    ns: tuple[int, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    params: MagnetometerParams
    schedule: PulseSchedule
    total_time: float  # s
    snapshot_stride: int
    fd_delta_rel: float
    scenario: str
    output_dir: str
    worker_count: int
    kicked_top: KickedTopSweep
    source: dict[str, Any]  # normalized config-unit dict, defaults filled

    @property
    def n_atoms(self) -> float:
        """Atoms in the 1 cm^3 reference volume used for delta-B."""
        return self.params.density * 1e-6

    def fingerprint(self) -> str:
        return hashlib.sha256(
            json.dumps(self.source, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()

    def serf_ratio(self) -> float:
        """Spin-exchange rate over Larmor frequency at the configured field."""
        return self.params.r_se / larmor_frequency(self.params)


def default_config_dict() -> dict[str, Any]:
    return json.loads(json.dumps(DEFAULTS))


def emit_default_config() -> str:
    """JSON text of the built-in defaults; loading it reproduces them."""
    return json.dumps(DEFAULTS, indent=2) + "\n"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _number(raw: dict, key: str, positive: bool = False, nonnegative: bool = False) -> float:
    v = raw[key]
    _require(isinstance(v, (int, float)) and not isinstance(v, bool), f"{key} must be a number")
    v = float(v)
    _require(math.isfinite(v), f"{key} must be finite")
    if positive:
        _require(v > 0, f"{key} must be > 0")
    if nonnegative:
        _require(v >= 0, f"{key} must be >= 0")
    return v


def _integer(raw: dict, key: str, minimum: int) -> int:
    v = raw[key]
    _require(isinstance(v, int) and not isinstance(v, bool), f"{key} must be an integer")
    _require(v >= minimum, f"{key} must be >= {minimum}")
    return v


def _flag(raw: dict, key: str) -> bool:
    v = raw[key]
    _require(isinstance(v, bool), f"{key} must be true or false")
    return v


def _axis(raw: dict, key: str) -> tuple[float, float, float]:
    v = raw[key]
    _require(
        isinstance(v, list) and len(v) == 3
        and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v),
        f"{key} must be a list of three numbers",
    )
    return (float(v[0]), float(v[1]), float(v[2]))


def _kicked_top(raw: Any) -> KickedTopSweep:
    _require(isinstance(raw, dict), "kicked_top must be an object")
    defaults = DEFAULTS["kicked_top"]
    unknown = set(raw) - set(defaults)
    _require(not unknown, f"unknown kicked_top keys: {sorted(unknown)}")
    merged = {**defaults, **raw}
    f = merged["f"]
    _require(isinstance(f, int) and not isinstance(f, bool) and f >= 1, "kicked_top.f must be a positive integer")
    for name in ("alphas", "ks"):
        vals = merged[name]
        _require(
            isinstance(vals, list) and vals
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in vals),
            f"kicked_top.{name} must be a non-empty list of finite numbers",
        )
    ns = merged["ns"]
    _require(
        isinstance(ns, list) and ns
        and all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in ns),
        "kicked_top.ns must be a non-empty list of integers >= 0",
    )
    return KickedTopSweep(
        f=f,
        alphas=tuple(float(a) for a in merged["alphas"]),
        ks=tuple(float(k) for k in merged["ks"]),
        ns=tuple(int(n) for n in ns),
    )


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Validate a config-unit dict (possibly partial) into an ExperimentConfig."""
    _require(isinstance(raw, dict), "config root must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    merged: dict[str, Any] = {**default_config_dict(), **raw}
    if "kicked_top" in raw:
        sweep = _kicked_top(raw["kicked_top"])
        merged["kicked_top"] = {
            "f": sweep.f,
            "alphas": list(sweep.alphas),
            "ks": list(sweep.ks),
            "ns": list(sweep.ns),
        }
    else:
        sweep = _kicked_top({})

    larmor_mode = merged["larmor_mode"]
    _require(larmor_mode in ("configured", "formula"), "larmor_mode must be 'configured' or 'formula'")
    larmor_form = merged["larmor_form"]
    _require(larmor_form in ("literal", "signed"), "larmor_form must be 'literal' or 'signed'")
    scenario = merged["scenario"]
    _require(scenario in SCENARIOS, f"scenario must be one of {SCENARIOS}")
    _require(isinstance(merged["output_dir"], str) and merged["output_dir"], "output_dir must be a non-empty string")

    try:
        params = MagnetometerParams(
            r_se=_number(merged, "r_se_hz", nonnegative=True),
            r_sd=_number(merged, "r_sd_hz", nonnegative=True),
            b_field=_number(merged, "b_field_T", positive=True),
            polarization_q=_number(merged, "polarization_q", nonnegative=True),
            temperature=_number(merged, "temperature_K", positive=True),
            density=_number(merged, "density_per_cm3", positive=True) * 1e6,
            doppler_fwhm=_TWO_PI * 1e6 * _number(merged, "doppler_fwhm_mhz", nonnegative=True),
            doppler_points=_integer(merged, "doppler_points", 1),
            doppler_sigma_cut=_number(merged, "doppler_sigma_cut", positive=True),
            dt_free=1e-6 * _number(merged, "dt_free_us", positive=True),
            dt_pulse=1e-9 * _number(merged, "dt_pulse_ns", positive=True),
            larmor_mode=larmor_mode,
            larmor_configured=_TWO_PI * _number(merged, "larmor_configured_hz", positive=True),
            larmor_reference_b=_number(merged, "larmor_reference_b_T", positive=True),
            larmor_form=larmor_form,
            hermitize_each_step=_flag(merged, "hermitize_each_step"),
            renormalize_trace=_flag(merged, "renormalize_trace"),
            hyperfine_commutator=_flag(merged, "hyperfine_commutator"),
            se_symmetrized=_flag(merged, "se_symmetrized"),
        ).validate()
        schedule = PulseSchedule(
            period_tau=1e-3 * _number(merged, "tau_ms", positive=True),
            pulse_duration=1e-6 * _number(merged, "pulse_duration_us", positive=True),
            # 1 mW/cm^2 = 10 W/m^2
            i_kick=10.0 * _number(merged, "i_kick_mw_cm2", nonnegative=True),
            detuning_34=_TWO_PI * 1e6 * _number(merged, "detuning_34_mhz"),
            polarization=_axis(merged, "polarization_axis"),
            propagation=_axis(merged, "propagation_axis"),
            kicks_enabled=_flag(merged, "kicks_enabled"),
        ).validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    total_time = _number(merged, "total_time_s", positive=True)
    stride = _integer(merged, "snapshot_stride", 1)
    fd_delta_rel = _number(merged, "fd_delta_rel", positive=True)
    _require(fd_delta_rel < 1, "fd_delta_rel must be well below 1")
    workers = _integer(merged, "worker_count", 1)
    n_periods = total_time / schedule.period_tau
    _require(
        abs(n_periods - round(n_periods)) < 1e-9 and round(n_periods) >= 1,
        "total_time_s must be a positive integer multiple of tau_ms",
    )
    _require(
        params.dt_pulse <= schedule.pulse_duration,
        "dt_pulse_ns must not exceed pulse_duration_us",
    )
    _require(
        params.dt_free <= schedule.period_tau - schedule.pulse_duration,
        "dt_free_us must not exceed the free segment tau - pulse_duration",
    )

    return ExperimentConfig(
        params=params,
        schedule=schedule,
        total_time=total_time,
        snapshot_stride=stride,
        fd_delta_rel=fd_delta_rel,
        scenario=scenario,
        output_dir=merged["output_dir"],
        worker_count=workers,
        kicked_top=sweep,
        source=merged,
    )


def load_config(path: str | None) -> ExperimentConfig:
    """Read and validate a JSON config file; None means built-in defaults."""
    if path is None:
        return config_from_dict({})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not text.strip():
        return config_from_dict({})
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def serf_warning(config: ExperimentConfig) -> str | None:
    """Text of the SERF-regime violation warning, or None when satisfied."""
    ratio = config.serf_ratio()
    if ratio > SERF_MIN_RATIO:
        return None
    return (
        f"SERF condition violated: r_se / larmor = {ratio:.3g} <= {SERF_MIN_RATIO:.0g}; "
        "spin-exchange no longer dominates precession"
    )
