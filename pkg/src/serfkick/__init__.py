"""serfkick: SERF cesium-vapor magnetometer simulation with nonlinear light kicks."""

__version__ = "0.1.0"

from .halfint import HalfInt, half
from .angular import (
    clebsch_gordan,
    wigner6j,
    spin_matrices,
    coupled_space,
    o_coeff,
    c2_coeff,
    dipole_raising,
)
from .kickedtop import (
    KickedTopParams,
    floquet_operator,
    evolve_stroboscopic,
    stretched_state,
    rotation_angle_qfi,
)
from .dynamics import (
    CESIUM_D1,
    MagnetometerParams,
    PulseSchedule,
    SerfModel,
    larmor_frequency,
    rabi_frequency,
    thermal_state,
)
from .metrology import (
    StateTrajectory,
    Povm,
    PrecisionSeries,
    fidelity,
    qfi,
    fisher_information,
    sz_povm,
    precision_series,
)
from .config import ExperimentConfig, load_config

__all__ = [
    "__version__",
    "HalfInt",
    "half",
    "clebsch_gordan",
    "wigner6j",
    "spin_matrices",
    "coupled_space",
    "o_coeff",
    "c2_coeff",
    "dipole_raising",
    "KickedTopParams",
    "floquet_operator",
    "evolve_stroboscopic",
    "stretched_state",
    "rotation_angle_qfi",
    "CESIUM_D1",
    "MagnetometerParams",
    "PulseSchedule",
    "SerfModel",
    "larmor_frequency",
    "rabi_frequency",
    "thermal_state",
    "StateTrajectory",
    "Povm",
    "PrecisionSeries",
    "fidelity",
    "qfi",
    "fisher_information",
    "sz_povm",
    "precision_series",
    "ExperimentConfig",
    "load_config",
]
