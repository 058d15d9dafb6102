"""Power-flow Jacobians, model-free Jacobian estimation and spectral topology identification."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .grid import (Branch, Bus, BusKind, Grid, Status, apply_switch_plan, build_admittance,
                   ieee33, load_network, parse_network, save_network, scale_branch_impedance,
                   serialize_network)
from .powerflow import (JacobianMatrix, PowerFlowSpec, SystemState, injections, jacobian,
                        linearize_check, newton_raphson_solve, solve_series)
from .estimation import (SnapshotSeries, build_deltas, compare_to_benchmark, ols_estimate,
                         tls_estimate, tls_fit)
from .spectral import (SpectralDensity, ar1_theoretical_density, esd, estimate_ar_coefficient,
                       factor_decompose, js_metric, mp_density)
from .topology import ModelBank, TIConfig, TIReport, bank33, match_model
from .synth import ScenarioConfig, ar1_series, synthesize
