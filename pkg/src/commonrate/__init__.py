"""Common-rate maximization for single- and two-layer cellular downlinks."""

from .channel import (ChannelModel, Drop, GainSystem, antenna_gain, build_drop,
                      build_gain_system, link_gain, pathloss_macro_hata,
                      pathloss_micro_wi, pathloss_shared, sinr_from_raw)
from .geometry import (Layout, StationSite, UserSite, build_layout,
                       place_lowpower, place_users, wrap_distance)
from .harness import (ExperimentConfig, ExperimentResult, ExperimentRow,
                      emit_csv, run_experiment)
from .lp import LPSolution, LPStatus, MinPowerProblem, solve_min_power, verify_solution
from .ratemax import (RateResult, ScenarioKind, discard_users, maximize_single,
                      maximize_two_layer, relay_decode_set, uncoordinated_rate)
from .spectral import (FeasibilityReport, PowerSolution, PowerStatus,
                       build_two_layer_coupling, feasibility_single,
                       solve_single_analytic, solve_two_layer_analytic,
                       spectral_radius)

__version__ = "0.1.0"
