"""Total-computation-rate maximisation for surface-assisted wireless-powered MEC.

A library and CLI for the joint design of energy beamforming, passive
reflection under a lossy amplitude-phase-coupled surface model,
multi-user detection, device power/CPU splits, and the three-way time
division of a harvest-then-compute block.
"""

from .config import (SystemConfig, dump_config, load_config, parse_config_text,
                     table2_profile)
from .conic import (ConicProgram, ConicSolution, SubproblemError, dc_rank_step,
                    rank_certificate, rank_one_extract, solve_conic)
from .errors import InfeasibleError
from .model import (Allocation, ChannelSet, PhaseProfile, Scenario, SolveReport,
                    build_scenario, effective_channels, path_loss, perturb_csi,
                    substream, synth_channels)
from .offload import (ComputeSetting, sinr_and_rate, solve_mud, solve_p4,
                      solve_passive, solve_power_freq, surrogate_objective,
                      update_rho, update_varpi, update_xi)
from .phase import (PhaseModel, TrustRegion, amplitude, fit_objective, fit_theta,
                    penalty_residual, project_profile, reflect_coeff, trust_region,
                    wrap_angle)
from .pipeline import (BASELINE_KINDS, SCHEMES, SWEEP_PARAMS, SweepSpec,
                       audit_allocation, load_sweep, objective_bits, parse_sweep_text,
                       run_baseline, run_scheme, run_sweep, solve_from_channels,
                       solve_p0)
from .wet import (WetSetting, harvested_energy, optimal_tau1, sca_step_vE,
                  solve_p1, solve_p3)

__version__ = "0.1.0"

__all__ = [
    "Allocation", "BASELINE_KINDS", "ChannelSet", "ComputeSetting", "ConicProgram",
    "ConicSolution", "InfeasibleError", "PhaseModel", "PhaseProfile", "SCHEMES",
    "SWEEP_PARAMS", "Scenario", "SolveReport", "SubproblemError", "SweepSpec",
    "SystemConfig", "TrustRegion", "WetSetting", "amplitude", "audit_allocation",
    "build_scenario", "dc_rank_step", "dump_config", "effective_channels",
    "fit_objective", "fit_theta", "harvested_energy", "load_config", "load_sweep",
    "objective_bits", "optimal_tau1", "parse_config_text", "parse_sweep_text",
    "path_loss", "penalty_residual", "perturb_csi", "project_profile",
    "rank_certificate", "rank_one_extract", "reflect_coeff", "run_baseline",
    "run_scheme", "run_sweep", "sca_step_vE", "sinr_and_rate", "solve_conic",
    "solve_from_channels", "solve_mud", "solve_p0", "solve_p1", "solve_p3",
    "solve_p4", "solve_passive", "solve_power_freq", "substream",
    "surrogate_objective", "synth_channels", "table2_profile", "trust_region",
    "update_rho", "update_varpi", "update_xi", "wrap_angle",
]
