"""Joint user association, bandwidth split and power control for an
integrated terrestrial / LEO-satellite downlink."""

from .channel import ChannelParams, ChannelState, build_channel_state
from .config import CampaignConfig, load_config
from .dual_solver import DualOptions, solve_association
from .linkmodel import RadioConfig, network_slt
from .orchestrator import Policy, RunReport, SolverOptions, compare_policies, run_policy
from .power_solver import PowerOptions, solve_power
from .scenario import ConfigError, ScenarioConfig, Topology, build_topology

__version__ = "0.1.0"
