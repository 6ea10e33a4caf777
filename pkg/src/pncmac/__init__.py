"""Discrete-event simulator of PNC-MAC, a relay-initiated CSMA MAC with
physical-layer network coding, plus CNC and plain 802.11 DCF baselines."""

__version__ = "0.1.0"

from .phy import PhyParams
from .frames import TimingParams
from .config import ScenarioConfig, config_from_dict
from .runner import run_scenario, run_single

__all__ = ["PhyParams", "TimingParams", "ScenarioConfig", "config_from_dict",
           "run_scenario", "run_single", "__version__"]
