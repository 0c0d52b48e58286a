"""Multi-agent smart-contract audit coordination: BDI agents, interaction
protocols, risk planning, self-healing repair and a discrete-event simulator."""

from auditmas.baselines import run_variant
from auditmas.config import ScenarioConfig, load_config, parse_config
from auditmas.metrics import compute as compute_metrics

__version__ = "0.1.0"

__all__ = ["ScenarioConfig", "compute_metrics", "load_config", "parse_config", "run_variant"]
