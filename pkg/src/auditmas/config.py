"""Scenario configuration: a TOML file with sections [corpus], [agents],
[protocols], [faults], [repair], [architecture] and [seed]."""

from __future__ import annotations

import dataclasses
import re
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from auditmas.planner import RiskParams
from auditmas.repair import DEFAULT_CLASS_MIX, RepairConfig
from auditmas.sim.corpus import CorpusSpec
from auditmas.sim.faults import Fault, FaultSchedule
from auditmas.sim.tools import ToolProfile, default_profiles

VARIANTS = ("FullMAS", "CentralizedScheduler", "SequentialPipeline", "NoProtocols",
            "NoAutonomy", "NoSelfHealing", "RigidPipeline")

CORE_AGENTS = ("planner", "executor", "repair", "coordinator")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = f" (line {line}" + (f", column {column}" if column else "") + ")" if line else ""
        super().__init__(message + where)


@dataclass(frozen=True)
class AgentSettings:
    # planner, executor, repair, coordinator, plus n_agents - 4 command executors
    n_agents: int = 5
    latency: float = 0.01
    llm_budget: float = 200_000.0
    lease_tokens: float = 1_000.0
    test_tokens: float = 200.0
    test_gen_seconds: float = 10.0
    test_run_seconds: float = 5.0
    p_broken: float = 0.5
    fp_confirm: float = 0.15
    failure_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    retry_interval: float = 10.0
    direct_retry: float = 30.0
    manual_stall: float = 300.0
    poll_interval: float = 15.0
    health_check: float = 60.0
    repair_timeout: float = 60.0
    repair_watchdog: float = 600.0
    max_regenerations: int = 3
    capability_spread: float = 0.2
    tools: Mapping[str, ToolProfile] = field(default_factory=default_profiles)
    planner: RiskParams = field(default_factory=RiskParams)

    @property
    def n_command(self) -> int:
        return self.n_agents - len(CORE_AGENTS)

    def agent_ids(self) -> list[str]:
        return [*CORE_AGENTS, *(f"cmd-{i}" for i in range(1, self.n_command + 1))]

    def tool_ids(self) -> list[str]:
        return [f"{m}-{i}" for i in range(1, self.n_command + 1) for m in self.tools]


@dataclass(frozen=True)
class ProtocolSettings:
    theta: float = 0.15
    bid_window: float = 2.0
    message_cost: float = 0.05


@dataclass(frozen=True)
class ArchitectureSettings:
    variant: str = "FullMAS"
    planner: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")


@dataclass(frozen=True)
class ScenarioConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    agents: AgentSettings = field(default_factory=AgentSettings)
    protocols: ProtocolSettings = field(default_factory=ProtocolSettings)
    faults: FaultSchedule = field(default_factory=FaultSchedule)
    repair: RepairConfig = field(default_factory=RepairConfig)
    architecture: ArchitectureSettings = field(default_factory=ArchitectureSettings)
    seed: int = 42
    horizon: float = 500_000.0

    def __post_init__(self):
        if self.agents.n_command < 1:
            raise ValueError("need at least 5 agents (4 core roles + 1 command executor)")

    def with_(self, **changes) -> ScenarioConfig:
        """Copy with top-level or dotted section overrides, e.g. ``**{"agents.n_agents": 10}``."""
        top, nested = {}, {}
        for k, v in changes.items():
            if "." in k:
                sec, key = k.split(".", 1)
                nested.setdefault(sec, {})[key] = v
            else:
                top[k] = v
        for sec, kw in nested.items():
            top[sec] = dataclasses.replace(top.get(sec, getattr(self, sec)), **kw)
        return dataclasses.replace(self, **top)

    def variant(self, name: str) -> ScenarioConfig:
        return self.with_(**{"architecture.variant": name})


def _line_of(text: str, key: str, section: str | None = None) -> int | None:
    lines = text.splitlines()
    start = 0
    if section:
        for i, ln in enumerate(lines):
            if re.match(rf"\s*\[+\s*{re.escape(section)}\s*\]+", ln):
                start = i
                break
    for i in range(start, len(lines)):
        if re.match(rf"\s*\[*\s*{re.escape(key)}\b", lines[i]):
            return i + 1
    return None


def _build(cls, data: Mapping, text: str, section: str, convert=None):
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(f"unknown key {section}.{k}", _line_of(text, k, section))
    kw = dict(data)
    if convert:
        kw = convert(kw)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        first = next(iter(data), None)
        raise ConfigError(f"[{section}] {exc}", _line_of(text, first, section) if first else None) from exc


def _agents(kw: dict) -> dict:
    if "tools" in kw:
        tools = default_profiles()
        for m, d in kw["tools"].items():
            tools[m] = ToolProfile.from_dict(m, {**dataclasses.asdict(tools[m]), **d} if m in tools else d)
        kw["tools"] = tools
    if "planner" in kw:
        kw["planner"] = RiskParams.from_dict(kw["planner"])
    return kw


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        raise ConfigError(f"config parse error: {exc}",
                          int(m.group(1)) if m else None, int(m.group(2)) if m else None) from exc
    known = {"corpus", "agents", "protocols", "faults", "repair", "architecture", "seed", "horizon"}
    for k in data:
        if k not in known:
            raise ConfigError(f"unknown section {k!r}", _line_of(text, k))

    kw: dict = {}
    if "corpus" in data:
        kw["corpus"] = _build(CorpusSpec, data["corpus"], text, "corpus",
                              lambda d: {**d, **{k: tuple(v) for k, v in d.items() if k.endswith("_beta")}})
    if "agents" in data:
        kw["agents"] = _build(AgentSettings, data["agents"], text, "agents", _agents)
    if "protocols" in data:
        kw["protocols"] = _build(ProtocolSettings, data["protocols"], text, "protocols")
    if "repair" in data:
        try:
            kw["repair"] = RepairConfig.from_dict(data["repair"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[repair] {exc}", _line_of(text, "repair")) from exc
    if "architecture" in data:
        kw["architecture"] = _build(ArchitectureSettings, data["architecture"], text, "architecture")
    if "faults" in data:
        entries = data["faults"]
        if isinstance(entries, Mapping):
            entries = entries.get("fault", [])
        try:
            kw["faults"] = FaultSchedule(tuple(Fault.from_dict(d, i) for i, d in enumerate(entries)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"[faults] bad fault entry: {exc}", _line_of(text, "faults")) from exc
    if "seed" in data:
        seed = data["seed"]
        kw["seed"] = int(seed["value"] if isinstance(seed, Mapping) else seed)
    if "horizon" in data:
        kw["horizon"] = float(data["horizon"])
    try:
        cfg = ScenarioConfig(**kw)
        cfg.faults.validate(cfg.agents.agent_ids(), cfg.agents.tool_ids())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())
