# Topology, scenario and pipeline configuration files (JSON)
import json
import logging
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from models.pipeline import Configuration
from models.tiers import TierKind
from models.transport import ProtocolKind
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)


class NodeSpec(BaseModel):
    """One declared node: its capacity per tier kind and the tiers started at bootstrap"""
    model_config = ConfigDict(extra="forbid")

    node_id: str = Field(min_length=1)
    capacity: dict[TierKind, int] = Field(default_factory=dict)
    tiers: list[TierKind] = Field(default_factory=list)

    @model_validator(mode="after")
    def _tiers_fit(self):
        if TierKind.GMT in self.tiers:
            raise ValueError("the GMT is not allocated on nodes")
        for kind in set(self.tiers):
            if self.tiers.count(kind) > self.capacity.get(kind, 0):
                raise ValueError(f"node {self.node_id} declares more {kind.value} tiers than its capacity")
        return self


class Topology(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gmt_node: str = "manager"
    protocols: list[str] = Field(default_factory=lambda: ["inProcess"])
    selected_protocol: str = "inProcess"
    # base latency added by each transport (simulated round trips use it as the RTT)
    protocol_latency_micros: dict[str, int] = Field(default_factory=dict)
    nodes: list[NodeSpec] = Field(min_length=1)

    @model_validator(mode="after")
    def _consistent(self):
        kinds = [ProtocolKind.parse(p) for p in self.protocols]
        if ProtocolKind.parse(self.selected_protocol) not in kinds:
            raise ValueError(f"selected protocol {self.selected_protocol} is not listed")
        for name in self.protocol_latency_micros:
            ProtocolKind.parse(name)
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        declared = [k for n in self.nodes for k in n.tiers]
        if declared.count(TierKind.DST) != 1:
            raise ValueError("a topology declares exactly one DST")
        return self

    def protocol_kinds(self) -> list[ProtocolKind]:
        return [ProtocolKind.parse(p) for p in self.protocols]

    def latency_for(self, protocol: ProtocolKind) -> int:
        for name, micros in self.protocol_latency_micros.items():
            if ProtocolKind.parse(name) == protocol:
                return micros
        return 0


ScenarioAction = Literal[
    "kill-tier", "restart-tier", "drop-link", "delay-link", "down-link", "restore-link",
    "evaluate", "reselect-protocol", "add-node", "inject-unauthenticated",
]


class ScenarioStep(BaseModel):
    model_config = ConfigDict(extra="forbid")

    at: int = Field(ge=0)
    action: ScenarioAction
    tier: str | None = None
    probability: float | None = Field(default=None, ge=0.0, le=1.0)
    latency_micros: int | None = Field(default=None, ge=0)
    program: str | None = None
    dimension: str | None = None
    tag: int | None = None
    node: NodeSpec | None = None
    count: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _fields_for_action(self):
        needs_tier = {"kill-tier", "restart-tier", "drop-link", "delay-link", "down-link",
                      "restore-link", "inject-unauthenticated"}
        if self.action in needs_tier and not self.tier:
            raise ValueError(f"{self.action} needs a tier")
        if self.action == "drop-link" and self.probability is None:
            raise ValueError("drop-link needs a probability")
        if self.action == "delay-link" and self.latency_micros is None:
            raise ValueError("delay-link needs latency_micros")
        if self.action == "evaluate" and (self.program is None or self.tag is None):
            raise ValueError("evaluate needs a program and a tag")
        if self.action == "add-node" and self.node is None:
            raise ValueError("add-node needs a node")
        return self


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ticks: int = Field(default=200, ge=0)
    steps: list[ScenarioStep] = Field(default_factory=list)

    def steps_at(self, tick: int) -> list[ScenarioStep]:
        return [s for s in self.steps if s.at == tick]


def default_topology() -> Topology:
    """1 GMT, 1 DST, 1 DGT and 2 DWTs, with spare worker capacity for healing"""
    return Topology(nodes=[
        NodeSpec(node_id="store", capacity={TierKind.DST: 1}, tiers=[TierKind.DST]),
        NodeSpec(node_id="alpha", capacity={TierKind.DGT: 2, TierKind.DWT: 2},
                 tiers=[TierKind.DGT, TierKind.DWT]),
        NodeSpec(node_id="beta", capacity={TierKind.DGT: 1, TierKind.DWT: 2}, tiers=[TierKind.DWT]),
    ])


def _read_json(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise ConfigurationError(what, f"cannot read {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(what, f"{path} is not valid JSON: {e}")


def _validation_error(what: str, error: ValidationError) -> ConfigurationError:
    first = error.errors()[0]
    field = ".".join(str(p) for p in first["loc"]) or what
    return ConfigurationError(field, first["msg"])


def load_topology(path: str | None) -> Topology:
    if path is None:
        return default_topology()
    try:
        return Topology.model_validate(_read_json(path, "topology"))
    except ValidationError as e:
        raise _validation_error("topology", e)


def load_scenario(path: str | None) -> Scenario:
    if path is None:
        return Scenario()
    try:
        return Scenario.model_validate(_read_json(path, "scenario"))
    except ValidationError as e:
        raise _validation_error("scenario", e)


def load_pipeline_config(path: str | None) -> Configuration:
    if path is None:
        return Configuration.default()
    return Configuration.parse(_read_json(path, "configuration"))
