"""
Deterministic scenario runner.

A run boots an instance on the tick clock, then for every tick applies the
scenario steps scheduled at that tick (in file order) and performs one
scheduler round. Everything random (link drops, system demand ids, the
instance secret) is derived from the seed, so the same topology, scenario
and seed give a byte-identical forensic export.
"""

import logging
from dataclasses import dataclass, field
from typing import Any

from config.settings import RuntimeSettings
from config.topology import Scenario, ScenarioStep, Topology, default_topology
from models.demands import Context
from models.tiers import TierKind
from models.transport import Envelope
from services.compiler_service import compile_source
from services.demand_service import encode_demand, system_demand
from services.gmt_service import GMT_TIER_ID
from services.program_corpus import CORPUS
from services.runtime import EductiveInstance
from services.tier_service import DemandJob
from utils.errors import EductiveError, ScenarioError, TransportError, UnknownTier

logger = logging.getLogger(__name__)

INTRUDER_TIER_ID = "intruder"

# how each injected envelope is broken, cycled in this order
ADVERSARIAL_VARIANTS = ("missing_token", "bit_flipped_token", "identity_mismatch", "garbage_token",
                        "payload_mismatch")


@dataclass
class PendingEvaluation:
    program: str
    dimension: str
    tag: int
    job: DemandJob


@dataclass
class SimulationResult:
    instance: EductiveInstance
    results: list[dict] = field(default_factory=list)
    injected: int = 0

    @property
    def log(self):
        return self.instance.log

    def export(self, fmt: str = "lines") -> bytes:
        return self.instance.log.export(fmt)


class ScenarioRunner:
    def __init__(self, instance: EductiveInstance, scenario: Scenario):
        self.instance = instance
        self.scenario = scenario
        self.result = SimulationResult(instance)
        self.pending: list[PendingEvaluation] = []
        self._geers: dict[str, Any] = {}

    def run(self) -> SimulationResult:
        for tick in range(self.scenario.ticks):
            for step in self.scenario.steps_at(tick):
                self.apply(step)
            self.instance.step()
            self._collect()
        for entry in self.pending:
            self.instance.forensics.emit("evaluation_unfinished", program=entry.program,
                                         dimension=entry.dimension, tag=entry.tag)
        return self.result

    # -- steps

    def _tier(self, step: ScenarioStep) -> str:
        try:
            self.instance.find_tier(step.tier)
        except UnknownTier:
            if step.tier != GMT_TIER_ID:
                raise ScenarioError(f"step at tick {step.at}: unknown tier '{step.tier}'")
        return step.tier

    def apply(self, step: ScenarioStep) -> None:
        logger.debug(f"Scenario step at {step.at}: {step.action}")
        instance = self.instance
        if step.action == "kill-tier":
            instance.kill_tier(self._tier(step))
        elif step.action == "restart-tier":
            instance.restart_tier(self._tier(step))
        elif step.action == "drop-link":
            instance.set_link(self._tier(step), drop_probability=step.probability)
        elif step.action == "delay-link":
            instance.set_link(self._tier(step), latency_micros=step.latency_micros)
        elif step.action == "down-link":
            instance.set_link(self._tier(step), down=True)
        elif step.action == "restore-link":
            instance.clear_link(self._tier(step))
        elif step.action == "evaluate":
            self._evaluate(step)
        elif step.action == "reselect-protocol":
            instance.reselect_protocol()
        elif step.action == "add-node":
            try:
                instance.add_node(step.node)
            except EductiveError as e:
                raise ScenarioError(f"step at tick {step.at}: cannot add node: {e}")
        elif step.action == "inject-unauthenticated":
            self.result.injected += inject_unauthenticated(instance, self._tier(step), step.count)

    def _evaluate(self, step: ScenarioStep) -> None:
        source = CORPUS.get(step.program)
        if source is None:
            raise ScenarioError(f"step at tick {step.at}: unknown program '{step.program}'")
        geer = self._geers.get(step.program)
        if geer is None:
            geer = self._geers[step.program] = compile_source(source)
        dimension = step.dimension or "t"
        try:
            _, job = self.instance.submit_program(geer, Context.of({dimension: step.tag}))
        except EductiveError as e:
            self._record(step.program, dimension, step.tag, error=e)
            return
        self.pending.append(PendingEvaluation(step.program, dimension, step.tag, job))

    def _collect(self) -> None:
        still_open = []
        for entry in self.pending:
            if not entry.job.finished:
                still_open.append(entry)
            elif entry.job.error is not None:
                self._record(entry.program, entry.dimension, entry.tag, error=entry.job.error)
            else:
                self._record(entry.program, entry.dimension, entry.tag, value=entry.job.result)
        self.pending = still_open

    def _record(self, program: str, dimension: str, tag: int, value: Any = None,
                error: EductiveError | None = None) -> None:
        record = {"program": program, "dimension": dimension, "tag": tag}
        if error is not None:
            record["error"] = error.kind
        else:
            record["value"] = value
        self.result.results.append(record)
        self.instance.forensics.emit("evaluation_result", context={dimension: tag}, **record)


def _adversarial_envelope(instance: EductiveInstance, target: str, variant: str) -> Envelope:
    demand = system_demand({"op": "ping"}, target, instance.ctx.signatures)
    payload = encode_demand(demand)
    tokens = {node_id: agent.credential_token for node_id, agent in sorted(instance.agents.items())}
    source = INTRUDER_TIER_ID
    token = b""
    if variant == "bit_flipped_token":
        node_id, valid = next(iter(tokens.items()))
        source = next(iter(instance.agents[node_id].tiers), INTRUDER_TIER_ID)
        token = valid[:-1] + bytes([valid[-1] ^ 0x01])
    elif variant == "identity_mismatch":
        # a valid credential presented for a tier hosted on another node
        owned = [(n, t) for n, a in sorted(instance.agents.items()) for t in sorted(a.tiers)]
        for node_id, valid in tokens.items():
            foreign = [t for n, t in owned if n != node_id]
            if foreign:
                source, token = foreign[0], valid
                break
    elif variant == "garbage_token":
        token = b"\x00\xffnot-a-credential"
    elif variant == "payload_mismatch":
        node_id, valid = next(iter(tokens.items()))
        source = next(iter(instance.agents[node_id].tiers), INTRUDER_TIER_ID)
        token = valid
        other = system_demand({"op": "dump"}, target, instance.ctx.signatures)
        payload = encode_demand(other)
    return Envelope(
        signature=demand.signature,
        kind=demand.kind,
        source_tier_id=source,
        destination_tier_id=target,
        credential_token=token,
        payload=payload,
        sent_at=instance.clock.now_micros(),
    )


def inject_unauthenticated(instance: EductiveInstance, target: str, count: int) -> int:
    """
    Send `count` envelopes with missing, corrupt or mismatched credentials to
    a gated tier (the GMT or the DST). Returns how many were sent; the gate
    logs one unauthenticated_message event per rejection.
    """
    if target != GMT_TIER_ID and instance.gmt.tier(target).kind != TierKind.DST:
        raise ScenarioError(f"tier {target} does not serve requests; inject into the GMT or the DST")
    sent = 0
    for index in range(count):
        variant = ADVERSARIAL_VARIANTS[index % len(ADVERSARIAL_VARIANTS)]
        envelope = _adversarial_envelope(instance, target, variant)
        try:
            instance.router.request(envelope)
        except TransportError as e:
            logger.warning(f"Adversarial envelope to {target} not delivered: {e}")
            continue
        sent += 1
    instance.forensics.emit("adversarial_injected", tier=target, count=sent)
    return sent


def run_simulation(topology: Topology | None, scenario: Scenario, seed: int,
                   settings: RuntimeSettings | None = None) -> SimulationResult:
    """Boot, replay the scenario tick by tick, shut down; the log stays on the result"""
    settings = settings or RuntimeSettings.for_simulation(seed)
    instance = EductiveInstance(settings, topology or default_topology())
    instance.boot()
    try:
        return ScenarioRunner(instance, scenario).run()
    finally:
        instance.shutdown()
        logger.info(f"Simulation finished at tick {instance.clock.now_millis()} with {len(instance.log)} events")
