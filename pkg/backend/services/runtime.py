"""
The eductive instance: one GMT, the node agents and their tiers, the
transports and router, the forensic log and the policy engines.

Bootstrap reads a topology and registers the declared nodes and tiers on
its own (self-configuration). In simulation every step() advances the tick
clock by one and drives every node in node-id order, so a run is a pure
function of topology, scenario and seed. In real mode a ticker thread
calls step() on the system clock.
"""

import logging
import os
import threading
import traceback
from typing import Any, Callable

from config.settings import RuntimeSettings, load_instance_secret
from config.topology import NodeSpec, Topology, default_topology
from models.autonomic import PolicyAction, PolicyScope
from models.demands import Context
from models.geer import Geer
from models.tiers import AllocationRequest, DeallocationRequest, EndpointSpec, NodeDescriptor, TierKind, TierStatus
from models.transport import ProtocolKind
from services.autonomic_service import heal_failed_tier, record_protection_alert, sync_classification_caches
from services.demand_service import SignatureSource
from services.forensic_log import ForensicLog
from services.gmt_service import GMT_TIER_ID, NODE_PREFIX, GeneralManager
from services.messaging import Router
from services.pipeline_stages import register_stage_procedures
from services.policy_engine import (
    ATTACK_EVENT,
    ATTACK_WINDOW_MICROS,
    HEAL_FAILED_TIER,
    RECORD_PROTECTION_ALERT,
    RESELECT_PROTOCOL,
    SYNC_CACHES,
    PolicyEngine,
    builtin_engine,
)
from services.procedures import ProcedureTable
from services.tier_service import UNREACHABLE, DemandGeneratorTier, NodeAgent, Tier, TierContext
from services.transport_service import LinkTable, create_transport
from services.wal_service import FileWalSink, MemoryWalSink
from utils.clock import SimClock, SystemClock
from utils.errors import AllProtocolsDown, DuplicateNode, EductiveError, InstanceError, NoCapacity, UnknownTier

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 100_000


class EductiveInstance:
    def __init__(self, settings: RuntimeSettings, topology: Topology | None = None,
                 procedures: dict[str, Callable] | None = None, clock=None):
        self.settings = settings
        self.topology = topology or default_topology()
        self.clock = clock or (SimClock() if settings.simulated else SystemClock())
        seed = settings.seed if settings.simulated else None
        self.log = ForensicLog(self.clock)
        self.forensics = self.log.emitter("instance")
        self.links = LinkTable(seed)
        transports = {
            protocol: create_transport(protocol, self.clock, self.links,
                                       self.log.emitter(f"transport:{protocol.label}"),
                                       self.topology.latency_for(protocol))
            for protocol in self.topology.protocol_kinds()
        }
        self.router = Router(transports, ProtocolKind.parse(self.topology.selected_protocol))
        self.router.on_failure = self._fail_over_protocol
        self.secret = load_instance_secret(seed)
        self._extra_procedures = dict(procedures or {})
        self.ctx = TierContext(
            clock=self.clock,
            settings=settings,
            router=self.router,
            signatures=SignatureSource(seed),
            secret=self.secret,
            log=self.log,
            node_of_tier=self._node_of_tier,
            gmt_tier_id=GMT_TIER_ID,
            procedures=self._procedure_table,
            wal_sink_factory=self._wal_sink,
        )
        self.gmt = GeneralManager(self.ctx, self.topology.gmt_node)
        self.agents: dict[str, NodeAgent] = {}
        self.gmt_engine = builtin_engine([PolicyScope.AS], self.gmt.forensics, "gmt-policy")
        self.node_engines: dict[str, PolicyEngine] = {}
        self.pending_heals: list[str] = []
        self.actions: list[PolicyAction] = []
        self._cursor = 0
        self._lock = threading.RLock()
        self._ticker: threading.Thread | None = None
        self._stop = threading.Event()
        self.booted = False

    # -- wiring

    def _node_of_tier(self, tier_id: str) -> str | None:
        return self.gmt.node_of_tier(tier_id)

    def _procedure_table(self) -> ProcedureTable:
        return register_stage_procedures(ProcedureTable(self._extra_procedures))

    def _wal_sink(self, tier_id: str):
        if self.settings.durable_wal:
            return FileWalSink(os.path.join(self.settings.wal_dir, f"{tier_id}.wal"))
        return MemoryWalSink()

    def register_procedure(self, name: str, procedure: Callable) -> None:
        """Make a procedure available to workers created from now on"""
        self._extra_procedures[name] = procedure
        for agent in self.agents.values():
            for tier in agent.tiers.values():
                if hasattr(tier, "procedures"):
                    tier.procedures.register(name, procedure)

    # -- bootstrap

    def boot(self) -> "EductiveInstance":
        """Register every declared node, then allocate the declared tiers (stores first)"""
        with self._lock:
            for spec in self.topology.nodes:
                self.add_node(spec, allocate=False)
            for kind in (TierKind.DST, TierKind.DGT, TierKind.DWT):
                for spec in self.topology.nodes:
                    count = spec.tiers.count(kind)
                    if count:
                        agent = self.agents[spec.node_id]
                        self.gmt.allocate_tiers(
                            AllocationRequest(kind=kind, count=count, preferred_node_id=spec.node_id,
                                              configuration=self.settings.snapshot()),
                            agent.credential_token)
            self.booted = True
            self.forensics.emit("instance_booted", nodes=len(self.agents),
                                protocol=self.router.selected.label)
            logger.info(f"Instance booted with nodes {sorted(self.agents)}")
        return self

    def add_node(self, spec: NodeSpec, allocate: bool = True) -> NodeAgent:
        with self._lock:
            if spec.node_id in self.agents:
                raise DuplicateNode(f"node '{spec.node_id}' is already registered")
            agent = NodeAgent(spec.node_id, self.ctx)
            self.gmt.attach_agent(agent)
            descriptor = NodeDescriptor(
                node_id=spec.node_id,
                endpoints=[EndpointSpec(protocol=p.label, address=f"{NODE_PREFIX}{spec.node_id}")
                           for p in self.topology.protocol_kinds()],
                capacity=spec.capacity,
            )
            agent.register(descriptor)
            self.agents[spec.node_id] = agent
            self.node_engines[spec.node_id] = builtin_engine([PolicyScope.AE], agent_forensics(self, spec.node_id),
                                                             f"{spec.node_id}-policy")
            if allocate:
                for kind in (TierKind.DST, TierKind.DGT, TierKind.DWT):
                    count = spec.tiers.count(kind)
                    if count:
                        self.gmt.allocate_tiers(
                            AllocationRequest(kind=kind, count=count, preferred_node_id=spec.node_id),
                            agent.credential_token)
            return agent

    def allocate_tiers(self, kind: TierKind, count: int = 1, node_id: str | None = None) -> list[str]:
        """Operator allocation, authenticated with the preferred node's credential (or the GMT's)"""
        with self._lock:
            token = self.agents[node_id].credential_token if node_id in self.agents else self.gmt.token()
            result = self.gmt.allocate_tiers(
                AllocationRequest(kind=kind, count=count, preferred_node_id=node_id,
                                  configuration=self.settings.snapshot()),
                token)
            return result.assigned_tier_ids

    def deallocate_tier(self, tier_id: str, reason: str = "operator request") -> None:
        with self._lock:
            self.gmt.deallocate_tier(DeallocationRequest(tier_id=tier_id, reason=reason))

    # -- lookup

    def find_tier(self, tier_id: str) -> Tier:
        for agent in self.agents.values():
            tier = agent.tiers.get(tier_id)
            if tier is not None:
                return tier
        raise UnknownTier(tier_id)

    def tier_ids(self, kind: TierKind, status: TierStatus | None = TierStatus.LIVE) -> list[str]:
        return [r.tier_id for r in self.gmt.tiers(kind, status)]

    def generator(self) -> DemandGeneratorTier:
        for tier_id in self.tier_ids(TierKind.DGT):
            tier = self.find_tier(tier_id)
            if not tier.crashed:
                return tier
        raise InstanceError("no live demand generator tier")

    # -- driving

    def step(self) -> bool:
        """One scheduler round: every node, then the GMT, then the policies"""
        with self._lock:
            if self.clock.simulated:
                self.clock.advance(1)
            now = self.clock.now_millis()
            progressed = False
            for node_id in sorted(self.agents):
                progressed = self.agents[node_id].step(now) or progressed
            self.gmt.step(now)
            self._policy_tick()
            self._retry_heals()
            return progressed

    def run_until(self, done: Callable[[], bool], max_steps: int = DEFAULT_MAX_STEPS) -> int:
        """Step until `done()`; returns the number of steps taken"""
        for taken in range(max_steps):
            if done():
                return taken
            if self._ticker is not None:
                self.clock.sleep(self.settings.tick_millis)
            else:
                self.step()
                if not self.clock.simulated:
                    self.clock.sleep(self.settings.tick_millis)
        if done():
            return max_steps
        raise InstanceError(f"condition not reached within {max_steps} steps")

    def run_job(self, build: Callable[[DemandGeneratorTier], Any], max_steps: int = DEFAULT_MAX_STEPS) -> Any:
        """Submit the machine built for a live DGT and drive the instance until it finishes"""
        with self._lock:
            dgt = self.generator()
            job = dgt.job(dgt.submit(build(dgt)))
        self.run_until(lambda: job.finished, max_steps)
        if job.error is not None:
            raise job.error
        return job.result

    def submit_program(self, geer: Geer, ctx: Context, entry: int | None = None, stage: str | None = None):
        """Start a program demand without waiting; returns (dgt, job)"""
        with self._lock:
            self.gmt.publish_geer(geer)
            dgt = self.generator()
            job = dgt.job(dgt.submit_program(geer.geer_id, entry, ctx, stage))
        return dgt, job

    def evaluate(self, geer: Geer, ctx: Context, entry: int | None = None, stage: str | None = None,
                 max_steps: int = DEFAULT_MAX_STEPS) -> Any:
        """Program demand served by a DGT; the value equals the reference evaluator's"""
        _, job = self.submit_program(geer, ctx, entry, stage)
        self.run_until(lambda: job.finished, max_steps)
        if job.error is not None:
            raise job.error
        return job.result

    # -- policies

    def _policy_tick(self) -> None:
        events = self.log.raw(self._cursor)
        self._cursor += len(events)
        now = self.clock.now_micros()
        actions = list(self.gmt_engine.tick(events, now))
        for node_id in sorted(self.node_engines):
            local = [e for e in events if e.node_id == node_id]
            actions.extend(self.node_engines[node_id].tick(local, now))
        for action in actions:
            self._dispatch(action)

    def _dispatch(self, action: PolicyAction) -> None:
        self.actions.append(action)
        try:
            if action.action_id == SYNC_CACHES:
                self.sync_caches()
            elif action.action_id == RESELECT_PROTOCOL:
                self.reselect_protocol()
            elif action.action_id == HEAL_FAILED_TIER:
                self.heal(action.key)
            elif action.action_id == RECORD_PROTECTION_ALERT:
                count = self.gmt_engine.history.count_since(ATTACK_EVENT, self.clock.now_micros() - ATTACK_WINDOW_MICROS)
                record_protection_alert(self.gmt.forensics, action.trigger, count)
            else:
                logger.warning(f"No handler for policy action {action.action_id}")
        except EductiveError as e:
            logger.warning(f"Policy action {action.action_id} failed: {e}")
            self.forensics.emit("policy_action_failed", action=action.action_id, error=e.kind, detail=str(e))
        except Exception as e:
            logger.error(f"Policy action {action.action_id} raised unexpectedly: {e}")
            logger.error(f"Traceback: {traceback.format_exc()}")

    def heal(self, tier_id: str):
        try:
            report = heal_failed_tier(self.gmt, tier_id)
        except NoCapacity:
            if tier_id not in self.pending_heals:
                self.pending_heals.append(tier_id)
            return None
        if tier_id in self.pending_heals:
            self.pending_heals.remove(tier_id)
        return report

    def _retry_heals(self) -> None:
        for tier_id in list(self.pending_heals):
            try:
                if self.gmt.tier(tier_id).status != TierStatus.FAILED:
                    self.pending_heals.remove(tier_id)
                    continue
            except UnknownTier:
                self.pending_heals.remove(tier_id)
                continue
            self.heal(tier_id)

    def node_reachable(self, node_id: str) -> bool:
        agent = self.agents.get(node_id)
        if agent is None or self.links.conditions(f"{NODE_PREFIX}{node_id}").down:
            return False
        return not agent.tiers or any(not t.crashed for t in agent.tiers.values())

    def sync_caches(self):
        warehouses = {node_id: (agent.warehouse if self.node_reachable(node_id) else None)
                      for node_id, agent in self.agents.items()}
        return sync_classification_caches(warehouses, self.gmt.forensics)

    def reselect_protocol(self, probes: int = 3):
        def ping():
            return self.gmt.messenger.system_envelope(GMT_TIER_ID, {"op": "ping"})

        measurements, chosen = self.router.reselect(GMT_TIER_ID, ping, probes)
        self.forensics.emit("protocol_selected", protocol=chosen.label,
                            medians=",".join(f"{m.protocol.label}:{m.median_micros}" for m in measurements))
        return measurements, chosen

    def _fail_over_protocol(self) -> bool:
        try:
            self.reselect_protocol()
        except AllProtocolsDown:
            self.forensics.emit("protocol_failover_failed", protocol=self.router.selected.label)
            return False
        return True

    # -- fault injection

    def kill_tier(self, tier_id: str) -> None:
        tier = self.find_tier(tier_id)
        tier.crash()
        self.forensics.emit("tier_killed", tier=tier_id)
        logger.info(f"Killed {tier_id}")

    def restart_tier(self, tier_id: str) -> None:
        """Operator restart in place; a failed store is marked live again"""
        tier = self.find_tier(tier_id)
        tier.restart()
        if self.gmt.tier(tier_id).status == TierStatus.FAILED:
            self.gmt.mark_restored(tier_id)
        self.forensics.emit("tier_restarted", tier=tier_id)

    def set_link(self, tier_id: str, latency_micros: int | None = None,
                 drop_probability: float | None = None, down: bool | None = None) -> None:
        self.links.set(tier_id, latency_micros, drop_probability, down)
        self.forensics.emit("link_changed", tier=tier_id, latency=latency_micros,
                            drop=drop_probability, down=down)

    def clear_link(self, tier_id: str) -> None:
        self.links.clear(tier_id)
        self.forensics.emit("link_restored", tier=tier_id)

    # -- inspection

    def store_tier_id(self) -> str:
        return self.gmt.locate(TierKind.DST)

    def store_counts(self) -> dict | None:
        try:
            return self.gmt.messenger.call(self.store_tier_id(), {"op": "counts"})
        except UNREACHABLE as e:
            logger.warning(f"Store counts unavailable: {e}")
            return None

    def store_dump(self) -> list[str]:
        return self.gmt.messenger.call(self.store_tier_id(), {"op": "dump"})

    def status(self) -> dict:
        """instanceStatus"""
        gmt_status = self.gmt.status()
        return {
            "simulated": self.clock.simulated,
            "time_millis": self.clock.now_millis(),
            "protocol": self.router.selected.label,
            "nodes": gmt_status["nodes"],
            "tiers": gmt_status["tiers"],
            "store": self.store_counts(),
            "pending_heals": list(self.pending_heals),
            "forensic_events": len(self.log),
        }

    # -- real mode

    def start_ticker(self) -> None:
        if self._ticker is not None:
            return
        self._stop.clear()

        def loop():
            while not self._stop.is_set():
                try:
                    self.step()
                except Exception as e:
                    logger.error(f"Scheduler step failed: {e}")
                    logger.error(f"Traceback: {traceback.format_exc()}")
                self._stop.wait(self.settings.tick_millis / 1000.0)

        self._ticker = threading.Thread(target=loop, name="eductive-ticker", daemon=True)
        self._ticker.start()
        logger.info("Scheduler ticker started")

    def shutdown(self) -> None:
        if self._ticker is not None:
            self._stop.set()
            self._ticker.join(timeout=5)
            self._ticker = None
        for sink in self.ctx.wal_sinks.values():
            if isinstance(sink, FileWalSink):
                sink.close()
        self.router.shutdown()
        self.forensics.emit("instance_stopped")
        logger.info("Instance shut down")


def agent_forensics(instance: EductiveInstance, node_id: str):
    return instance.log.emitter(f"{NODE_PREFIX}{node_id}", node_id=node_id)


def boot_instance(settings: RuntimeSettings, topology: Topology | None = None,
                  procedures: dict[str, Callable] | None = None) -> EductiveInstance:
    return EductiveInstance(settings, topology, procedures).boot()
