"""
Tier engines hosted by a node: the demand store tier (DST), the demand
generator tier (DGT) and the demand worker tier (DWT), plus the node
agent that creates them through the tier factory and sends heartbeats.

Tiers never share mutable state with each other: a DGT or DWT reaches the
store only through credentialed messages to the DST.
"""

import logging
import traceback
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from config.settings import RuntimeSettings
from models.demands import Context, Demand, DemandKind, DemandSignature, DemandState, WarehouseKey
from models.geer import Geer
from models.tiers import TierKind, TierRegistration
from services.demand_service import SignatureSource, decode_demand, encode_demand, procedural_demand
from services.demand_store import DemandStore
from services.evaluator import Evaluation, ProcedureRequest, Waiting
from services.forensic_log import ForensicLog
from services.geer_codec import decode_geer
from services.messaging import GatedService, Messenger, Router
from services.procedures import ProcedureTable
from services.warehouse import Warehouse
from utils.errors import EductiveError, StoreUnavailable, TransportError

logger = logging.getLogger(__name__)

# Errors that mean "the store cannot be reached right now"
UNREACHABLE = (StoreUnavailable, TransportError)


@dataclass
class TierContext:
    """Instance-wide wiring handed to every tier the factory creates"""
    clock: Any
    settings: RuntimeSettings
    router: Router
    signatures: SignatureSource
    secret: bytes
    log: ForensicLog
    node_of_tier: Callable[[str], str | None]
    gmt_tier_id: str
    procedures: Callable[[], ProcedureTable] = ProcedureTable
    wal_sinks: dict[str, Any] = field(default_factory=dict)
    wal_sink_factory: Callable[[str], Any] | None = None


class Tier:
    kind: TierKind

    def __init__(self, tier_id: str, agent: "NodeAgent", ctx: TierContext):
        self.tier_id = tier_id
        self.agent = agent
        self.ctx = ctx
        self.crashed = False
        self.messenger = Messenger(ctx.router, tier_id, agent.token, ctx.signatures, ctx.clock)
        self.forensics = ctx.log.emitter(tier_id, tier_id=tier_id, node_id=agent.node_id)

    def start(self) -> None:
        """Send the TierRegistration system demand; the tier is live once the GMT acknowledges"""
        registration = TierRegistration(
            node_id=self.agent.node_id,
            tier_id=self.tier_id,
            destination_gmt_tier_id=self.ctx.gmt_tier_id,
            kind=self.kind,
        )
        self.messenger.call(self.ctx.gmt_tier_id, {"op": "register_tier",
                                                   "registration": registration.model_dump(mode="json")})

    def stop(self) -> None:
        pass

    def crash(self) -> None:
        self.crashed = True

    def restart(self) -> None:
        self.crashed = False

    def step(self, now: int) -> bool:
        """One unit of work; True if anything happened"""
        return False

    def status(self) -> dict:
        return {"tier_id": self.tier_id, "kind": self.kind.value, "crashed": self.crashed}


class StoreClientMixin:
    """Locate the DST through the GMT and call it"""

    _dst_tier_id: str | None = None

    def dst_tier_id(self) -> str:
        if self._dst_tier_id is None:
            self._dst_tier_id = self.messenger.call(self.ctx.gmt_tier_id, {"op": "locate", "kind": "DST"})
        return self._dst_tier_id

    def store_call(self, record: dict) -> Any:
        try:
            return self.messenger.call(self.dst_tier_id(), record)
        except TransportError:
            # the DST may have moved; look it up again next time
            self._dst_tier_id = None
            raise


# ---------------------------------------------------------------------- DST

class DemandStoreTier(Tier):
    kind = TierKind.DST

    def __init__(self, tier_id: str, agent: "NodeAgent", ctx: TierContext):
        super().__init__(tier_id, agent, ctx)
        self.store = DemandStore(ctx.clock, self.forensics)
        self.service = GatedService(tier_id, ctx.secret, ctx.node_of_tier, agent.token,
                                    ctx.signatures, ctx.clock, self.forensics)
        self.service.register("deposit", self._op_deposit)
        self.service.register("claim", self._op_claim)
        self.service.register("deliver", self._op_deliver)
        self.service.register("fetch", self._op_fetch)
        self.service.register("release_claims", self._op_release)
        self.service.register("counts", lambda record, envelope: self.store.counts())
        self.service.register("dump", lambda record, envelope: self.store.dump_lines())
        self.service.register("ping", lambda record, envelope: "pong")
        ctx.router.bind(tier_id, self.service.handle)

    def _op_deposit(self, record: dict, envelope) -> str:
        demand = decode_demand(record["demand"])
        return self.store.deposit(demand).value

    def _op_claim(self, record: dict, envelope) -> bytes | None:
        kind = DemandKind(record["kind"]) if record.get("kind") is not None else None
        claimed = self.store.claim(kind, envelope.source_tier_id, record["lease"])
        return None if claimed is None else encode_demand(claimed)

    def _op_deliver(self, record: dict, envelope) -> str:
        outcome = self.store.deliver(DemandSignature(record["signature"]), record["value"],
                                     envelope.source_tier_id)
        return outcome.value

    def _op_fetch(self, record: dict, envelope) -> dict:
        result = self.store.fetch(DemandSignature(record["signature"]))
        return {"state": result.state.value, "value": result.value}

    def _op_release(self, record: dict, envelope) -> list[str]:
        return [s.value for s in self.store.release_claims(record["worker"])]

    def crash(self) -> None:
        """The store stops answering but keeps its state"""
        super().crash()
        self.store.available = False
        self.forensics.emit("store_down")

    def restart(self) -> None:
        super().restart()
        self.store.available = True
        self.forensics.emit("store_restarted")

    def stop(self) -> None:
        self.ctx.router.unbind(self.tier_id)

    def step(self, now: int) -> bool:
        if not self.store.available:
            return False
        return bool(self.store.expire_leases(now))

    def status(self) -> dict:
        status = super().status()
        status["store"] = self.store.counts()
        return status


# ---------------------------------------------------------------------- DGT

class StoreServices:
    """Evaluation services of a DGT: procedure calls become procedural demands"""

    def __init__(self, tier: "DemandGeneratorTier", geer_id: str | None):
        self.tier = tier
        self.geer_id = geer_id
        self.warehouse = tier.agent.warehouse

    def call_procedure(self, request: ProcedureRequest) -> Any:
        demand = procedural_demand(request.name, request.args, request.context, self.geer_id,
                                   self.tier.dst_tier_id())
        cached = self.warehouse.lookup(WarehouseKey.for_demand(demand.signature))
        if cached is not None:
            return cached
        return Waiting(demand)

    def wait(self, handle: Any) -> Any:
        raise RuntimeError("generator tiers resume evaluations from their own loop")


@dataclass
class DemandJob:
    """A suspended computation driven by a DGT (program evaluation or pipeline chain)"""
    job_id: str
    machine: Any
    deposited: set = field(default_factory=set)
    failures: int = 0
    polls: int = 0
    error: EductiveError | None = None

    @property
    def finished(self) -> bool:
        return self.error is not None or self.machine.done

    @property
    def result(self) -> Any:
        return self.machine.result


class DemandGeneratorTier(StoreClientMixin, Tier):
    kind = TierKind.DGT

    def __init__(self, tier_id: str, agent: "NodeAgent", ctx: TierContext):
        super().__init__(tier_id, agent, ctx)
        self.geer_pool: dict[str, Geer] = {}
        self.jobs: dict[str, DemandJob] = {}
        self._job_counter = 0
        self._classification = None

    # -- Geer pool

    def geer(self, geer_id: str) -> Geer:
        """Local pool first; a miss issues a resource demand to the GMT"""
        geer = self.geer_pool.get(geer_id)
        if geer is None:
            self.forensics.emit("resource_demand", geer_id=geer_id)
            document = self.messenger.call(self.ctx.gmt_tier_id, {"op": "resource", "geer_id": geer_id})
            geer = decode_geer(document)
            self.geer_pool[geer_id] = geer
        return geer

    # -- jobs

    def _next_job_id(self) -> str:
        self._job_counter += 1
        return f"{self.tier_id}-J{self._job_counter}"

    def submit_program(self, geer_id: str, entry_node_id: int | None, ctx: Context,
                       stage: str | None = None) -> str:
        """dgtServeProgramDemand, asynchronous half: start an evaluation job"""
        geer = self.geer(geer_id)
        entry = geer.entry if entry_node_id is None else entry_node_id
        evaluation = Evaluation(geer, entry, ctx, StoreServices(self, geer.geer_id),
                                self.ctx.settings.depth_limit, stage=stage)
        return self.submit(evaluation)

    def submit(self, machine: Any) -> str:
        job = DemandJob(self._next_job_id(), machine)
        self.jobs[job.job_id] = job
        logger.debug(f"{self.tier_id} accepted job {job.job_id}")
        return job.job_id

    def services(self, geer_id: str | None = None) -> StoreServices:
        return StoreServices(self, geer_id)

    def job(self, job_id: str) -> DemandJob:
        return self.jobs[job_id]

    def step(self, now: int) -> bool:
        progressed = False
        for job in list(self.jobs.values()):
            if not job.finished:
                progressed = self._drive(job) or progressed
        return progressed

    def _drive(self, job: DemandJob) -> bool:
        machine = job.machine
        demand: Demand | None = machine.waiting_on
        if demand is not None:
            try:
                if demand.signature.value not in job.deposited:
                    self.store_call({"op": "deposit", "demand": encode_demand(demand)})
                    job.deposited.add(demand.signature.value)
                fetched = self.store_call({"op": "fetch", "signature": demand.signature.value})
            except UNREACHABLE as e:
                job.failures += 1
                if job.failures > self.ctx.settings.store_retry_budget:
                    logger.warning(f"{self.tier_id} gave up on {job.job_id}: {e}")
                    job.error = StoreUnavailable(f"store unreachable after {job.failures} attempts")
                return False
            job.failures = 0
            if fetched["state"] != DemandState.COMPUTED.value:
                job.polls += 1
                return False
            value = fetched["value"]
            self.agent.warehouse.commit(WarehouseKey.for_demand(demand.signature), value,
                                        stage=getattr(machine, "stage", None))
            try:
                machine.resume(value)
            except EductiveError as e:
                job.error = e
                return True
        try:
            machine.advance()
        except EductiveError as e:
            job.error = e
        return True

    # -- recoverable classification stage

    @property
    def classification(self):
        """The recoverable classification service this DGT owns (created on first use)"""
        if self._classification is None:
            from services.classification_service import RecoverableClassificationService
            from services.wal_service import MemoryWalSink, WriteAheadLogger
            sink = self.ctx.wal_sinks.get(self.tier_id)
            if sink is None:
                factory = self.ctx.wal_sink_factory
                sink = factory(self.tier_id) if factory else MemoryWalSink()
                self.ctx.wal_sinks[self.tier_id] = sink
            self._classification = RecoverableClassificationService(
                WriteAheadLogger(sink, self.ctx.clock), self.forensics)
        return self._classification

    def adopt_log(self, failed_tier_id: str) -> int:
        """Replay the WAL left behind by a failed DGT before going live; returns replayed txns"""
        sink = self.ctx.wal_sinks.get(failed_tier_id)
        if sink is None:
            return 0
        replayed = self.classification.recover_from(sink.getvalue())
        self.forensics.emit("wal_replayed", source_tier=failed_tier_id, transactions=replayed)
        return replayed

    def status(self) -> dict:
        status = super().status()
        status["jobs"] = {"total": len(self.jobs), "open": sum(1 for j in self.jobs.values() if not j.finished)}
        return status


# ---------------------------------------------------------------------- DWT

class DemandWorkerTier(StoreClientMixin, Tier):
    kind = TierKind.DWT

    def __init__(self, tier_id: str, agent: "NodeAgent", ctx: TierContext):
        super().__init__(tier_id, agent, ctx)
        self.procedures = ctx.procedures()
        # computed results waiting for the DST to come back
        self.buffer: deque[tuple[str, Any]] = deque()
        self.processed = 0

    def _flush_buffer(self) -> None:
        while self.buffer:
            signature, value = self.buffer[0]
            try:
                outcome = self.store_call({"op": "deliver", "signature": signature, "value": value})
            except UNREACHABLE:
                return
            self.buffer.popleft()
            self.forensics.emit("buffered_delivery", signature=signature, outcome=outcome)

    def process_one(self) -> str:
        """dwtProcessOne: claim, execute, deliver (or buffer); 'processed' or 'idle'"""
        self._flush_buffer()
        try:
            encoded = self.store_call({"op": "claim", "kind": int(DemandKind.PROCEDURAL),
                                       "lease": self.ctx.settings.lease_millis})
        except UNREACHABLE:
            return "idle"
        if encoded is None:
            return "idle"
        demand = decode_demand(encoded)
        payload = demand.payload
        started = self.ctx.clock.now_micros()
        value = self.procedures.invoke(payload.procedure, payload.args)
        self.forensics.emit("procedure_executed", signature=demand.signature.value,
                            procedure=payload.procedure,
                            duration_micros=self.ctx.clock.now_micros() - started)
        try:
            self.store_call({"op": "deliver", "signature": demand.signature.value, "value": value})
        except UNREACHABLE as e:
            logger.warning(f"{self.tier_id} buffering result for {demand.signature}: {e}")
            self.buffer.append((demand.signature.value, value))
            self.forensics.emit("delivery_buffered", signature=demand.signature.value)
        self.processed += 1
        return "processed"

    def step(self, now: int) -> bool:
        return self.process_one() == "processed"

    def status(self) -> dict:
        status = super().status()
        status.update(processed=self.processed, buffered=len(self.buffer))
        return status


TIER_FACTORY: dict[TierKind, type[Tier]] = {
    TierKind.DST: DemandStoreTier,
    TierKind.DGT: DemandGeneratorTier,
    TierKind.DWT: DemandWorkerTier,
}


def create_tier(kind: TierKind, tier_id: str, agent: "NodeAgent", ctx: TierContext) -> Tier:
    """Tier factory keyed by kind"""
    try:
        tier_class = TIER_FACTORY[kind]
    except KeyError:
        raise ValueError(f"no factory for tier kind {kind.value}")
    return tier_class(tier_id, agent, ctx)


# --------------------------------------------------------------- node agent

class NodeAgent:
    """One node: hosts tiers, holds the node credential and the node's warehouse"""

    def __init__(self, node_id: str, ctx: TierContext):
        self.node_id = node_id
        self.ctx = ctx
        self.credential_token: bytes = b""
        self.tiers: dict[str, Tier] = {}
        self.warehouse = Warehouse(ctx.clock)
        self.last_heartbeat: int | None = None
        self.messenger = Messenger(ctx.router, f"node:{node_id}", self.token, ctx.signatures, ctx.clock)

    def token(self) -> bytes:
        return self.credential_token

    def register(self, descriptor) -> None:
        result = self.messenger.call(self.ctx.gmt_tier_id, {"op": "register_node",
                                                            "descriptor": descriptor.model_dump(mode="json")})
        self.credential_token = result["credential"]
        logger.info(f"Node {self.node_id} registered")

    def spawn(self, kind: TierKind, tier_id: str) -> Tier:
        tier = create_tier(kind, tier_id, self, self.ctx)
        self.tiers[tier_id] = tier
        tier.start()
        logger.info(f"Node {self.node_id} started {kind.value} {tier_id}")
        return tier

    def remove(self, tier_id: str) -> Tier | None:
        tier = self.tiers.pop(tier_id, None)
        if tier is not None:
            tier.stop()
        return tier

    def live_tiers(self) -> list[Tier]:
        return [t for t in self.tiers.values() if not t.crashed]

    def heartbeat(self, now: int) -> None:
        interval = self.ctx.settings.heartbeat_interval
        if self.last_heartbeat is not None and now - self.last_heartbeat < interval:
            return
        self.last_heartbeat = now
        for tier in self.live_tiers():
            try:
                tier.messenger.notify(self.ctx.gmt_tier_id, {"op": "heartbeat", "tier_id": tier.tier_id, "ts": now})
            except TransportError as e:
                logger.warning(f"Heartbeat from {tier.tier_id} not sent: {e}")

    def step(self, now: int) -> bool:
        self.heartbeat(now)
        progressed = False
        for tier in self.live_tiers():
            try:
                progressed = tier.step(now) or progressed
            except Exception as e:
                logger.error(f"Tier {tier.tier_id} step failed: {e}")
                logger.error(f"Traceback: {traceback.format_exc()}")
        return progressed
