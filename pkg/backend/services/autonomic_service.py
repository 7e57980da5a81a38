"""
Autonomic actions: cache synchronization (self-optimization), tier healing
(self-healing) and protection alerts (self-protection).

These functions act on explicit collaborators (warehouses, the GMT) so they
can be exercised without a whole instance; the runtime dispatches policy
actions to them.
"""

import logging
import traceback
from dataclasses import dataclass, field

from models.autonomic import HealingReport
from models.tiers import DeallocationRequest, TierKind, TierStatus
from services.warehouse import CLASSIFICATION_STAGE, Warehouse
from utils.canonical import values_equal
from utils.errors import NoCapacity, StoreUnavailable, TierError, TransportError

logger = logging.getLogger(__name__)


@dataclass
class SyncReport:
    imported: dict[str, int] = field(default_factory=dict)
    conflicts: int = 0
    unreachable: list[str] = field(default_factory=list)


def sync_classification_caches(warehouses: dict[str, Warehouse | None], forensics=None) -> SyncReport:
    """
    syncClassificationCaches: every reachable node ends up holding the union
    of all classification-stage entries. Conflicting values for one key
    resolve to the earliest commit (node id breaks timestamp ties).
    `None` marks a node that cannot be reached.
    """
    report = SyncReport()
    reachable = {}
    for node_id in sorted(warehouses):
        warehouse = warehouses[node_id]
        if warehouse is None:
            report.unreachable.append(node_id)
        else:
            reachable[node_id] = warehouse
    if not reachable:
        return report

    winners = {}
    for node_id, warehouse in reachable.items():
        for key, entry in warehouse.entries(CLASSIFICATION_STAGE).items():
            current = winners.get(key)
            if current is None:
                winners[key] = (entry, node_id)
                continue
            held, holder = current
            if values_equal(held.value, entry.value):
                continue
            if forensics is not None:
                forensics.emit("cache_conflict", key=str(key), nodes=f"{holder},{node_id}")
            report.conflicts += 1
            if (entry.committed_at, node_id) < (held.committed_at, holder):
                winners[key] = (entry, node_id)

    for node_id, warehouse in reachable.items():
        local = warehouse.entries(CLASSIFICATION_STAGE)
        imported = 0
        for key in sorted(winners, key=str):
            entry, _ = winners[key]
            mine = local.get(key)
            if mine is None:
                imported += warehouse.import_entries([(key, entry)])
            elif not values_equal(mine.value, entry.value):
                warehouse.replace(key, entry)
                imported += 1
        report.imported[node_id] = imported
    if forensics is not None:
        forensics.emit("caches_synced", nodes=len(reachable), entries=len(winners),
                       unreachable=",".join(report.unreachable) or None)
    logger.info(f"Synchronized classification caches: {report.imported}")
    return report


def heal_failed_tier(gmt, tier_id: str) -> HealingReport:
    """
    healFailedTier: revert the tier's claims, allocate a replacement and
    replay the failed tier's log into it. Raises NoCapacity when no node can
    host the replacement; the failed tier stays failed so a later attempt
    can finish the job.
    """
    ref = gmt.tier(tier_id)
    report = HealingReport(failed_tier_id=tier_id)
    if ref.status != TierStatus.FAILED:
        raise TierError(f"tier {tier_id} is {ref.status.value}, not failed")
    if ref.kind in (TierKind.DST, TierKind.GMT):
        report.degraded = True
        report.detail = f"{ref.kind.value} tiers recover by operator restart"
        gmt.forensics.emit("healing_deferred", tier=tier_id, reason=report.detail)
        return report

    if ref.kind == TierKind.DWT:
        try:
            report.reverted = list(gmt.release_claims(tier_id))
        except (StoreUnavailable, TransportError) as e:
            # leases expire on their own once the store is back
            report.detail = f"claims not released: {e}"
    try:
        report.replacement_tier_id = gmt.allocate_replacement(ref.kind, ref.node_id)
    except NoCapacity as e:
        report.degraded = True
        report.detail = str(e)
        gmt.forensics.emit("healing_degraded", tier=tier_id, reason=str(e), reverted=len(report.reverted))
        raise

    if ref.kind == TierKind.DGT:
        replacement = gmt.agent(gmt.tier(report.replacement_tier_id).node_id).tiers[report.replacement_tier_id]
        try:
            report.replayed_transactions = replacement.adopt_log(tier_id)
        except Exception as e:
            logger.error(f"Log replay into {report.replacement_tier_id} failed: {e}")
            logger.error(f"Traceback: {traceback.format_exc()}")
            report.detail = f"log replay failed: {e}"

    gmt.deallocate_tier(DeallocationRequest(tier_id=tier_id, reason="healed"))
    gmt.forensics.emit("tier_healed", tier=tier_id, replacement=report.replacement_tier_id,
                       reverted=len(report.reverted), replayed=report.replayed_transactions)
    logger.info(f"Healed {tier_id}: replacement {report.replacement_tier_id}, "
                f"{len(report.reverted)} claims reverted")
    return report


def record_protection_alert(forensics, trigger=None, count: int | None = None) -> None:
    """Self-protection response: an alert event the forensic analysis can key on"""
    logger.warning(f"Protection alert raised after {count} unauthenticated messages")
    forensics.emit("protection_alert", count=count,
                   source=trigger.get("source") if trigger is not None else None)
