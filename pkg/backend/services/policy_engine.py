"""
Autonomic policy engine: fluents over the forensic event stream and the
mappings that turn fluent activations into actions.

A fluent is a condition-bounded state. Each tick the engine feeds the new
events through every fluent's entry/exit conditions in order, then
evaluates once more at `now` so purely time-based conditions (quiet
windows) can fire. Newly activated fluents yield the mapped actions, in
mapping order, exactly once per activation.
"""

import logging
from collections import defaultdict, deque
from typing import Iterable

from models.autonomic import (
    ConditionView,
    Fluent,
    FluentState,
    PolicyAction,
    PolicyMapping,
    PolicyScope,
)
from models.forensics import ForensicEvent
from services.warehouse import CLASSIFICATION_STAGE

logger = logging.getLogger(__name__)

HISTORY_HORIZON_MICROS = 10_000_000

ATTACK_EVENT = "unauthenticated_message"
ATTACK_THRESHOLD = 3
ATTACK_WINDOW_MICROS = 50_000

SYNC_CACHES = "syncClassificationCaches"
RESELECT_PROTOCOL = "reselectProtocol"
HEAL_FAILED_TIER = "healFailedTier"
RECORD_PROTECTION_ALERT = "recordProtectionAlert"


class EventHistory:
    """Recent event timestamps per event name, for windowed conditions"""

    def __init__(self, horizon_micros: int = HISTORY_HORIZON_MICROS):
        self.horizon_micros = horizon_micros
        self._times: dict[str, deque] = defaultdict(deque)

    def add(self, event: ForensicEvent) -> None:
        times = self._times[event.name]
        times.append(event.occurred_at)
        while times and times[0] < event.occurred_at - self.horizon_micros:
            times.popleft()

    def count_since(self, name: str, since: int) -> int:
        return sum(1 for t in self._times.get(name, ()) if t >= since)


class PolicyEngine:
    def __init__(self, fluents: Iterable[Fluent], mappings: Iterable[PolicyMapping],
                 scopes: Iterable[PolicyScope] = (PolicyScope.AS, PolicyScope.AE),
                 forensics=None, name: str = "policy"):
        self.name = name
        self.fluents = list(fluents)
        self.scopes = frozenset(scopes)
        self.mappings = [m for m in mappings if m.scope in self.scopes]
        self.forensics = forensics
        self.history = EventHistory()
        self.states: dict[tuple[str, str | None], FluentState] = {}
        self.fired: list[PolicyAction] = []

    def state(self, fluent_name: str, key: str | None = None) -> FluentState:
        return self.states.get((fluent_name, key), FluentState())

    def active(self, fluent_name: str) -> list[str | None]:
        return [key for (name, key), s in self.states.items() if name == fluent_name and s.active]

    def tick(self, events: Iterable[ForensicEvent], now: int) -> list[PolicyAction]:
        """policyTick: actions for the fluents that became active during this tick"""
        actions: list[PolicyAction] = []
        for event in events:
            self.history.add(event)
            view = ConditionView(event, event.occurred_at, self.history)
            for fluent in self.fluents:
                self._evaluate(fluent, view, actions)
        view = ConditionView(None, now, self.history)
        for fluent in self.fluents:
            self._evaluate(fluent, view, actions)
        self.fired.extend(actions)
        return actions

    def _keys(self, fluent: Fluent, view: ConditionView) -> list[str | None]:
        if fluent.key is None:
            return [None]
        if view.event is not None:
            key = fluent.key(view.event)
            return [] if key is None else [key]
        # without an event only running instances can change (exit on time)
        return sorted(self.active(fluent.name))

    def _evaluate(self, fluent: Fluent, view: ConditionView, actions: list[PolicyAction]) -> None:
        try:
            keys = self._keys(fluent, view)
        except Exception as e:
            self._condition_failed(fluent, view, e)
            return
        for key in keys:
            state = self.states.setdefault((fluent.name, key), FluentState())
            try:
                if not state.active:
                    if fluent.entry(view):
                        state.active = True
                        state.active_since = view.now
                        state.trigger = view.event
                        actions.extend(self._actions_for(fluent.name, key, view.event))
                elif fluent.exit(view):
                    state.active = False
                    state.active_since = None
                    state.trigger = None
            except Exception as e:
                self._condition_failed(fluent, view, e)

    def _actions_for(self, fluent_name: str, key: str | None, trigger: ForensicEvent | None) -> list[PolicyAction]:
        return [
            PolicyAction(action_id, fluent_name, key, trigger, mapping.scope)
            for mapping in self.mappings if mapping.fluent_name == fluent_name
            for action_id in mapping.actions
        ]

    def _condition_failed(self, fluent: Fluent, view: ConditionView, error: Exception) -> None:
        logger.warning(f"{self.name}: condition of fluent {fluent.name} raised {type(error).__name__}: {error}")
        if self.forensics is not None:
            self.forensics.emit("policy_condition_failed", fluent=fluent.name,
                                error=f"{type(error).__name__}: {error}",
                                event=view.event.name if view.event else None)


# ------------------------------------------------------------ built-ins

def _named(view: ConditionView, name: str, **properties) -> bool:
    event = view.event
    if event is None or event.name != name:
        return False
    return all(event.get(k) == v for k, v in properties.items())


def _tier_key(event: ForensicEvent) -> str | None:
    if event.name in ("tier_failed", "tier_healed", "tier_deallocated"):
        return event.get("tier")
    return None


IN_CLASSIFICATION_STAGE = Fluent(
    "inClassificationStage",
    entry=lambda v: _named(v, "stage_entered", stage=CLASSIFICATION_STAGE),
    exit=lambda v: _named(v, "stage_exited", stage=CLASSIFICATION_STAGE),
)

TIER_FAILED = Fluent(
    "tierFailed",
    entry=lambda v: _named(v, "tier_failed"),
    exit=lambda v: _named(v, "tier_healed") or _named(v, "tier_deallocated"),
    key=_tier_key,
)

UNDER_ATTACK = Fluent(
    "underAttack",
    entry=lambda v: v.count_recent(ATTACK_EVENT, ATTACK_WINDOW_MICROS) >= ATTACK_THRESHOLD,
    exit=lambda v: v.count_recent(ATTACK_EVENT, ATTACK_WINDOW_MICROS) == 0,
)

BUILTIN_FLUENTS = (IN_CLASSIFICATION_STAGE, TIER_FAILED, UNDER_ATTACK)

BUILTIN_MAPPINGS = (
    PolicyMapping(IN_CLASSIFICATION_STAGE.name, (SYNC_CACHES,), PolicyScope.AS),
    PolicyMapping(IN_CLASSIFICATION_STAGE.name, (RESELECT_PROTOCOL,), PolicyScope.AE),
    PolicyMapping(TIER_FAILED.name, (HEAL_FAILED_TIER,), PolicyScope.AS),
    PolicyMapping(UNDER_ATTACK.name, (RECORD_PROTECTION_ALERT,), PolicyScope.AS),
)


def builtin_engine(scopes: Iterable[PolicyScope] = (PolicyScope.AS, PolicyScope.AE),
                   forensics=None, name: str = "policy") -> PolicyEngine:
    return PolicyEngine(BUILTIN_FLUENTS, BUILTIN_MAPPINGS, scopes, forensics, name)
