"""
DOT emission for compiled programs (dataflow view of a Geer) and for
forensic logs (demand lifecycle paths). Only the DOT source is produced;
rendering is left to whatever graphviz installation the operator has.
"""

import logging
from typing import Iterable

from graphviz import Digraph

from models.forensics import ForensicEvent
from models.geer import Geer

logger = logging.getLogger(__name__)

# forensic event name -> lifecycle state it moves a demand into
LIFECYCLE_TRANSITIONS = {
    "demand_deposited": "pending",
    "demand_claimed": "inProcess",
    "lease_expired": "pending",
    "claim_released": "pending",
    "demand_computed": "computed",
}


def _node_label(node) -> str:
    if node.payload is None:
        return node.op
    if node.op == "Where":
        dimensions = ",".join(node.payload.get("dimensions", ())) if isinstance(node.payload, dict) else ""
        return f"Where\\n[{dimensions}]" if dimensions else "Where"
    return f"{node.op}\\n{node.payload}"


def geer_dot(geer: Geer) -> str:
    """Dataflow graph: AST edges plus dashed identifier-to-definition edges"""
    dot = Digraph(name="geer", graph_attr={"label": geer.geer_id}, node_attr={"shape": "box"})
    definitions = geer.definitions()
    for node in geer.nodes:
        dot.node(f"n{node.id}", label=_node_label(node))
    for node in geer.nodes:
        for index, child in enumerate(node.children):
            dot.edge(f"n{node.id}", f"n{child}", label=str(index))
        if node.op == "Ident" and node.payload in definitions:
            dot.edge(f"n{node.id}", f"n{definitions[node.payload]}", style="dashed", label="def")
    return dot.source


def lifecycle_paths(events: Iterable[ForensicEvent]) -> dict[str, list[str]]:
    """Per demand signature, the sequence of lifecycle states the log shows"""
    paths: dict[str, list[str]] = {}
    for event in sorted(events, key=lambda e: e.order_key):
        state = LIFECYCLE_TRANSITIONS.get(event.name)
        signature = event.get("signature")
        if state is None or signature is None:
            continue
        path = paths.setdefault(signature, [])
        if event.name == "demand_deposited" and path:
            continue  # re-deposit of a known demand
        path.append(state)
    return paths


def lifecycle_dot(events: Iterable[ForensicEvent]) -> str:
    """Demand lifecycle graph: one chain of state nodes per signature"""
    ordered = sorted(events, key=lambda e: e.order_key)
    dot = Digraph(name="demand_lifecycle", node_attr={"shape": "ellipse"})
    positions: dict[str, int] = {}
    for event in ordered:
        state = LIFECYCLE_TRANSITIONS.get(event.name)
        signature = event.get("signature")
        if state is None or signature is None:
            continue
        short = signature[:12]
        if signature not in positions:
            positions[signature] = 0
            dot.node(f"{short}_0", label=f"{short}\\n{state}")
            continue
        if event.name == "demand_deposited":
            continue
        previous = positions[signature]
        current = previous + 1
        positions[signature] = current
        worker = event.get("worker")
        dot.node(f"{short}_{current}", label=f"{state}\\n{worker}" if worker else state)
        dot.edge(f"{short}_{previous}", f"{short}_{current}", label=event.name)
    return dot.source
