"""
Geer file codec (`.geer.json`).

decode_geer validates every structural invariant before handing a Geer to
an evaluator, so a worker never runs a tampered or truncated resource.
"""

import json
import logging

from pydantic import ValidationError

from models.geer import CORE_OPS, GEER_VERSION, Geer
from services.compiler_service import canonical_json, check_arity, compute_geer_id, geer_document
from utils.errors import GeerFormatError, GeerVersionError

logger = logging.getLogger(__name__)

GEER_SUFFIX = ".geer.json"
REQUIRED_KEYS = ("version", "geer_id", "dimensions", "dictionary", "nodes", "entry")


def encode_geer(geer: Geer) -> bytes:
    return canonical_json(geer_document(geer)).encode("utf-8")


def decode_geer(data: bytes | str) -> Geer:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as e:
            raise GeerFormatError(f"geer is not UTF-8 text: {e.reason}") from e
    try:
        document = json.loads(data)
    except ValueError as e:
        raise GeerFormatError(f"geer is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise GeerFormatError("geer document must be a JSON object")
    if "version" not in document:
        raise GeerFormatError("missing key 'version'")
    version = document["version"]
    if isinstance(version, bool) or not isinstance(version, int) or version != GEER_VERSION:
        raise GeerVersionError(version)
    missing = [k for k in REQUIRED_KEYS if k not in document]
    if missing:
        raise GeerFormatError(f"missing keys {missing}")
    try:
        geer = Geer.model_validate(document, strict=False)
    except ValidationError as e:
        raise GeerFormatError(f"invalid geer structure: {e.errors()[0]['msg']}") from e
    validate_geer(geer)
    expected = compute_geer_id(geer_document(geer))
    if geer.geer_id != expected:
        raise GeerFormatError(f"geer_id {geer.geer_id} does not match content hash {expected}")
    return geer


def validate_geer(geer: Geer) -> None:
    """Check the structural invariants of a Geer, raising GeerFormatError"""
    nodes = geer.nodes
    count = len(nodes)
    names = {}
    for entry in geer.dictionary:
        if entry.name in names:
            raise GeerFormatError(f"dictionary name '{entry.name}' is not unique")
        names[entry.name] = entry
        if entry.kind == "intensional":
            if entry.definition is None or not 0 <= entry.definition < count:
                raise GeerFormatError(f"intensional '{entry.name}' has no valid definition")
        elif entry.definition is not None:
            raise GeerFormatError(f"{entry.kind} '{entry.name}' must not carry a definition")
    dimensions = set(geer.dimensions)
    if len(dimensions) != len(geer.dimensions):
        raise GeerFormatError("dimension list has duplicates")
    if not 0 <= geer.entry < count:
        raise GeerFormatError(f"entry node {geer.entry} does not exist")

    parents = [0] * count
    for index, node in enumerate(nodes):
        if node.id != index:
            raise GeerFormatError(f"node at position {index} has id {node.id}")
        if node.op not in CORE_OPS:
            raise GeerFormatError(f"node {index} has non-core op {node.op!r}")
        if not check_arity(node.op, len(node.children)):
            raise GeerFormatError(f"node {index} ({node.op}) has {len(node.children)} children")
        for child in node.children:
            if not 0 <= child < count:
                raise GeerFormatError(f"node {index} references missing child {child}")
            parents[child] += 1
        _validate_payload(node, nodes, names, dimensions)

    if parents[geer.entry] != 0:
        raise GeerFormatError("entry node has a parent")
    for index, seen in enumerate(parents):
        if index != geer.entry and seen != 1:
            raise GeerFormatError(f"node {index} has {seen} parents")
    reached = set()
    stack = [geer.entry]
    while stack:
        current = stack.pop()
        if current in reached:
            raise GeerFormatError("node graph is cyclic")
        reached.add(current)
        stack.extend(nodes[current].children)
    if len(reached) != count:
        raise GeerFormatError("node table has unreachable nodes")


def _validate_payload(node, nodes, names, dimensions) -> None:
    op, payload = node.op, node.payload
    if op == "IntLit" and (isinstance(payload, bool) or not isinstance(payload, int)):
        raise GeerFormatError(f"node {node.id}: IntLit payload must be an integer")
    if op == "FloatLit" and not isinstance(payload, float):
        raise GeerFormatError(f"node {node.id}: FloatLit payload must be a float")
    if op == "BoolLit" and not isinstance(payload, bool):
        raise GeerFormatError(f"node {node.id}: BoolLit payload must be a boolean")
    if op == "Ident" and payload not in names:
        raise GeerFormatError(f"node {node.id}: identifier {payload!r} not in dictionary")
    if op == "HashDim" and payload not in dimensions:
        raise GeerFormatError(f"node {node.id}: dimension {payload!r} not declared")
    if op == "ProcCall":
        entry = names.get(payload)
        if entry is None or entry.kind != "procedural":
            raise GeerFormatError(f"node {node.id}: procedure {payload!r} not in dictionary")
    if op == "At":
        ref = nodes[node.children[1]] if node.children[1] < len(nodes) else None
        if ref is None or ref.op != "Ident" or ref.payload not in dimensions:
            raise GeerFormatError(f"node {node.id}: At must reference a declared dimension")
    if op == "Where":
        if not isinstance(payload, dict):
            raise GeerFormatError(f"node {node.id}: Where payload must be an object")
        dims = payload.get("dimensions")
        defs = payload.get("definitions")
        if not isinstance(dims, list) or not isinstance(defs, list):
            raise GeerFormatError(f"node {node.id}: Where payload lists missing")
        if any(d not in dimensions for d in dims):
            raise GeerFormatError(f"node {node.id}: Where declares an unknown dimension")
        if len(defs) != len(node.children) - 1:
            raise GeerFormatError(f"node {node.id}: Where definition count mismatch")
        for name, child in zip(defs, node.children[1:]):
            entry = names.get(name)
            if entry is None or entry.kind != "intensional" or entry.definition != child:
                raise GeerFormatError(f"node {node.id}: definition {name!r} is not bound to node {child}")
    if op in ("BinOp", "UnOp") and not isinstance(payload, str):
        raise GeerFormatError(f"node {node.id}: operator payload must be a symbol")


def read_geer_file(path) -> Geer:
    with open(path, "rb") as handle:
        return decode_geer(handle.read())


def write_geer_file(geer: Geer, path) -> None:
    with open(path, "wb") as handle:
        handle.write(encode_geer(geer))
    logger.info(f"Wrote geer {geer.geer_id} to {path}")
