"""
Demand-driven (eductive) evaluator over a Geer.

Each node evaluation is a generator frame on an explicit stack. A frame
yields either a child request `(node_id, context)` or a procedure call;
the trampoline in Evaluation.advance() drives the frames, so evaluation
depth is bounded by the configured limit rather than the Python stack.

A procedure call may be answered immediately (local table) or suspend the
evaluation until the awaited demand is computed; generator tiers resume
it with Evaluation.resume(value).
"""

import logging
from dataclasses import dataclass
from typing import Any, Generator, Protocol

from models.demands import Context, WarehouseKey, is_error_record
from models.geer import Geer
from services.operators import apply_binary, apply_unary, require_bool, require_tag
from services.procedures import ProcedureTable
from services.warehouse import Warehouse
from utils.errors import DepthExceeded, ProceduralFailure, UnknownDimension, UnknownProcedure

logger = logging.getLogger(__name__)

DEFAULT_DEPTH_LIMIT = 10_000
LEAF_OPS = frozenset({"IntLit", "FloatLit", "BoolLit", "HashDim"})


@dataclass(frozen=True)
class ProcedureRequest:
    name: str
    args: tuple
    context: Context


@dataclass(frozen=True)
class Waiting:
    """Marker returned by services whose procedure result is not ready yet"""
    handle: Any


class EvaluationServices(Protocol):
    warehouse: Warehouse | None

    def call_procedure(self, request: ProcedureRequest) -> Any:
        """Return the result value (or error record), or Waiting(handle)"""

    def wait(self, handle: Any) -> Any:
        """Block until the awaited result is available"""


class LocalServices:
    """Procedures run in-process against a table; no store round-trip"""

    def __init__(self, procedures: ProcedureTable | None = None, warehouse: Warehouse | None = None):
        self.procedures = procedures or ProcedureTable()
        self.warehouse = warehouse

    def call_procedure(self, request: ProcedureRequest) -> Any:
        return self.procedures.invoke(request.name, request.args)

    def wait(self, handle: Any) -> Any:
        raise RuntimeError("local services never suspend")


@dataclass
class EvaluationStats:
    intensional_evaluations: int = 0
    warehouse_hits: int = 0
    procedural_demands: int = 0
    max_depth: int = 0


def raise_for_record(name: str, value: Any) -> Any:
    """Re-raise an error record delivered for procedure `name`"""
    if is_error_record(value):
        if value["error"] == "UnknownProcedure":
            raise UnknownProcedure(name)
        raise ProceduralFailure(name, f"{value['error']}: {value['detail']}")
    return value


class Evaluation:
    """Resumable evaluation of one node of a Geer in one context"""

    def __init__(self, geer: Geer, node_id: int, context: Context, services: EvaluationServices,
                 depth_limit: int = DEFAULT_DEPTH_LIMIT, stage: str | None = None):
        undeclared = [d for d, _ in context.bindings if d not in geer.dimensions]
        if undeclared:
            raise UnknownDimension(undeclared[0])
        self.geer = geer
        self.services = services
        self.depth_limit = depth_limit
        self.stage = stage
        self.stats = EvaluationStats()
        self.waiting_on: Any = None
        self.done = False
        self.result: Any = None
        self._definitions = geer.definitions()
        self._dimensions = frozenset(geer.dimensions)
        self._stack: list[Generator] = [self._root(node_id, context)]
        self._send: Any = None
        self._pending_request: ProcedureRequest | None = None

    # -- driver

    def advance(self) -> bool:
        """Run until finished or suspended on a procedure result; True when finished"""
        if self.done:
            return True
        if self.waiting_on is not None:
            return False
        stack = self._stack
        try:
            while stack:
                try:
                    request = stack[-1].send(self._send)
                except StopIteration as stop:
                    stack.pop()
                    self._send = stop.value
                    continue
                self._send = None
                if isinstance(request, ProcedureRequest):
                    self.stats.procedural_demands += 1
                    outcome = self.services.call_procedure(request)
                    if isinstance(outcome, Waiting):
                        self.waiting_on = outcome.handle
                        self._pending_request = request
                        return False
                    self._send = raise_for_record(request.name, outcome)
                    continue
                node = self.geer.node(request[0])
                if node.op in LEAF_OPS:
                    self._send = self._leaf(node, request[1])
                    continue
                if len(stack) >= self.depth_limit:
                    raise DepthExceeded(self.depth_limit)
                stack.append(self._frame(node, request[1]))
                self.stats.max_depth = max(self.stats.max_depth, len(stack))
        except BaseException:
            self._abandon()
            raise
        self.done = True
        self.result = self._send
        return True

    def resume(self, value: Any) -> None:
        """Hand the awaited procedure result back to the suspended frame"""
        if self.waiting_on is None:
            raise RuntimeError("evaluation is not waiting")
        request = self._pending_request
        self.waiting_on = None
        self._pending_request = None
        try:
            self._send = raise_for_record(request.name, value)
        except BaseException:
            self._abandon()
            raise

    def run(self) -> Any:
        """Run to completion, blocking on the services for procedure results"""
        while not self.advance():
            self.resume(self.services.wait(self.waiting_on))
        return self.result

    def _abandon(self) -> None:
        for frame in self._stack:
            frame.close()
        self._stack.clear()
        self.done = True

    # -- frames

    def _root(self, node_id: int, ctx: Context):
        return (yield (node_id, ctx))

    @staticmethod
    def _leaf(node, ctx: Context):
        if node.op == "HashDim":
            return ctx.get(node.payload)
        return node.payload

    def _frame(self, node, ctx: Context) -> Generator:
        op = node.op
        if op == "Ident":
            return self._ident(node.payload, ctx)
        if op == "BinOp":
            return self._binop(node, ctx)
        if op == "UnOp":
            return self._unop(node, ctx)
        if op == "If":
            return self._if(node, ctx)
        if op == "At":
            return self._at(node, ctx)
        if op == "Where":
            return self._where(node, ctx)
        if op == "ProcCall":
            return self._call(node, ctx)
        raise ValueError(f"unknown node op {op}")

    def _ident(self, name: str, ctx: Context):
        definition = self._definitions.get(name)
        if definition is None:
            # a bare dimension name reads its tag
            return ctx.get(name)
        warehouse = self.services.warehouse
        key = WarehouseKey.for_node(self.geer.geer_id, definition, ctx, self.geer.dimensions)
        if warehouse is not None:
            cached = warehouse.lookup_entry(key)
            if cached is not None:
                self.stats.warehouse_hits += 1
                return cached.value
        self.stats.intensional_evaluations += 1
        value = yield (definition, ctx)
        if warehouse is not None:
            warehouse.commit(key, value, stage=self.stage)
        return value

    def _binop(self, node, ctx: Context):
        left = yield (node.children[0], ctx)
        right = yield (node.children[1], ctx)
        return apply_binary(node.payload, left, right)

    def _unop(self, node, ctx: Context):
        operand = yield (node.children[0], ctx)
        return apply_unary(node.payload, operand)

    def _if(self, node, ctx: Context):
        condition = yield (node.children[0], ctx)
        branch = node.children[1] if require_bool(condition, "if condition") else node.children[2]
        return (yield (branch, ctx))

    def _at(self, node, ctx: Context):
        expr, ref, tag_node = node.children
        dim = self.geer.node(ref).payload
        tag = require_tag((yield (tag_node, ctx)), dim)
        return (yield (expr, ctx.override(dim, tag, self._dimensions)))

    def _where(self, node, ctx: Context):
        return (yield (node.children[0], ctx))

    def _call(self, node, ctx: Context):
        args = []
        for child in node.children:
            args.append((yield (child, ctx)))
        return (yield ProcedureRequest(node.payload, tuple(args), ctx))


def eval_eductive(geer: Geer, node_id: int | None, context: Context, services: EvaluationServices,
                  depth_limit: int = DEFAULT_DEPTH_LIMIT) -> Any:
    """evalEductive: run-to-completion wrapper around Evaluation"""
    entry = geer.entry if node_id is None else node_id
    return Evaluation(geer, entry, context, services, depth_limit).run()
