"""
Naive reference interpreter: recursive, unmemoized, and sugar-aware.

Works directly on parsed trees (surface or desugared) and counts every
intensional identifier evaluation, which makes it the oracle for both
result values and memoization effectiveness.
"""

import logging
import sys
from typing import Any

from models.demands import Context
from models.geer import SyntaxNode
from services.evaluator import raise_for_record
from services.operators import apply_binary, apply_unary, require_bool, require_tag
from services.procedures import ProcedureTable
from utils.errors import DepthExceeded

logger = logging.getLogger(__name__)


class NaiveInterpreter:
    def __init__(self, tree: SyntaxNode, procedures: ProcedureTable | None = None,
                 depth_limit: int = 10_000):
        self.tree = tree
        self.procedures = procedures or ProcedureTable()
        self.depth_limit = depth_limit
        self.identifier_evaluations = 0
        self._definitions: dict[str, SyntaxNode] = {}
        self._collect(tree)

    def _collect(self, node: SyntaxNode) -> None:
        stack = [node]
        while stack:
            current = stack.pop()
            if current.op == "Where":
                for name, expr in zip(current.payload.definitions, current.children[1:]):
                    self._definitions[name] = expr
            stack.extend(current.children)

    def evaluate(self, context: Context | None = None, node: SyntaxNode | None = None) -> Any:
        limit = sys.getrecursionlimit()
        # each tree level costs a handful of Python frames
        sys.setrecursionlimit(max(limit, self.depth_limit * 4 + 1000))
        try:
            return self._eval(node or self.tree, context or Context(), 0)
        except RecursionError:
            raise DepthExceeded(self.depth_limit) from None
        finally:
            sys.setrecursionlimit(limit)

    def _eval(self, node: SyntaxNode, ctx: Context, depth: int) -> Any:
        if depth >= self.depth_limit:
            raise DepthExceeded(self.depth_limit)
        depth += 1
        op, kids = node.op, node.children
        if op in ("IntLit", "FloatLit", "BoolLit"):
            return node.payload
        if op == "HashDim":
            return ctx.get(node.payload)
        if op == "Ident":
            definition = self._definitions.get(node.payload)
            if definition is None:
                return ctx.get(node.payload)
            self.identifier_evaluations += 1
            return self._eval(definition, ctx, depth)
        if op == "BinOp":
            left = self._eval(kids[0], ctx, depth)
            right = self._eval(kids[1], ctx, depth)
            return apply_binary(node.payload, left, right)
        if op == "UnOp":
            return apply_unary(node.payload, self._eval(kids[0], ctx, depth))
        if op == "If":
            condition = require_bool(self._eval(kids[0], ctx, depth), "if condition")
            return self._eval(kids[1] if condition else kids[2], ctx, depth)
        if op == "At":
            dim = kids[1].payload
            tag = require_tag(self._eval(kids[2], ctx, depth), dim)
            return self._eval(kids[0], ctx.override(dim, tag), depth)
        if op == "Where":
            return self._eval(kids[0], ctx, depth)
        if op == "ProcCall":
            args = tuple(self._eval(k, ctx, depth) for k in kids)
            return raise_for_record(node.payload, self.procedures.invoke(node.payload, args))
        if op == "First":
            return self._eval(kids[0], ctx.override(node.payload, 0), depth)
        if op == "Next":
            tag = apply_binary("+", ctx.get(node.payload), 1)
            return self._eval(kids[0], ctx.override(node.payload, tag), depth)
        if op == "Fby":
            tag = ctx.get(node.payload)
            if tag <= 0:
                return self._eval(kids[0], ctx, depth)
            return self._eval(kids[1], ctx.override(node.payload, apply_binary("-", tag, 1)), depth)
        raise ValueError(f"unknown node op {op}")
