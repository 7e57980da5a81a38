"""
Program representations: the surface/core syntax tree produced by the
parser and the compiled Geer resource consumed by the evaluator.
"""

from dataclasses import dataclass, field
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict

GEER_VERSION = 1

CORE_OPS = frozenset({
    "IntLit", "FloatLit", "BoolLit", "Ident", "BinOp", "UnOp",
    "If", "At", "HashDim", "Where", "ProcCall",
})
SUGAR_OPS = frozenset({"First", "Next", "Fby"})

BINARY_OPERATORS = ("+", "-", "*", "/", "%", "<", "<=", ">", ">=", "==", "!=", "&&", "||")
UNARY_OPERATORS = ("-", "!")

ARITY = {"If": 3, "At": 3, "BinOp": 2, "UnOp": 1, "HashDim": 0,
         "IntLit": 0, "FloatLit": 0, "BoolLit": 0, "Ident": 0,
         "First": 1, "Next": 1, "Fby": 2}


@dataclass(frozen=True)
class SyntaxNode:
    """
    Node of a parsed program tree.

    payload by op: literal value (IntLit/FloatLit/BoolLit), name (Ident,
    ProcCall), operator symbol (BinOp/UnOp), dimension name (HashDim,
    First/Next/Fby) or WherePayload (Where).
    Where children are [body, definition_1, ..., definition_n].
    """
    op: str
    children: tuple["SyntaxNode", ...] = ()
    payload: Any = None
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class WherePayload:
    dimensions: tuple[str, ...]
    definitions: tuple[str, ...]


class AstNode(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    op: str
    children: tuple[int, ...] = ()
    payload: Any = None


class IdentifierEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: Literal["intensional", "procedural", "dimension"]
    definition: int | None = None


class Geer(BaseModel):
    """Compiled, source-independent program resource"""
    model_config = ConfigDict(frozen=True)

    geer_id: str
    version: int = GEER_VERSION
    dimensions: tuple[str, ...]
    dictionary: tuple[IdentifierEntry, ...]
    nodes: tuple[AstNode, ...]
    entry: int

    def node(self, node_id: int) -> AstNode:
        return self.nodes[node_id]

    def lookup(self, name: str) -> IdentifierEntry | None:
        for entry in self.dictionary:
            if entry.name == name:
                return entry
        return None

    def definitions(self) -> dict[str, int]:
        return {e.name: e.definition for e in self.dictionary if e.kind == "intensional"}

    def procedures(self) -> list[str]:
        return [e.name for e in self.dictionary if e.kind == "procedural"]


@dataclass(frozen=True)
class SymbolReport:
    """Result of semantic analysis: every identifier with its kind"""
    kinds: dict[str, str]
    definitions: tuple[str, ...]
    dimensions: tuple[str, ...]
    procedures: tuple[str, ...]

    def kind_of(self, name: str) -> str | None:
        return self.kinds.get(name)
