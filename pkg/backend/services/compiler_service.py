"""
Compiler front-end for the intensional language.

parse_program -> desugar_to_core -> analyze -> generate_geer, with
compile_source chaining the four stages. The concrete grammar is an
Indexical-Lucid style subset:

    E where dimension t, u; N = E; ... end
    E @ d:E   #d   first.d E   next.d E   E fby.d E
    if E then E else E   name(args)   + - * / % < <= > >= == != && || !
"""

import hashlib
import json
import logging
import math
from typing import Iterable

from lark import Lark, Token, Tree
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken

from models.demands import Context
from models.geer import (
    ARITY,
    GEER_VERSION,
    SUGAR_OPS,
    AstNode,
    Geer,
    IdentifierEntry,
    SymbolReport,
    SyntaxNode,
    WherePayload,
)
from utils.canonical import INT64_MAX
from utils.errors import (
    DimensionShadowing,
    DuplicateDefinition,
    LucidSyntaxError,
    UndefinedIdentifier,
    UnknownDimension,
)

logger = logging.getLogger(__name__)

GRAMMAR = r"""
?start: expr

?expr: simple_expr
     | simple_expr "where" clause* "end"                -> where

?simple_expr: "if" expr "then" expr "else" simple_expr  -> if_
            | fby_expr

?fby_expr: or_expr
         | or_expr "fby" "." NAME fby_expr              -> fby

?or_expr: and_expr
        | or_expr OROP and_expr                         -> binop
?and_expr: cmp_expr
         | and_expr ANDOP cmp_expr                      -> binop
?cmp_expr: add_expr
         | add_expr CMPOP add_expr                      -> binop
?add_expr: mul_expr
         | add_expr PLUS mul_expr                       -> binop
         | add_expr MINUS mul_expr                      -> binop
?mul_expr: unary
         | mul_expr MULOP unary                         -> binop

?unary: at_expr
      | MINUS unary                                     -> unop
      | BANG unary                                      -> unop
      | "first" "." NAME unary                          -> first
      | "next" "." NAME unary                           -> next

?at_expr: atom
        | at_expr "@" NAME ":" tag                      -> at

?tag: atom
    | MINUS tag                                         -> unop

?atom: INT                                              -> int_lit
     | FLOAT                                            -> float_lit
     | "true"                                           -> true_lit
     | "false"                                          -> false_lit
     | "#" NAME                                         -> hash_dim
     | NAME "(" [args] ")"                              -> proc_call
     | NAME                                             -> ident
     | "(" expr ")"

args: expr ("," expr)*

clause: "dimension" NAME ("," NAME)* ";"               -> dimdecl
      | NAME "=" expr ";"                               -> definition

OROP: "||"
ANDOP: "&&"
CMPOP: /<=|>=|==|!=|<|>/
PLUS: "+"
MINUS: "-"
MULOP: /[*\/%]/
BANG: "!"

FLOAT: /\d+\.\d+([eE][+-]?\d+)?/ | /\d+[eE][+-]?\d+/
INT: /\d+/
NAME: /[A-Za-z_][A-Za-z0-9_]*/
COMMENT: /\/\/[^\n]*/

%import common.WS
%ignore WS
%ignore COMMENT
"""

_parser = Lark(GRAMMAR, parser="lalr", propagate_positions=True, maybe_placeholders=True)


# ------------------------------------------------------------------ parsing

def parse_program(source: str | bytes) -> SyntaxNode:
    """Parse surface syntax into a SyntaxNode tree (may contain sugar ops)"""
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as e:
            raise LucidSyntaxError(1, 1, f"source is not valid UTF-8 ({e.reason})") from e
    try:
        tree = _parser.parse(source)
        return _build(tree)
    except UnexpectedInput as e:
        raise _syntax_error(e) from None
    except RecursionError:
        raise LucidSyntaxError(1, 1, "program nests too deeply") from None


def _syntax_error(error: UnexpectedInput) -> LucidSyntaxError:
    line = max(getattr(error, "line", 1) or 1, 1)
    column = max(getattr(error, "column", 1) or 1, 1)
    if isinstance(error, UnexpectedEOF):
        return LucidSyntaxError(line, column, "unexpected end of input")
    if isinstance(error, UnexpectedToken):
        if error.token.type == "$END":
            return LucidSyntaxError(line, column, "unexpected end of input")
        expected = ", ".join(sorted(error.expected)[:6])
        return LucidSyntaxError(line, column, f"unexpected '{error.token}' (expected {expected})")
    if isinstance(error, UnexpectedCharacters):
        return LucidSyntaxError(line, column, f"unexpected character {error.char!r}")
    return LucidSyntaxError(line, column, str(error).splitlines()[0])


def _position(tree: Tree | Token) -> tuple[int, int]:
    if isinstance(tree, Token):
        return tree.line or 0, tree.column or 0
    meta = tree.meta
    return getattr(meta, "line", 0), getattr(meta, "column", 0)


def _build(tree: Tree | Token) -> SyntaxNode:
    line, column = _position(tree)

    def node(op, children=(), payload=None) -> SyntaxNode:
        return SyntaxNode(op, tuple(children), payload, line, column)

    kind = tree.data
    kids = tree.children
    if kind == "int_lit":
        value = int(kids[0])
        if value > INT64_MAX:
            raise LucidSyntaxError(line, column, f"integer literal {value} out of 64-bit range")
        return node("IntLit", payload=value)
    if kind == "float_lit":
        value = float(kids[0])
        if not math.isfinite(value):
            raise LucidSyntaxError(*_position(kids[0]), f"float literal {kids[0]} is out of range")
        return node("FloatLit", payload=value)
    if kind == "true_lit":
        return node("BoolLit", payload=True)
    if kind == "false_lit":
        return node("BoolLit", payload=False)
    if kind == "ident":
        return node("Ident", payload=str(kids[0]))
    if kind == "hash_dim":
        return node("HashDim", payload=str(kids[0]))
    if kind == "proc_call":
        args = kids[1].children if kids[1] is not None else []
        return node("ProcCall", [_build(a) for a in args], str(kids[0]))
    if kind == "binop":
        left, operator, right = kids
        return node("BinOp", [_build(left), _build(right)], str(operator))
    if kind == "unop":
        operator, operand = kids
        return node("UnOp", [_build(operand)], str(operator))
    if kind == "if_":
        return node("If", [_build(k) for k in kids])
    if kind == "at":
        expr, dim, tag = kids
        dim_line, dim_col = _position(dim)
        ref = SyntaxNode("Ident", (), str(dim), dim_line, dim_col)
        return node("At", [_build(expr), ref, _build(tag)])
    if kind in ("first", "next"):
        dim, operand = kids
        return node(kind.capitalize(), [_build(operand)], str(dim))
    if kind == "fby":
        left, dim, right = kids
        return node("Fby", [_build(left), _build(right)], str(dim))
    if kind == "where":
        body, *clauses = kids
        dimensions: list[str] = []
        names: list[str] = []
        definitions: list[SyntaxNode] = []
        for clause in clauses:
            if clause.data == "dimdecl":
                dimensions.extend(str(t) for t in clause.children)
            else:
                name, expr = clause.children
                names.append(str(name))
                definitions.append(_build(expr))
        payload = WherePayload(tuple(dimensions), tuple(names))
        return node("Where", [_build(body), *definitions], payload)
    raise LucidSyntaxError(line, column, f"unsupported construct {kind}")


# ----------------------------------------------------------- pretty printer

def pretty_print(tree: SyntaxNode) -> str:
    """Render a tree back to surface syntax (fully parenthesized)"""
    op, kids, payload = tree.op, tree.children, tree.payload
    if op == "IntLit":
        return str(payload)
    if op == "FloatLit":
        return repr(payload)
    if op == "BoolLit":
        return "true" if payload else "false"
    if op == "Ident":
        return payload
    if op == "HashDim":
        return f"#{payload}"
    if op == "ProcCall":
        return f"{payload}({', '.join(pretty_print(k) for k in kids)})"
    if op == "BinOp":
        return f"({pretty_print(kids[0])} {payload} {pretty_print(kids[1])})"
    if op == "UnOp":
        return f"({payload}{pretty_print(kids[0])})"
    if op == "If":
        c, a, b = (pretty_print(k) for k in kids)
        return f"(if {c} then {a} else {b})"
    if op == "At":
        return f"({pretty_print(kids[0])} @ {kids[1].payload}:({pretty_print(kids[2])}))"
    if op in ("First", "Next"):
        return f"({op.lower()}.{payload} {pretty_print(kids[0])})"
    if op == "Fby":
        return f"({pretty_print(kids[0])} fby.{payload} {pretty_print(kids[1])})"
    if op == "Where":
        parts = [f"({pretty_print(kids[0])} where"]
        if payload.dimensions:
            parts.append(f"dimension {', '.join(payload.dimensions)};")
        for name, expr in zip(payload.definitions, kids[1:]):
            parts.append(f"{name} = {pretty_print(expr)};")
        parts.append("end)")
        return " ".join(parts)
    raise ValueError(f"cannot print node {op}")


# ---------------------------------------------------------------- desugaring

def desugar_to_core(tree: SyntaxNode) -> SyntaxNode:
    """
    Rewrite sugar to the generic core, bottom-up:
        first.d X  => X @ d:0
        next.d X   => X @ d:(#d + 1)
        X fby.d Y  => if #d <= 0 then X else (Y @ d:(#d - 1))
    """
    return _desugar(tree, ())


def _desugar(tree: SyntaxNode, scopes: tuple[frozenset, ...]) -> SyntaxNode:
    if tree.op == "Where":
        scopes = scopes + (frozenset(tree.payload.dimensions),)
    children = tuple(_desugar(k, scopes) for k in tree.children)
    if tree.op not in SUGAR_OPS:
        return SyntaxNode(tree.op, children, tree.payload, tree.line, tree.column)

    dim = tree.payload
    if not any(dim in scope for scope in scopes):
        raise UnknownDimension(dim)

    def core(op, kids=(), payload=None) -> SyntaxNode:
        return SyntaxNode(op, tuple(kids), payload, tree.line, tree.column)

    ref = core("Ident", payload=dim)
    tag = core("HashDim", payload=dim)
    if tree.op == "First":
        return core("At", [children[0], ref, core("IntLit", payload=0)])
    if tree.op == "Next":
        return core("At", [children[0], ref, core("BinOp", [tag, core("IntLit", payload=1)], "+")])
    first, rest = children
    condition = core("BinOp", [tag, core("IntLit", payload=0)], "<=")
    previous = core("At", [rest, ref, core("BinOp", [tag, core("IntLit", payload=1)], "-")])
    return core("If", [condition, first, previous])


# ------------------------------------------------------------------ analysis

def analyze(tree: SyntaxNode, procedures: Iterable[str] | None = None) -> SymbolReport:
    """
    Resolve every identifier to intensional / procedural / dimension.

    Identifier names are unique program-wide; redeclaring a dimension in a
    nested Where is DimensionShadowing.
    """
    known_procedures = set(procedures) if procedures is not None else None
    kinds: dict[str, str] = {}
    definitions: list[str] = []
    dimensions: list[str] = []
    used_procedures: set[str] = set()

    def claim(name: str, kind: str) -> None:
        existing = kinds.get(name)
        if existing is None:
            kinds[name] = kind
        elif existing != kind or kind == "intensional":
            raise DuplicateDefinition(name)

    def visit(node: SyntaxNode, dims: tuple[frozenset, ...], defs: tuple[frozenset, ...]) -> None:
        op = node.op
        if op in SUGAR_OPS:
            raise ValueError("analyze expects a desugared tree")
        if op == "Where":
            payload = node.payload
            local_dims = set()
            for dim in payload.dimensions:
                if any(dim in scope for scope in dims) or dim in local_dims:
                    raise DimensionShadowing(dim)
                local_dims.add(dim)
                if kinds.get(dim) not in (None, "dimension"):
                    raise DuplicateDefinition(dim)
                kinds[dim] = "dimension"
                if dim not in dimensions:
                    dimensions.append(dim)
            local_defs = set()
            for name in payload.definitions:
                if name in local_defs:
                    raise DuplicateDefinition(name)
                local_defs.add(name)
                claim(name, "intensional")
                definitions.append(name)
            inner_dims = dims + (frozenset(local_dims),)
            inner_defs = defs + (frozenset(local_defs),)
            for child in node.children:
                visit(child, inner_dims, inner_defs)
            return
        if op == "Ident":
            name = node.payload
            if any(name in scope for scope in defs):
                return
            if any(name in scope for scope in dims):
                return
            raise UndefinedIdentifier(name)
        if op == "HashDim":
            if not any(node.payload in scope for scope in dims):
                raise UnknownDimension(node.payload)
            return
        if op == "At":
            expr, ref, tag = node.children
            if ref.op != "Ident" or not any(ref.payload in scope for scope in dims):
                raise UnknownDimension(ref.payload)
            visit(expr, dims, defs)
            visit(tag, dims, defs)
            return
        if op == "ProcCall":
            name = node.payload
            if known_procedures is not None and name not in known_procedures:
                raise UndefinedIdentifier(name)
            claim(name, "procedural")
            used_procedures.add(name)
        for child in node.children:
            visit(child, dims, defs)

    visit(tree, (), ())
    return SymbolReport(
        kinds=dict(kinds),
        definitions=tuple(definitions),
        dimensions=tuple(dimensions),
        procedures=tuple(sorted(used_procedures)),
    )


# ---------------------------------------------------------------- generation

def canonical_json(document: dict) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def compute_geer_id(document: dict) -> str:
    body = {k: v for k, v in document.items() if k != "geer_id"}
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()[:32]


def geer_document(geer: Geer) -> dict:
    return {
        "version": geer.version,
        "geer_id": geer.geer_id,
        "dimensions": list(geer.dimensions),
        "dictionary": [
            {"name": e.name, "kind": e.kind, "definition": e.definition}
            for e in geer.dictionary
        ],
        "nodes": [
            {"id": n.id, "op": n.op, "children": list(n.children), "payload": n.payload}
            for n in geer.nodes
        ],
        "entry": geer.entry,
    }


def generate_geer(tree: SyntaxNode, symbols: SymbolReport) -> Geer:
    """Assign preorder node ids and assemble the Geer"""
    nodes: list[dict] = []
    definition_ids: dict[str, int] = {}

    def emit(node: SyntaxNode) -> int:
        node_id = len(nodes)
        record = {"id": node_id, "op": node.op, "children": [], "payload": None}
        nodes.append(record)
        if node.op == "Where":
            record["payload"] = {
                "dimensions": list(node.payload.dimensions),
                "definitions": list(node.payload.definitions),
            }
        else:
            record["payload"] = node.payload
        child_ids = []
        for index, child in enumerate(node.children):
            child_id = emit(child)
            child_ids.append(child_id)
            if node.op == "Where" and index > 0:
                definition_ids[node.payload.definitions[index - 1]] = child_id
        record["children"] = child_ids
        return node_id

    entry = emit(tree)
    dictionary = []
    for name in sorted(symbols.kinds):
        kind = symbols.kinds[name]
        dictionary.append({
            "name": name,
            "kind": kind,
            "definition": definition_ids.get(name) if kind == "intensional" else None,
        })
    document = {
        "version": GEER_VERSION,
        "dimensions": list(symbols.dimensions),
        "dictionary": dictionary,
        "nodes": nodes,
        "entry": entry,
    }
    document["geer_id"] = compute_geer_id(document)
    return Geer(
        geer_id=document["geer_id"],
        version=GEER_VERSION,
        dimensions=tuple(symbols.dimensions),
        dictionary=tuple(IdentifierEntry(**e) for e in dictionary),
        nodes=tuple(AstNode(**n) for n in nodes),
        entry=entry,
    )


def compile_source(source: str | bytes, procedures: Iterable[str] | None = None) -> Geer:
    """Full front-end chain: parse, desugar, analyze, generate"""
    surface = parse_program(source)
    core = desugar_to_core(surface)
    symbols = analyze(core, procedures)
    geer = generate_geer(core, symbols)
    logger.debug(f"Compiled program into geer {geer.geer_id} ({len(geer.nodes)} nodes)")
    return geer


def check_arity(op: str, count: int) -> bool:
    expected = ARITY.get(op)
    return expected is None or expected == count


# ------------------------------------------------------------- demand specs

DEMAND_GRAMMAR = r"""
start: NAME context?
context: "@" "{" "}"
       | "@" "{" binding ("," binding)* "}"
binding: NAME ":" SIGNED_INT

NAME: /[A-Za-z_][A-Za-z0-9_]*/

%import common.SIGNED_INT
%import common.WS
%ignore WS
"""

_demand_parser = Lark(DEMAND_GRAMMAR, parser="lalr")

# names that demand the program's entry expression
ENTRY_NAMES = ("main", "result")


def parse_demand_spec(text: str) -> tuple[str, Context]:
    """`fib @ {t:10}` -> ("fib", {t:10}); the context part is optional"""
    try:
        tree = _demand_parser.parse(text)
    except UnexpectedInput as e:
        raise _syntax_error(e) from None
    name = str(tree.children[0])
    tags: dict[str, int] = {}
    for binding in tree.iter_subtrees_topdown():
        if binding.data != "binding":
            continue
        dim, tag = binding.children
        if str(dim) in tags:
            raise LucidSyntaxError(dim.line or 1, dim.column or 1, f"dimension '{dim}' bound twice")
        tags[str(dim)] = int(tag)
    return name, Context.of(tags)


def resolve_demand_entry(geer: Geer, name: str) -> int:
    """Node id a demand for `name` starts at: a definition, or the entry expression"""
    definitions = geer.definitions()
    if name in definitions:
        return definitions[name]
    if name in ENTRY_NAMES:
        return geer.entry
    raise UndefinedIdentifier(name)
