import json
import random

import pytest

from models.geer import SUGAR_OPS, SyntaxNode
from services.compiler_service import (
    analyze,
    compile_source,
    desugar_to_core,
    generate_geer,
    parse_program,
    pretty_print,
)
from services.geer_codec import decode_geer, encode_geer
from services.program_corpus import CORPUS, NATURALS
from utils.errors import (
    DimensionShadowing,
    DuplicateDefinition,
    GeerFormatError,
    GeerVersionError,
    LucidSyntaxError,
    UndefinedIdentifier,
    UnknownDimension,
)


def _walk(node: SyntaxNode):
    yield node
    for child in node.children:
        yield from _walk(child)


# ------------------------------------------------------------------ parsing

def test_parse_literal():
    tree = parse_program("42")
    assert tree == SyntaxNode("IntLit", (), 42)


def test_parse_where_block_structure():
    tree = parse_program("N where dimension t; N = 0 fby.t (N + 1); end")
    assert tree.op == "Where"
    assert tree.payload.dimensions == ("t",)
    assert tree.payload.definitions == ("N",)
    assert tree.children[0] == SyntaxNode("Ident", (), "N")
    assert tree.children[1].op == "Fby"


def test_parse_round_trips_through_pretty_printer():
    for source in CORPUS.values():
        tree = parse_program(source)
        assert parse_program(pretty_print(tree)) == tree


def test_unterminated_where_reports_end_of_input():
    with pytest.raises(LucidSyntaxError) as info:
        parse_program("N where")
    assert "end of input" in info.value.detail
    assert info.value.line == 1


def test_syntax_error_carries_line_and_column():
    with pytest.raises(LucidSyntaxError) as info:
        parse_program("N where\n  dimension t;\n  N = 1 +* 2;\nend")
    assert info.value.line == 3
    assert info.value.col >= 1


def test_overflowing_float_literal_is_a_syntax_error():
    with pytest.raises(LucidSyntaxError) as info:
        parse_program("N where\n  dimension t;\n  N = 1.5e999;\nend")
    assert (info.value.line, info.value.col) == (3, 7)
    assert "out of range" in info.value.detail


@pytest.mark.parametrize("source", ["", "(", "if then else", "@@@", "N where N = ; end", "\x00", "1 < 2 < 3"])
def test_parser_is_total_on_malformed_input(source):
    with pytest.raises(LucidSyntaxError):
        parse_program(source)


def test_parser_rejects_invalid_utf8():
    with pytest.raises(LucidSyntaxError):
        parse_program(b"\xff\xfe N")


def test_random_garbage_never_crashes():
    rng = random.Random(11)
    alphabet = "Nt where dimension fby.t first next @ # ( ) + - * / ; = end 0 1 2.5 if then else"
    for _ in range(300):
        source = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
        try:
            parse_program(source)
        except LucidSyntaxError:
            pass


def test_comments_and_whitespace_do_not_change_the_tree():
    compact = parse_program("N where dimension t; N = 0 fby.t (N+1); end")
    spaced = parse_program("N   where // the counter\n dimension t ;\n N = 0\n fby.t ( N + 1 ) ;\nend\n")
    assert compact == spaced


def test_precedence_of_at_and_arithmetic():
    tree = parse_program("X @ t:#t + 1")
    assert tree.op == "BinOp" and tree.payload == "+"
    assert tree.children[0].op == "At"


# ---------------------------------------------------------------- desugaring

def test_desugar_first():
    tree = desugar_to_core(parse_program("X where dimension t; X = first.t #t; end"))
    body = tree.children[1]
    assert body.op == "At"
    assert body.children[1] == SyntaxNode("Ident", (), "t")
    assert body.children[2] == SyntaxNode("IntLit", (), 0)


def test_desugar_next():
    tree = desugar_to_core(parse_program("X where dimension t; X = next.t #t; end"))
    tag = tree.children[1].children[2]
    assert tag == SyntaxNode("BinOp", (SyntaxNode("HashDim", (), "t"), SyntaxNode("IntLit", (), 1)), "+")


def test_desugar_fby_expands_to_if():
    tree = desugar_to_core(parse_program(NATURALS))
    definition = tree.children[1]
    assert definition.op == "If"
    assert definition.children[0].payload == "<="
    assert definition.children[2].op == "At"


def test_desugar_is_identity_on_core_nodes():
    assert desugar_to_core(SyntaxNode("IntLit", (), 7)) == SyntaxNode("IntLit", (), 7)


def test_desugar_leaves_no_sugar():
    for source in CORPUS.values():
        core = desugar_to_core(parse_program(source))
        assert not any(n.op in SUGAR_OPS for n in _walk(core))


def test_desugar_unknown_dimension():
    with pytest.raises(UnknownDimension):
        desugar_to_core(parse_program("X where X = first.u 1; end"))


# ------------------------------------------------------------------ analysis

def test_analyze_naturals():
    report = analyze(desugar_to_core(parse_program(NATURALS)))
    assert report.kind_of("N") == "intensional"
    assert report.kind_of("t") == "dimension"


def test_analyze_undefined_identifier():
    with pytest.raises(UndefinedIdentifier) as info:
        analyze(desugar_to_core(parse_program("X + 1")))
    assert info.value.name == "X"


def test_analyze_duplicate_definition():
    with pytest.raises(DuplicateDefinition) as info:
        analyze(desugar_to_core(parse_program("N where N = 1; N = 2; end")))
    assert info.value.name == "N"


def test_analyze_nested_dimension_shadowing():
    source = "A where dimension t; A = B where dimension t; B = #t; end; end"
    with pytest.raises(DimensionShadowing):
        analyze(desugar_to_core(parse_program(source)))


def test_sibling_blocks_may_reuse_dimension():
    source = "(A where dimension t; A = #t; end) + (B where dimension t; B = #t; end)"
    report = analyze(desugar_to_core(parse_program(source)))
    assert report.dimensions == ("t",)


def test_analyze_procedures_must_be_known_when_table_given():
    tree = desugar_to_core(parse_program("frob(1)"))
    assert analyze(tree).kind_of("frob") == "procedural"
    with pytest.raises(UndefinedIdentifier):
        analyze(tree, procedures={"add"})


def test_hash_of_undeclared_dimension():
    with pytest.raises(UnknownDimension):
        analyze(desugar_to_core(parse_program("#t + 1")))


# ---------------------------------------------------------------- generation

def test_generate_dictionary_for_naturals():
    core = desugar_to_core(parse_program(NATURALS))
    geer = generate_geer(core, analyze(core))
    assert [(e.name, e.kind) for e in geer.dictionary] == [("N", "intensional"), ("t", "dimension")]
    assert geer.dimensions == ("t",)
    assert len(geer.geer_id) == 32


def test_node_ids_are_preorder_and_dense():
    geer = compile_source(NATURALS)
    assert [n.id for n in geer.nodes] == list(range(len(geer.nodes)))
    assert geer.entry == 0
    for node in geer.nodes:
        assert all(child > node.id for child in node.children)


def test_geer_id_is_deterministic_and_whitespace_insensitive():
    first = compile_source(NATURALS)
    again = compile_source(NATURALS)
    squeezed = compile_source("N where dimension t; N = 0 fby.t (N+1); end")
    assert first.geer_id == again.geer_id == squeezed.geer_id


def test_different_programs_have_different_ids(corpus_geers):
    ids = {g.geer_id for g in corpus_geers.values()}
    assert len(ids) == len(corpus_geers)


# --------------------------------------------------------------------- codec

def test_geer_round_trip(corpus_geers):
    for geer in corpus_geers.values():
        assert decode_geer(encode_geer(geer)) == geer


def test_geer_file_has_expected_keys(corpus_geers):
    document = json.loads(encode_geer(corpus_geers["naturals"]))
    assert set(document) == {"version", "geer_id", "dimensions", "dictionary", "nodes", "entry"}


def test_truncated_geer_is_format_error(corpus_geers):
    data = encode_geer(corpus_geers["fib"])
    with pytest.raises(GeerFormatError):
        decode_geer(data[: len(data) // 2])


def test_unknown_version_is_version_error(corpus_geers):
    document = json.loads(encode_geer(corpus_geers["fib"]))
    document["version"] = 999
    with pytest.raises(GeerVersionError):
        decode_geer(json.dumps(document))


def test_tampered_geer_is_rejected(corpus_geers):
    document = json.loads(encode_geer(corpus_geers["naturals"]))
    for node in document["nodes"]:
        if node["op"] == "IntLit" and node["payload"] == 1:
            node["payload"] = 2
    with pytest.raises(GeerFormatError):
        decode_geer(json.dumps(document))


def test_decode_validates_structure(corpus_geers):
    document = json.loads(encode_geer(corpus_geers["naturals"]))
    document["nodes"][0]["children"] = [len(document["nodes"]) + 5]
    with pytest.raises(GeerFormatError):
        decode_geer(json.dumps(document))


def test_decode_rejects_unknown_identifier(corpus_geers):
    document = json.loads(encode_geer(corpus_geers["naturals"]))
    document["dictionary"] = [e for e in document["dictionary"] if e["name"] != "N"]
    with pytest.raises(GeerFormatError):
        decode_geer(json.dumps(document))
