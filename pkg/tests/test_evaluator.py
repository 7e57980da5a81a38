import pytest

from models.demands import Context
from services.compiler_service import compile_source, desugar_to_core, parse_program
from services.evaluator import Evaluation, LocalServices, Waiting, eval_eductive
from services.operators import apply_binary, apply_unary
from services.procedures import ProcedureTable
from services.program_corpus import CORPUS, FIB, NATURALS
from services.reference_evaluator import NaiveInterpreter
from services.warehouse import Warehouse
from utils.canonical import INT64_MAX, INT64_MIN
from utils.errors import (
    DepthExceeded,
    DivideByZero,
    EvaluationTypeError,
    ProceduralFailure,
    UnknownDimension,
    UnknownProcedure,
)


def _run(source, **tags):
    geer = compile_source(source)
    return eval_eductive(geer, None, Context.of(tags), LocalServices(warehouse=Warehouse()))


def test_literal():
    assert _run("42") == 42


def test_naturals_at_five():
    assert _run(NATURALS, t=5) == 5


def test_fib_at_ten():
    assert _run(FIB, t=10) == 55


def test_unbound_dimension_reads_zero():
    assert _run(NATURALS) == 0


def test_bare_dimension_reads_its_tag():
    assert _run("X where dimension t; X = t * 2; end", t=4) == 8


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_eductive_matches_naive_oracle(name, corpus_geers):
    tree = parse_program(CORPUS[name])
    oracle = NaiveInterpreter(tree)
    geer = corpus_geers[name]
    for tag in range(0, 21):
        ctx = Context.of(t=tag)
        expected = oracle.evaluate(ctx)
        assert eval_eductive(geer, None, ctx, LocalServices(warehouse=Warehouse())) == expected


def test_naive_interpreter_fib_call_count():
    oracle = NaiveInterpreter(parse_program(FIB))
    assert oracle.evaluate(Context.of(t=20)) == 6765
    assert oracle.identifier_evaluations == 21_891


def test_warehouse_bounds_distinct_evaluations():
    geer = compile_source(FIB)
    evaluation = Evaluation(geer, geer.entry, Context.of(t=20), LocalServices(warehouse=Warehouse()))
    assert evaluation.run() == 6765
    assert evaluation.stats.intensional_evaluations <= 50


def test_memoization_never_changes_values(corpus_geers):
    for name, geer in corpus_geers.items():
        for tag in (0, 3, 9):
            ctx = Context.of(t=tag)
            with_memo = eval_eductive(geer, None, ctx, LocalServices(warehouse=Warehouse()))
            without = eval_eductive(geer, None, ctx, LocalServices(warehouse=Warehouse(enabled=False)))
            assert with_memo == without


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_desugar_soundness(name):
    surface = parse_program(CORPUS[name])
    core = desugar_to_core(surface)
    for tag in range(0, 11):
        ctx = Context.of(t=tag)
        assert NaiveInterpreter(surface).evaluate(ctx) == NaiveInterpreter(core).evaluate(ctx)


@pytest.mark.parametrize("sugar, expansion", [
    ("first.t (#t * 3)", "(#t * 3) @ t:0"),
    ("next.t (#t * 3)", "(#t * 3) @ t:(#t + 1)"),
    ("(#t + 10) fby.t (#t * 3)", "if #t <= 0 then (#t + 10) else ((#t * 3) @ t:(#t - 1))"),
])
def test_each_sugar_form_equals_its_expansion(sugar, expansion):
    wrap = "X where dimension t; X = {}; end"
    left = NaiveInterpreter(parse_program(wrap.format(sugar)))
    right = NaiveInterpreter(parse_program(wrap.format(expansion)))
    for tag in range(0, 11):
        ctx = Context.of(t=tag)
        assert left.evaluate(ctx) == right.evaluate(ctx)


def test_divide_by_zero():
    with pytest.raises(DivideByZero):
        _run("1 / 0")
    with pytest.raises(DivideByZero):
        _run("1.5 / 0")


def test_integer_division_truncates_and_remainder_follows_dividend():
    assert _run("-7 / 2") == -3
    assert _run("-7 % 2") == -1
    assert _run("7 % -2") == 1


def test_mixed_arithmetic_promotes_to_float():
    assert _run("1 + 2.5") == 3.5
    assert isinstance(_run("2 * 1.0"), float)


def test_integer_arithmetic_wraps():
    assert apply_binary("+", INT64_MAX, 1) == INT64_MIN
    assert apply_unary("-", INT64_MIN) == INT64_MIN


def test_boolean_arithmetic_is_type_error():
    with pytest.raises(EvaluationTypeError):
        _run("true + 1")
    with pytest.raises(EvaluationTypeError):
        _run("if 1 then 2 else 3")


def test_depth_limit():
    geer = compile_source("X where dimension t; X = X @ t:(#t + 1); end")
    with pytest.raises(DepthExceeded) as info:
        eval_eductive(geer, None, Context(), LocalServices(warehouse=Warehouse()), depth_limit=500)
    assert info.value.limit == 500


def test_context_with_undeclared_dimension():
    geer = compile_source(NATURALS)
    with pytest.raises(UnknownDimension):
        eval_eductive(geer, None, Context.of(u=1), LocalServices())


def test_procedure_call_through_local_table():
    assert _run("add(2, 3) * 2") == 10


def test_unknown_procedure():
    with pytest.raises(UnknownProcedure):
        _run("frobnicate(1)")


def test_procedural_failure():
    with pytest.raises(ProceduralFailure) as info:
        _run("div(1, 0)")
    assert info.value.name == "div"


class _DeferredServices:
    """Answers every procedure call later, like a generator tier awaiting the store"""

    def __init__(self):
        self.warehouse = Warehouse()
        self.table = ProcedureTable()
        self.requests = []

    def call_procedure(self, request):
        self.requests.append(request)
        return Waiting(len(self.requests) - 1)

    def wait(self, handle):
        request = self.requests[handle]
        return self.table.invoke(request.name, request.args)


def test_evaluation_suspends_and_resumes():
    services = _DeferredServices()
    geer = compile_source(CORPUS["counter"])
    evaluation = Evaluation(geer, geer.entry, Context.of(t=3), services)
    suspensions = 0
    while not evaluation.advance():
        suspensions += 1
        evaluation.resume(services.wait(evaluation.waiting_on))
    assert evaluation.result == 7
    assert suspensions == 3
    assert evaluation.stats.procedural_demands == 3
