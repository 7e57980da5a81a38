"""
Operator command line.

Exit codes are stable: 0 success, 1 domain error (compile, evaluation,
scenario, pipeline, invalid input), 2 I/O error. Errors are printed to
stderr as `error: <Kind>: <message>`.
"""

import argparse
import json
import logging
import os
import sys
from typing import Callable

from api.client import InstanceClient
from config.settings import RuntimeSettings
from config.topology import NodeSpec, load_pipeline_config, load_scenario, load_topology
from models.demands import Context
from models.tiers import TierKind
from services.compiler_service import compile_source, geer_document, parse_demand_spec, resolve_demand_entry
from services.corpus_service import HELD_OUT_NOISE, generate_corpus, list_corpus
from services.evaluator import LocalServices, eval_eductive
from services.forensic_log import EXPORT_FORMATS, read_lines, render_value
from services.geer_codec import GEER_SUFFIX, decode_geer, read_geer_file, write_geer_file
from services.graph_service import geer_dot, lifecycle_dot
from services.pipeline_service import (
    load_training_set,
    run_pipeline_distributed,
    run_pipeline_local,
    save_training_set,
)
from services.runtime import boot_instance
from services.simulation import run_simulation
from services.warehouse import Warehouse
from utils.errors import EductiveError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2

DEFAULT_REPORT = "pipeline_report.txt"
DEFAULT_FORENSIC_EXPORT = "forensics.log"


def connect(url: str | None) -> InstanceClient:
    """Client for instance-mode commands"""
    return InstanceClient(url or RuntimeSettings.from_env().instance_url)


def _fail(kind: str, message: str, code: int = EXIT_DOMAIN) -> int:
    print(f"error: {kind}: {message}", file=sys.stderr)
    return code


def _write_text(path: str, text: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


# ------------------------------------------------------------------ compile

def cmd_compile(args) -> int:
    """cliCompile"""
    with open(args.source, "r", encoding="utf-8") as f:
        source = f.read()
    geer = compile_source(source)
    output = args.output or os.path.splitext(args.source)[0] + GEER_SUFFIX
    write_geer_file(geer, output)
    print(output)
    return EXIT_OK


# --------------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    """cliEval: the local and instance modes print the same rendering"""
    name, context = parse_demand_spec(args.demand)
    geer = read_geer_file(args.geer)
    entry = resolve_demand_entry(geer, name)
    if args.instance:
        with connect(args.url) as client:
            reply = client.evaluate(geer_document(geer), args.demand)
        print(reply["rendered"])
        return EXIT_OK
    value = eval_eductive(geer, entry, context, LocalServices(warehouse=Warehouse()))
    print(render_value(value))
    return EXIT_OK


# ---------------------------------------------------------------------- sim

def cmd_sim(args) -> int:
    """cliSim: boot, replay the scenario, write the forensic export"""
    topology = load_topology(args.topology)
    scenario = load_scenario(args.scenario)
    if args.ticks is not None:
        scenario = scenario.model_copy(update={"ticks": args.ticks})
    result = run_simulation(topology, scenario, args.seed)
    data = result.export(args.format)
    directory = os.path.dirname(args.out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(args.out, "wb") as f:
        f.write(data)
    print(args.out)
    return EXIT_OK


# ------------------------------------------------------- node / tier / store

def cmd_node(args) -> int:
    if args.node_command == "start":
        import uvicorn
        settings = RuntimeSettings.from_env()
        uvicorn.run("api.app_eductive:app", host=args.host or settings.host, port=args.port or settings.port,
                    log_level=settings.log_level.lower())
        return EXIT_OK
    with connect(args.url) as client:
        if args.node_command == "list":
            for node in client.nodes():
                print(json.dumps(node, sort_keys=True))
        elif args.node_command == "add":
            with open(args.spec, "r", encoding="utf-8") as f:
                spec = NodeSpec.model_validate(json.load(f))
            client.add_node(spec.model_dump(mode="json"))
            print(spec.node_id)
    return EXIT_OK


def cmd_tier(args) -> int:
    with connect(args.url) as client:
        if args.tier_command == "list":
            for tier in client.tiers():
                print(f"{tier['tier_id']} {tier['kind']} {tier['node_id']} {tier['status']}")
        elif args.tier_command == "allocate":
            TierKind.parse(args.kind)
            for tier_id in client.allocate(args.kind, args.count, args.node):
                print(tier_id)
        elif args.tier_command == "deallocate":
            client.deallocate(args.tier_id)
        elif args.tier_command == "kill":
            client.kill(args.tier_id)
        elif args.tier_command == "restart":
            client.restart(args.tier_id)
    return EXIT_OK


def cmd_store(args) -> int:
    with connect(args.url) as client:
        sys.stdout.write(client.store_dump())
    return EXIT_OK


def cmd_instance(args) -> int:
    with connect(args.url) as client:
        print(json.dumps(client.status(), indent=2, sort_keys=True))
    return EXIT_OK


# ----------------------------------------------------------------- pipeline

def cmd_pipeline(args) -> int:
    """cliPipeline: --local runs in this process, --instance on a live instance, otherwise on a simulated one"""
    cfg = load_pipeline_config(args.config)
    train = args.train or not args.classify
    classify = args.classify or not args.train

    if args.instance:
        with connect(args.url) as client:
            text = client.pipeline(corpus=os.path.abspath(args.corpus), configuration=cfg.model_dump(),
                                   train=train, classify=classify,
                                   training_set_path=os.path.abspath(args.training_set) if args.training_set else None,
                                   held_out=os.path.abspath(args.held_out) if args.held_out else None)
        _write_text(args.report, text)
        print(args.report)
        return EXIT_OK

    entries = list_corpus(args.corpus)
    training_set = None
    if not train:
        if not args.training_set:
            return _fail("ConfigurationError", "--classify alone needs --training-set")
        training_set = load_training_set(args.training_set)
    classify_entries = (list_corpus(args.held_out) if args.held_out else entries) if classify else []
    train_entries = entries if train else []

    if args.local:
        report = run_pipeline_local(train_entries, classify_entries, cfg, training_set)
    else:
        instance = boot_instance(RuntimeSettings.for_simulation(args.seed), load_topology(args.topology))
        try:
            report = run_pipeline_distributed(instance, train_entries, classify_entries, cfg, training_set)
        finally:
            instance.shutdown()
    if train and args.training_set:
        save_training_set(args.training_set, report.training_set)
    _write_text(args.report, report.render())
    print(args.report)
    return EXIT_OK


# -------------------------------------------------------------------- graph

def cmd_graph(args) -> int:
    """cliGraph: a Geer file gives the dataflow graph, a forensic log the demand lifecycles"""
    with open(args.input, "rb") as f:
        data = f.read()
    text = data.decode("utf-8", errors="replace").lstrip()
    if text.startswith("{"):
        dot = geer_dot(decode_geer(data))
    else:
        try:
            events = read_lines(text)
        except ValueError as e:
            return _fail("FormatError", str(e))
        dot = lifecycle_dot(events)
    if args.dot:
        _write_text(args.dot, dot)
    else:
        sys.stdout.write(dot)
    return EXIT_OK


# ------------------------------------------------------------------- corpus

def cmd_corpus(args) -> int:
    entries = generate_corpus(args.root, args.per_subject, args.noise, args.seed, args.prefix)
    print(f"{len(entries)} samples written under {args.root}")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eductive", description="Eductive runtime operator tool")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a program into a .geer.json resource")
    p.add_argument("source")
    p.add_argument("-o", "--output")
    p.set_defaults(handler=cmd_compile)

    p = sub.add_parser("eval", help="evaluate a demand such as 'main @ {t:5}'")
    p.add_argument("geer")
    p.add_argument("demand")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--local", action="store_true", help="sequential evaluator in this process (default)")
    mode.add_argument("--instance", action="store_true", help="program demand on a live instance")
    p.add_argument("--url")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sim", help="replay a scenario on a simulated instance")
    p.add_argument("--topology")
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ticks", type=int)
    p.add_argument("--out", default=DEFAULT_FORENSIC_EXPORT)
    p.add_argument("--format", choices=EXPORT_FORMATS, default="lines")
    p.set_defaults(handler=cmd_sim)

    p = sub.add_parser("node", help="serve or inspect instance nodes")
    node_sub = p.add_subparsers(dest="node_command", required=True)
    start = node_sub.add_parser("start", help="serve the instance control plane")
    start.add_argument("--host")
    start.add_argument("--port", type=int)
    node_sub.add_parser("list")
    add = node_sub.add_parser("add")
    add.add_argument("spec", help="JSON file with node_id, capacity and tiers")
    p.add_argument("--url")
    p.set_defaults(handler=cmd_node)

    p = sub.add_parser("tier", help="allocate, deallocate, kill or restart tiers")
    tier_sub = p.add_subparsers(dest="tier_command", required=True)
    tier_sub.add_parser("list")
    alloc = tier_sub.add_parser("allocate")
    alloc.add_argument("kind")
    alloc.add_argument("--count", type=int, default=1)
    alloc.add_argument("--node")
    for name in ("deallocate", "kill", "restart"):
        tier_sub.add_parser(name).add_argument("tier_id")
    p.add_argument("--url")
    p.set_defaults(handler=cmd_tier)

    p = sub.add_parser("store", help="inspect the demand store")
    store_sub = p.add_subparsers(dest="store_command", required=True)
    store_sub.add_parser("dump")
    p.add_argument("--url")
    p.set_defaults(handler=cmd_store)

    p = sub.add_parser("instance", help="instance status")
    instance_sub = p.add_subparsers(dest="instance_command", required=True)
    instance_sub.add_parser("status")
    p.add_argument("--url")
    p.set_defaults(handler=cmd_instance)

    p = sub.add_parser("pipeline", help="train and classify a corpus")
    p.add_argument("corpus")
    p.add_argument("--config")
    p.add_argument("--train", action="store_true")
    p.add_argument("--classify", action="store_true")
    p.add_argument("--held-out", dest="held_out")
    p.add_argument("--training-set", dest="training_set")
    p.add_argument("--report", default=DEFAULT_REPORT)
    p.add_argument("--topology")
    p.add_argument("--seed", type=int, default=0)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--local", action="store_true")
    mode.add_argument("--instance", action="store_true")
    p.add_argument("--url")
    p.set_defaults(handler=cmd_pipeline)

    p = sub.add_parser("graph", help="emit DOT for a Geer or a forensic log")
    p.add_argument("input")
    p.add_argument("--dot")
    p.set_defaults(handler=cmd_graph)

    p = sub.add_parser("corpus", help="synthetic corpus tools")
    corpus_sub = p.add_subparsers(dest="corpus_command", required=True)
    gen = corpus_sub.add_parser("generate")
    gen.add_argument("root")
    gen.add_argument("--per-subject", dest="per_subject", type=int, default=4)
    gen.add_argument("--noise", type=float, default=0.0, help=f"held-out copies use {HELD_OUT_NOISE}")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--prefix", default="sample")
    p.set_defaults(handler=cmd_corpus)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_DOMAIN
    handler: Callable = args.handler
    try:
        return handler(args)
    except EductiveError as e:
        return _fail(e.kind, str(e))
    except OSError as e:
        return _fail("IOError", str(e), EXIT_IO)
    except Exception as e:
        logger.exception(f"Command {args.command} failed unexpectedly")
        return _fail("InternalError", str(e))
