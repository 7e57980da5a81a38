import json
from dataclasses import replace

import pytest
from fastapi.testclient import TestClient

import cli.commands as commands
from api.app_eductive import create_app
from api.client import InstanceClient
from cli.commands import EXIT_DOMAIN, EXIT_IO, EXIT_OK, main
from config.settings import RuntimeSettings
from services.program_corpus import COUNTER, FIB


@pytest.fixture
def counter_geer(tmp_path, capsys):
    source = tmp_path / "counter.lucid"
    source.write_text(COUNTER, encoding="utf-8")
    assert main(["compile", str(source)]) == EXIT_OK
    path = capsys.readouterr().out.strip()
    assert path == str(tmp_path / "counter.geer.json")
    return path


@pytest.fixture
def instance_client(monkeypatch, tmp_path):
    settings = replace(RuntimeSettings.for_simulation(9), forensic_db_url=f"sqlite:///{tmp_path / 'f.db'}")
    with TestClient(create_app(settings=settings)) as test_client:
        # each command closes its client; share only the in-process transport
        monkeypatch.setattr(commands, "connect",
                            lambda url: InstanceClient("http://testserver", transport=test_client._transport))
        yield test_client


def test_compile_writes_a_geer_resource(counter_geer):
    with open(counter_geer, encoding="utf-8") as f:
        document = json.load(f)
    assert document["dimensions"] == ["t"]


def test_compile_error_exits_with_one(tmp_path, capsys):
    source = tmp_path / "bad.lucid"
    source.write_text("X where X = ; end", encoding="utf-8")
    assert main(["compile", str(source)]) == EXIT_DOMAIN
    assert capsys.readouterr().err.startswith("error: ")


def test_missing_file_exits_with_two(tmp_path, capsys):
    assert main(["compile", str(tmp_path / "absent.lucid")]) == EXIT_IO
    assert "IOError" in capsys.readouterr().err


def test_local_eval(counter_geer, capsys):
    assert main(["eval", counter_geer, "main @ {t:6}", "--local"]) == EXIT_OK
    assert capsys.readouterr().out == "13\n"


def test_eval_with_a_definition_name(tmp_path, capsys):
    source = tmp_path / "fib.lucid"
    source.write_text(FIB, encoding="utf-8")
    main(["compile", str(source)])
    geer = capsys.readouterr().out.strip()
    assert main(["eval", geer, "fib @ {t:10}"]) == EXIT_OK
    assert capsys.readouterr().out == "55\n"


def test_bad_demand_is_a_domain_error(counter_geer, capsys):
    assert main(["eval", counter_geer, "main @ {t:"]) == EXIT_DOMAIN
    capsys.readouterr()
    assert main(["eval", counter_geer, "nope"]) == EXIT_DOMAIN


def test_usage_error_exits_with_one(capsys):
    assert main(["bogus"]) == EXIT_DOMAIN


def test_sim_writes_the_forensic_export(tmp_path, capsys):
    scenario = tmp_path / "scenario.json"
    scenario.write_text('{"ticks": 30, "steps": [{"at": 0, "action": "evaluate", "program": "counter", "tag": 3}]}',
                        encoding="utf-8")
    first, second = tmp_path / "a.log", tmp_path / "b.log"
    for out in (first, second):
        assert main(["sim", "--scenario", str(scenario), "--seed", "4", "--out", str(out)]) == EXIT_OK
    capsys.readouterr()
    assert first.read_bytes() == second.read_bytes()
    assert b"evaluation_result" in first.read_bytes()

    assert main(["graph", str(first)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("digraph demand_lifecycle")


def test_graph_of_a_geer(counter_geer, tmp_path, capsys):
    dot = tmp_path / "counter.dot"
    assert main(["graph", counter_geer, "--dot", str(dot)]) == EXIT_OK
    assert dot.read_text(encoding="utf-8").startswith("digraph geer")


def test_graph_of_an_unreadable_log(tmp_path, capsys):
    junk = tmp_path / "junk.log"
    junk.write_text("this is not a forensic log\n", encoding="utf-8")
    assert main(["graph", str(junk)]) == EXIT_DOMAIN
    assert capsys.readouterr().err.startswith("error: FormatError")


def test_corpus_then_local_pipeline(tmp_path, capsys):
    root = tmp_path / "corpus"
    assert main(["corpus", "generate", str(root), "--per-subject", "2"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("8 samples")
    report = tmp_path / "report.txt"
    training = tmp_path / "training.img"
    args = ["pipeline", str(root), "--local", "--report", str(report), "--training-set", str(training)]
    assert main(args + ["--train"]) == EXIT_OK
    assert training.exists()
    assert main(args + ["--classify"]) == EXIT_OK
    assert report.read_text(encoding="utf-8").splitlines()[-1].startswith("accuracy=1.0")


def test_classify_alone_needs_a_training_set(tmp_path, capsys):
    root = tmp_path / "corpus"
    main(["corpus", "generate", str(root), "--per-subject", "1"])
    assert main(["pipeline", str(root), "--local", "--classify"]) == EXIT_DOMAIN


def test_simulated_pipeline_matches_local(tmp_path, capsys):
    root = tmp_path / "corpus"
    main(["corpus", "generate", str(root), "--per-subject", "1"])
    local, simulated = tmp_path / "local.txt", tmp_path / "sim.txt"
    assert main(["pipeline", str(root), "--local", "--report", str(local)]) == EXIT_OK
    assert main(["pipeline", str(root), "--seed", "2", "--report", str(simulated)]) == EXIT_OK
    assert local.read_text(encoding="utf-8") == simulated.read_text(encoding="utf-8")


def test_instance_mode_commands(instance_client, counter_geer, tmp_path, capsys):
    assert main(["eval", counter_geer, "main @ {t:6}", "--instance"]) == EXIT_OK
    assert capsys.readouterr().out == "13\n"

    assert main(["tier", "allocate", "DWT", "--node", "beta"]) == EXIT_OK
    assert capsys.readouterr().out == "T6\n"
    assert main(["tier", "list"]) == EXIT_OK
    assert "T6 DWT beta" in capsys.readouterr().out
    assert main(["tier", "deallocate", "T99"]) == EXIT_DOMAIN
    assert "UnknownTier" in capsys.readouterr().err

    assert main(["store", "dump"]) == EXIT_OK
    assert " computed" in capsys.readouterr().out

    assert main(["instance", "status"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["simulated"] is True
