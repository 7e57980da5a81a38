"""
Control plane of a live instance (instance mode).

The app boots one EductiveInstance in its lifespan and serves operator
requests over HTTP; tiers talk to each other over the transport module,
not through this API.
"""

import json
import logging
import os
import traceback
from contextlib import asynccontextmanager
from typing import Any

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from config.database import dispose_engine, init_engine
from config.settings import RuntimeSettings
from config.topology import NodeSpec, Topology, load_pipeline_config, load_topology
from models.pipeline import Configuration
from models.tiers import TierKind
from services.compiler_service import compile_source, geer_document, parse_demand_spec, resolve_demand_entry
from services.corpus_service import list_corpus
from services.forensic_log import EXPORT_FORMATS, persist_forensic_log, render_value
from services.geer_codec import decode_geer
from services.pipeline_service import load_training_set, run_pipeline_distributed, save_training_set
from services.runtime import EductiveInstance
from utils.errors import (
    CapacityExceeded,
    CompileError,
    ConfigurationError,
    DuplicateNode,
    EductiveError,
    EvaluationError,
    GmtUnavailable,
    InstanceError,
    NoCapacity,
    NoDstAvailable,
    PipelineError,
    RecoveryError,
    StoreUnavailable,
    TransportError,
    UnknownTier,
)

logger = logging.getLogger(__name__)

_CONFLICTS = (DuplicateNode, CapacityExceeded, NoCapacity)
_UNAVAILABLE = (StoreUnavailable, TransportError, GmtUnavailable, NoDstAvailable, InstanceError)
_CLIENT_ERRORS = (CompileError, EvaluationError, PipelineError, ConfigurationError, RecoveryError)


def http_error(error: EductiveError) -> HTTPException:
    """Map a domain error to its HTTP status; the body names the error kind"""
    if isinstance(error, UnknownTier):
        status = 404
    elif isinstance(error, _CONFLICTS):
        status = 409
    elif isinstance(error, _UNAVAILABLE):
        status = 503
    elif isinstance(error, _CLIENT_ERRORS):
        status = 400
    else:
        status = 409
    return HTTPException(status_code=status, detail={"error": error.kind, "detail": str(error)})


def _unexpected(action: str, error: Exception) -> HTTPException:
    logger.error(f"Error during {action}: {error}")
    logger.error(f"Traceback: {traceback.format_exc()}")
    return HTTPException(status_code=500, detail={"error": "InternalError", "detail": f"{action} failed"})


class CompileRequest(BaseModel):
    source: str
    procedures: list[str] | None = None


class EvalRequest(BaseModel):
    geer: dict[str, Any]
    demand: str = "main"


class AllocateRequest(BaseModel):
    kind: str
    count: int = Field(default=1, ge=1)
    node_id: str | None = None


class LinkRequest(BaseModel):
    latency_micros: int | None = Field(default=None, ge=0)
    drop_probability: float | None = Field(default=None, ge=0.0, le=1.0)
    down: bool | None = None


class PipelineRequest(BaseModel):
    corpus: str
    configuration: dict[str, Any] | None = None
    config_path: str | None = None
    train: bool = True
    classify: bool = True
    training_set_path: str | None = None
    held_out: str | None = None


def create_app(settings: RuntimeSettings | None = None, topology: Topology | None = None) -> FastAPI:
    """App factory; tests pass simulated settings to get a deterministic instance"""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        resolved = settings or RuntimeSettings.from_env()
        logger.info("Starting eductive instance...")
        instance = EductiveInstance(resolved, topology or load_topology(os.getenv("EDUCTIVE_TOPOLOGY")))
        instance.boot()
        if not instance.clock.simulated:
            instance.start_ticker()
        app.state.instance = instance
        logger.info("Instance ready")
        yield
        logger.info("Shutting down instance...")
        try:
            instance.shutdown()
        except Exception as e:
            logger.error(f"Error during instance shutdown: {e}")
        logger.info("Instance shutdown complete")

    app = FastAPI(
        title="Eductive Runtime",
        description="Control plane of a multi-tier demand-driven evaluation instance",
        version="1.0.0",
        lifespan=lifespan,
    )
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def _instance(request: Request) -> EductiveInstance:
        return request.app.state.instance

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.get("/status")
    def status(request: Request):
        """instanceStatus"""
        return _instance(request).status()

    @app.post("/compile")
    def compile_program(body: CompileRequest):
        try:
            return geer_document(compile_source(body.source, body.procedures))
        except EductiveError as e:
            raise http_error(e)

    @app.post("/eval")
    def evaluate(body: EvalRequest, request: Request):
        """Program demand served by a live DGT"""
        instance = _instance(request)
        try:
            geer = decode_geer(json.dumps(body.geer))
            name, context = parse_demand_spec(body.demand)
            value = instance.evaluate(geer, context, resolve_demand_entry(geer, name))
        except EductiveError as e:
            raise http_error(e)
        except Exception as e:
            raise _unexpected("evaluation", e)
        return {"value": value if not isinstance(value, bytes) else value.hex(), "rendered": render_value(value)}

    @app.get("/nodes")
    def nodes(request: Request):
        return [d.model_dump(mode="json") for d in _instance(request).gmt.nodes()]

    @app.post("/nodes")
    def add_node(spec: NodeSpec, request: Request):
        try:
            _instance(request).add_node(spec)
        except EductiveError as e:
            raise http_error(e)
        return {"node_id": spec.node_id}

    @app.get("/tiers")
    def tiers(request: Request):
        return _instance(request).gmt.status()["tiers"]

    @app.post("/tiers")
    def allocate(body: AllocateRequest, request: Request):
        try:
            kind = TierKind.parse(body.kind)
            return {"assigned": _instance(request).allocate_tiers(kind, body.count, body.node_id)}
        except ValueError as e:
            raise HTTPException(status_code=400, detail={"error": "ConfigurationError", "detail": str(e)})
        except EductiveError as e:
            raise http_error(e)

    @app.delete("/tiers/{tier_id}")
    def deallocate(tier_id: str, request: Request):
        try:
            _instance(request).deallocate_tier(tier_id)
        except EductiveError as e:
            raise http_error(e)
        return {"deallocated": tier_id}

    @app.post("/tiers/{tier_id}/kill")
    def kill(tier_id: str, request: Request):
        try:
            _instance(request).kill_tier(tier_id)
        except EductiveError as e:
            raise http_error(e)
        return {"killed": tier_id}

    @app.post("/tiers/{tier_id}/restart")
    def restart(tier_id: str, request: Request):
        try:
            _instance(request).restart_tier(tier_id)
        except EductiveError as e:
            raise http_error(e)
        return {"restarted": tier_id}

    @app.post("/links/{tier_id}")
    def set_link(tier_id: str, body: LinkRequest, request: Request):
        _instance(request).set_link(tier_id, body.latency_micros, body.drop_probability, body.down)
        return {"tier": tier_id}

    @app.delete("/links/{tier_id}")
    def clear_link(tier_id: str, request: Request):
        _instance(request).clear_link(tier_id)
        return {"tier": tier_id}

    @app.get("/store/dump", response_class=PlainTextResponse)
    def store_dump(request: Request):
        try:
            lines = _instance(request).store_dump()
        except EductiveError as e:
            raise http_error(e)
        return "".join(line + "\n" for line in lines)

    @app.post("/pipeline", response_class=PlainTextResponse)
    def pipeline(body: PipelineRequest, request: Request):
        """runPipelineDistributed over a corpus directory visible to the instance"""
        instance = _instance(request)
        try:
            if body.configuration is not None:
                cfg = Configuration.parse(body.configuration)
            else:
                cfg = load_pipeline_config(body.config_path)
            entries = list_corpus(body.corpus)
            training_set = None
            if not body.train and body.training_set_path:
                training_set = load_training_set(body.training_set_path)
            classify_entries = []
            if body.classify:
                classify_entries = list_corpus(body.held_out) if body.held_out else entries
            report = run_pipeline_distributed(instance, entries if body.train else [], classify_entries,
                                              cfg, training_set)
            if body.train and body.training_set_path:
                save_training_set(body.training_set_path, report.training_set)
        except EductiveError as e:
            raise http_error(e)
        except OSError as e:
            raise HTTPException(status_code=400, detail={"error": "IOError", "detail": str(e)})
        return report.render()

    @app.get("/forensics", response_class=PlainTextResponse)
    def forensics(request: Request, fmt: str = Query(default="lines")):
        if fmt not in EXPORT_FORMATS:
            raise HTTPException(status_code=400, detail={"error": "ConfigurationError",
                                                         "detail": f"format must be one of {EXPORT_FORMATS}"})
        return _instance(request).log.export(fmt).decode("utf-8")

    @app.post("/forensics/persist")
    def persist(request: Request):
        """Store the forensic log in the configured database"""
        instance = _instance(request)
        try:
            engine = init_engine(instance.settings.forensic_db_url)
            rows = persist_forensic_log(instance.log.events(), engine)
        except Exception as e:
            raise _unexpected("forensic persistence", e)
        finally:
            dispose_engine()
        return {"rows": rows}

    return app


app = create_app()
