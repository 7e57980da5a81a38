# Forensic store database module
import logging
import os

from dotenv import load_dotenv
from sqlalchemy import create_engine, event
from sqlalchemy.engine import Engine

from models import Base

load_dotenv()
logger = logging.getLogger(__name__)

engine: Engine | None = None


def init_engine(url: str | None = None) -> Engine:
    """Initialize the forensic store engine and create its tables"""
    global engine

    url = url or os.getenv("EDUCTIVE_FORENSIC_DB_URL", "sqlite:///forensics.db")
    try:
        engine = create_engine(url, echo=False, future=True)

        if engine.dialect.name == "sqlite":
            @event.listens_for(engine, "connect")
            def set_sqlite_pragma(dbapi_connection, connection_record):
                cursor = dbapi_connection.cursor()
                cursor.execute("PRAGMA journal_mode=WAL")
                cursor.close()

        Base.metadata.create_all(engine)
        logger.info(f"Forensic store initialized at {engine.url.render_as_string(hide_password=True)}")
        return engine

    except Exception as e:
        logger.error(f"Error initializing forensic store: {e}")
        raise RuntimeError(f"Failed to initialize forensic store: {e}") from e


def dispose_engine() -> None:
    global engine
    if engine is not None:
        engine.dispose()
        logger.info("Forensic store engine disposed")
    engine = None
