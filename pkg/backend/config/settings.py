# Runtime settings module
import logging
import os
import secrets
from dataclasses import dataclass, replace

from dotenv import load_dotenv

load_dotenv()
logger = logging.getLogger(__name__)

SECRET_ENV_VAR = "EDUCTIVE_INSTANCE_SECRET"


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


@dataclass(frozen=True)
class RuntimeSettings:
    """Settings for one runtime instance (real or simulated)"""
    simulated: bool = False
    seed: int = 0
    log_level: str = "INFO"
    depth_limit: int = 10_000
    lease_millis: int = 2_000
    heartbeat_interval: int = 500
    heartbeat_timeout_factor: int = 3
    durable_wal: bool = False
    wal_dir: str = "./wal"
    store_retry_budget: int = 200
    tick_millis: int = 5
    forensic_db_url: str = "sqlite:///forensics.db"
    instance_url: str = "http://127.0.0.1:8000"
    host: str = "127.0.0.1"
    port: int = 8000

    @property
    def heartbeat_timeout(self) -> int:
        return self.heartbeat_interval * self.heartbeat_timeout_factor

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        return cls(
            log_level=os.getenv("EDUCTIVE_LOG_LEVEL", "INFO"),
            depth_limit=int(os.getenv("EDUCTIVE_DEPTH_LIMIT", "10000")),
            lease_millis=int(os.getenv("EDUCTIVE_LEASE_MILLIS", "2000")),
            heartbeat_interval=int(os.getenv("EDUCTIVE_HEARTBEAT_INTERVAL", "500")),
            heartbeat_timeout_factor=int(os.getenv("EDUCTIVE_HEARTBEAT_TIMEOUT_FACTOR", "3")),
            durable_wal=_env_bool("EDUCTIVE_DURABLE_WAL", False),
            wal_dir=os.getenv("EDUCTIVE_WAL_DIR", "./wal"),
            store_retry_budget=int(os.getenv("EDUCTIVE_STORE_RETRY_BUDGET", "200")),
            tick_millis=int(os.getenv("EDUCTIVE_TICK_MILLIS", "5")),
            forensic_db_url=os.getenv("EDUCTIVE_FORENSIC_DB_URL", "sqlite:///forensics.db"),
            instance_url=os.getenv("EDUCTIVE_INSTANCE_URL", "http://127.0.0.1:8000"),
            host=os.getenv("HOST", "127.0.0.1"),
            port=int(os.getenv("PORT", "8000")),
        )

    @classmethod
    def for_simulation(cls, seed: int) -> "RuntimeSettings":
        """Sim-mode variant: leases and heartbeats are counted in ticks"""
        base = cls.from_env()
        return replace(
            base,
            simulated=True,
            seed=seed,
            lease_millis=int(os.getenv("EDUCTIVE_SIM_LEASE_TICKS", "20")),
            heartbeat_interval=int(os.getenv("EDUCTIVE_SIM_HEARTBEAT_INTERVAL", "5")),
            durable_wal=False,
        )

    def snapshot(self) -> dict:
        """Configuration snapshot carried by allocation requests"""
        return {
            "simulated": self.simulated,
            "depth_limit": self.depth_limit,
            "lease_millis": self.lease_millis,
            "heartbeat_interval": self.heartbeat_interval,
            "store_retry_budget": self.store_retry_budget,
        }


def load_instance_secret(seed: int | None = None) -> bytes:
    """
    Read the instance secret from the environment.

    In simulation the secret is derived from the seed so runs are
    reproducible; otherwise a fresh secret is generated and printed once.
    """
    value = os.getenv(SECRET_ENV_VAR)
    if value:
        try:
            return bytes.fromhex(value)
        except ValueError:
            return value.encode("utf-8")
    if seed is not None:
        return f"eductive-sim-secret-{seed}".encode("utf-8")
    generated = secrets.token_hex(32)
    print(f"{SECRET_ENV_VAR}={generated}")
    logger.warning(f"{SECRET_ENV_VAR} not set; generated a fresh instance secret")
    return bytes.fromhex(generated)
