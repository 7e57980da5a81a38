"""Thin HTTP client for the instance control plane (used by the CLI in instance mode)"""

import logging
from typing import Any

import httpx

from utils.errors import EductiveError, InstanceError

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120.0


class RemoteError(EductiveError):
    """An error reported by the instance; `kind` is the remote error kind"""

    def __init__(self, kind: str, message: str, status_code: int):
        super().__init__(message)
        self.kind = kind
        self.status_code = status_code


class InstanceClient:
    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT, transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "InstanceClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _request(self, method: str, path: str, **kwargs) -> httpx.Response:
        try:
            response = self._client.request(method, path, **kwargs)
        except httpx.HTTPError as e:
            logger.warning(f"Instance at {self.base_url} unreachable: {e}")
            raise InstanceError(f"instance at {self.base_url} unreachable: {e}") from e
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail")
            except ValueError:
                detail = None
            if isinstance(detail, dict):
                raise RemoteError(detail.get("error", "InstanceError"), detail.get("detail", ""),
                                  response.status_code)
            raise RemoteError("InstanceError", f"HTTP {response.status_code}: {detail or response.text}",
                              response.status_code)
        return response

    def status(self) -> dict:
        return self._request("GET", "/status").json()

    def compile(self, source: str) -> dict:
        return self._request("POST", "/compile", json={"source": source}).json()

    def evaluate(self, geer_document: dict, demand: str) -> dict:
        return self._request("POST", "/eval", json={"geer": geer_document, "demand": demand}).json()

    def nodes(self) -> list[dict]:
        return self._request("GET", "/nodes").json()

    def add_node(self, spec: dict) -> dict:
        return self._request("POST", "/nodes", json=spec).json()

    def tiers(self) -> list[dict]:
        return self._request("GET", "/tiers").json()

    def allocate(self, kind: str, count: int = 1, node_id: str | None = None) -> list[str]:
        body = {"kind": kind, "count": count, "node_id": node_id}
        return self._request("POST", "/tiers", json=body).json()["assigned"]

    def deallocate(self, tier_id: str) -> None:
        self._request("DELETE", f"/tiers/{tier_id}")

    def kill(self, tier_id: str) -> None:
        self._request("POST", f"/tiers/{tier_id}/kill")

    def restart(self, tier_id: str) -> None:
        self._request("POST", f"/tiers/{tier_id}/restart")

    def store_dump(self) -> str:
        return self._request("GET", "/store/dump").text

    def pipeline(self, **body: Any) -> str:
        return self._request("POST", "/pipeline", json=body).text

    def forensics(self, fmt: str = "lines") -> str:
        return self._request("GET", "/forensics", params={"fmt": fmt}).text
