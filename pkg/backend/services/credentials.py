"""
Self-protection: per-node credentials and the envelope gate.

A token is the canonical encoding of (node id, issue time, HMAC-SHA256 of
both under the instance secret). Any holder of the secret can verify it
offline; verification is a pure function of the envelope.
"""

import logging
from typing import Callable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, hmac

from models.autonomic import Credential, Verdict
from models.transport import Envelope
from utils.canonical import CanonicalDecodeError, CanonicalReader, CanonicalWriter

logger = logging.getLogger(__name__)

MAC_BYTES = 32

REJECT_REASONS = ("missing_token", "malformed_token", "bad_mac", "unknown_source", "identity_mismatch")


def _mac_input(node_id: str, issued_at: int) -> bytes:
    return CanonicalWriter().text(node_id).u64(issued_at).getvalue()


def _hmac(secret: bytes) -> hmac.HMAC:
    return hmac.HMAC(secret, hashes.SHA256())


def issue_credential(secret: bytes, node_id: str, now: int) -> Credential:
    """issueCredential"""
    h = _hmac(secret)
    h.update(_mac_input(node_id, now))
    return Credential(node_id=node_id, issued_at=now, mac=h.finalize())


def encode_token(credential: Credential) -> bytes:
    return (CanonicalWriter()
            .text(credential.node_id)
            .u64(credential.issued_at)
            .raw(credential.mac)
            .getvalue())


def decode_token(token: bytes) -> Credential:
    reader = CanonicalReader(token)
    node_id = reader.text()
    issued_at = reader.u64()
    mac = reader.raw(MAC_BYTES)
    reader.expect_end()
    return Credential(node_id, issued_at, mac)


def verify_token(token: bytes, secret: bytes) -> Verdict:
    if not token:
        return Verdict.reject("missing_token")
    try:
        credential = decode_token(token)
    except CanonicalDecodeError:
        return Verdict.reject("malformed_token")
    h = _hmac(secret)
    h.update(_mac_input(credential.node_id, credential.issued_at))
    try:
        h.verify(credential.mac)
    except InvalidSignature:
        return Verdict.reject("bad_mac")
    return Verdict.accept(credential.node_id)


def verify_envelope(envelope: Envelope, secret: bytes,
                    node_of_tier: Callable[[str], str | None]) -> Verdict:
    """
    verifyEnvelope: the token must carry a valid MAC and name the node that
    hosts the envelope's source tier.
    """
    verdict = verify_token(envelope.credential_token, secret)
    if not verdict.accepted:
        return verdict
    source_node = node_of_tier(envelope.source_tier_id)
    if source_node is None:
        return Verdict.reject("unknown_source")
    if source_node != verdict.node_id:
        return Verdict.reject("identity_mismatch")
    return verdict
