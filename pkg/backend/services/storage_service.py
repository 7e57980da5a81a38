"""
Storage manager: persistent images of serializable state.

Image layout: magic EDIMG1, one mode byte, the payload, and a 32-byte
SHA-256 trailer over everything before it. In gzipBinary mode the payload
is the gzip of the binary payload (mtime 0, so equal states give equal
bytes).
"""

import gzip
import hashlib
import logging
import os
from typing import Any

from models.recovery import DumpMode, PersistentImage
from utils.canonical import CanonicalDecodeError, decode_value, encode_value
from utils.errors import ImageFormatError, IntegrityFailure

logger = logging.getLogger(__name__)

IMAGE_MAGIC = b"EDIMG1"
HASH_BYTES = 32


def _to_value(state: Any) -> Any:
    return state.to_value() if hasattr(state, "to_value") else state


def dump_state(state: Any, mode: DumpMode = DumpMode.BINARY) -> PersistentImage:
    """dumpState: canonical encoding, optionally gzipped, sealed with SHA-256"""
    binary = encode_value(_to_value(state))
    data = gzip.compress(binary, mtime=0) if mode == DumpMode.GZIP_BINARY else binary
    integrity = hashlib.sha256(IMAGE_MAGIC + bytes([mode]) + data).digest()
    return PersistentImage(mode=mode, data=data, integrity=integrity)


def image_bytes(image: PersistentImage) -> bytes:
    return IMAGE_MAGIC + bytes([image.mode]) + image.data + image.integrity


def parse_image(raw: bytes) -> PersistentImage:
    header = len(IMAGE_MAGIC) + 1
    if len(raw) < header + HASH_BYTES or raw[:len(IMAGE_MAGIC)] != IMAGE_MAGIC:
        raise ImageFormatError("not a persistent image")
    body, trailer = raw[:-HASH_BYTES], raw[-HASH_BYTES:]
    if hashlib.sha256(body).digest() != trailer:
        raise IntegrityFailure("image hash does not match its contents")
    try:
        mode = DumpMode(raw[len(IMAGE_MAGIC)])
    except ValueError:
        raise ImageFormatError(f"unknown dump mode {raw[len(IMAGE_MAGIC)]}")
    return PersistentImage(mode=mode, data=body[header:], integrity=trailer)


def restore_state(image: PersistentImage | bytes) -> Any:
    """restoreState: the integrity hash is checked before anything is decoded"""
    if isinstance(image, (bytes, bytearray)):
        image = parse_image(bytes(image))
    expected = hashlib.sha256(IMAGE_MAGIC + bytes([image.mode]) + image.data).digest()
    if expected != image.integrity:
        raise IntegrityFailure("image hash does not match its contents")
    data = image.data
    if image.mode == DumpMode.GZIP_BINARY:
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as e:
            raise ImageFormatError(f"gzip payload is unreadable: {e}")
    try:
        return decode_value(data)
    except CanonicalDecodeError as e:
        raise ImageFormatError(f"image payload is not a canonical value: {e}")


def write_image(path: str, image: PersistentImage) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(image_bytes(image))
        f.flush()
        os.fsync(f.fileno())
    logger.info(f"Wrote {image.mode.name.lower()} image to {path}")


def read_image(path: str) -> PersistentImage:
    with open(path, "rb") as f:
        return parse_image(f.read())
