import pytest

from models.recovery import DumpMode
from services.storage_service import (
    HASH_BYTES,
    IMAGE_MAGIC,
    dump_state,
    image_bytes,
    parse_image,
    read_image,
    restore_state,
    write_image,
)
from utils.errors import ImageFormatError, IntegrityFailure

STATE = {
    "trained": True,
    "samples": [{"subject": "s1", "features": [0.5, 1.25, -3.0]}, {"subject": "s2", "features": []}],
    "count": 2,
    "blob": b"\x00\x01",
    "empty": None,
}


@pytest.mark.parametrize("mode", list(DumpMode))
def test_restore_returns_the_dumped_state(mode):
    assert restore_state(dump_state(STATE, mode)) == STATE


@pytest.mark.parametrize("mode", list(DumpMode))
def test_equal_states_give_equal_bytes(mode):
    reordered = dict(reversed(list(STATE.items())))
    assert image_bytes(dump_state(STATE, mode)) == image_bytes(dump_state(reordered, mode))


def test_image_layout():
    image = dump_state(STATE, DumpMode.GZIP_BINARY)
    raw = image_bytes(image)
    assert raw.startswith(IMAGE_MAGIC)
    assert raw[len(IMAGE_MAGIC)] == DumpMode.GZIP_BINARY
    assert raw[-HASH_BYTES:] == image.integrity
    assert parse_image(raw) == image


def test_tampered_payload_fails_integrity_before_decoding():
    raw = bytearray(image_bytes(dump_state(STATE)))
    raw[len(IMAGE_MAGIC) + 3] ^= 0x01
    with pytest.raises(IntegrityFailure):
        restore_state(bytes(raw))


def test_tampered_trailer_fails_integrity():
    raw = bytearray(image_bytes(dump_state(STATE)))
    raw[-1] ^= 0x01
    with pytest.raises(IntegrityFailure):
        parse_image(bytes(raw))


@pytest.mark.parametrize("raw", [b"", b"EDIMG1", b"NOTANIMAGE" + bytes(40)])
def test_non_images_are_format_errors(raw):
    with pytest.raises(ImageFormatError) as excinfo:
        parse_image(raw)
    assert excinfo.value.kind == "FormatError"


def test_objects_with_to_value_are_dumped_by_value():
    class Snapshot:
        def to_value(self):
            return {"n": 3}

    assert restore_state(dump_state(Snapshot())) == {"n": 3}


def test_write_and_read_image(tmp_path):
    path = str(tmp_path / "images" / "T3.img")
    image = dump_state(STATE, DumpMode.GZIP_BINARY)
    write_image(path, image)
    assert read_image(path) == image
    assert restore_state(read_image(path)) == STATE
