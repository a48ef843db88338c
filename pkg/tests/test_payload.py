from random import Random

import pytest

from teefuzz.payload import (
    MAGIC,
    PayloadError,
    PayloadErrorCode,
    deserialize_payload,
    serialize_payload,
)
from teefuzz.testcase import ArgValue, Syscall, TestCase, generate_testcase


def test_hand_encoded_single_call_bit_exact(templates):
    # one call of ordinal 3 with no args; encoded by hand from the wire
    # format: magic, version 1, count 0x0001, ordinal 0x0003, argc 0
    tc = TestCase((Syscall(3, ()),))
    assert serialize_payload(tc) == bytes.fromhex("535a5452 01 0100 0300 00".replace(" ", ""))
    assert len(serialize_payload(tc)) == 10


def test_magic_is_sztr():
    assert MAGIC == b"SZTR"


def test_roundtrip_10000_random_testcases(templates):
    rng = Random(2024)
    for _ in range(10_000):
        tc = generate_testcase(templates, rng, 12)
        assert deserialize_payload(serialize_payload(tc), templates) == tc


def test_zero_length_buffer_encodes_length_zero_no_value(templates):
    attr = templates.by_name["TEE_InitRefAttribute"]
    tc = TestCase(
        (Syscall(attr.ordinal, (ArgValue.const_enum(0xC0), ArgValue.buffer(b""))),)
    )
    data = serialize_payload(tc)
    # ... tag 4, value 0xC0 LE, tag 2, length 0x0000, then nothing
    assert data[-3:] == b"\x02\x00\x00"
    assert deserialize_payload(data, templates) == tc


def test_buffer_over_65535_is_an_encoding_error(templates):
    attr = templates.by_name["TEE_InitRefAttribute"]
    tc = TestCase(
        (
            Syscall(
                attr.ordinal,
                (ArgValue.const_enum(0xC0), ArgValue.buffer(b"x" * 65_536)),
            ),
        )
    )
    with pytest.raises(PayloadError) as exc:
        serialize_payload(tc)
    assert exc.value.code is PayloadErrorCode.BUFFER_TOO_LONG


def test_bad_magic(templates):
    with pytest.raises(PayloadError) as exc:
        deserialize_payload(b"\x00\x00\x00\x00\x01\x00\x00", templates)
    assert exc.value.code is PayloadErrorCode.BAD_MAGIC


def test_bad_version(templates):
    with pytest.raises(PayloadError) as exc:
        deserialize_payload(MAGIC + b"\x07\x00\x00", templates)
    assert exc.value.code is PayloadErrorCode.BAD_VERSION


def test_truncated_mid_arg(templates):
    tc = TestCase((Syscall(16, (ArgValue.scalar32(5), ArgValue.scalar32(0))),))
    data = serialize_payload(tc)
    with pytest.raises(PayloadError) as exc:
        deserialize_payload(data[:-2], templates)
    assert exc.value.code is PayloadErrorCode.TRUNCATED


def test_truncated_header(templates):
    with pytest.raises(PayloadError) as exc:
        deserialize_payload(MAGIC, templates)
    assert exc.value.code is PayloadErrorCode.TRUNCATED


def test_unknown_ordinal(templates):
    data = MAGIC + b"\x01" + (1).to_bytes(2, "little") + (999).to_bytes(2, "little") + b"\x00"
    with pytest.raises(PayloadError) as exc:
        deserialize_payload(data, templates)
    assert exc.value.code is PayloadErrorCode.UNKNOWN_ORDINAL


def test_unknown_arg_tag(templates):
    data = (
        MAGIC
        + b"\x01"
        + (1).to_bytes(2, "little")
        + (3).to_bytes(2, "little")
        + b"\x01"          # one arg
        + b"\x09"          # bogus tag
    )
    with pytest.raises(PayloadError) as exc:
        deserialize_payload(data, templates)
    assert exc.value.code is PayloadErrorCode.UNKNOWN_ARG_TAG


def test_serialization_depends_only_on_ordinals(templates):
    # renaming a template must not change the encoding: encode under the
    # bundled set, decode under a renamed clone
    import dataclasses

    from teefuzz.templates import TemplateSet

    renamed = TemplateSet(
        [dataclasses.replace(t, name=f"X{t.ordinal}") for t in templates.templates]
    )
    rng = Random(5)
    for _ in range(50):
        tc = generate_testcase(templates, rng, 8)
        assert deserialize_payload(serialize_payload(tc), renamed) == tc


def test_all_arg_kinds_roundtrip(templates):
    alloc = templates.by_name["TEE_AllocateOperation"]
    free = templates.by_name["TEE_FreeOperation"]
    attr = templates.by_name["TEE_InitRefAttribute"]
    tc = TestCase(
        (
            Syscall(
                alloc.ordinal,
                (
                    ArgValue.const_enum(0x10),
                    ArgValue.const_enum(0),
                    ArgValue.scalar32(0xDEADBEEF),
                ),
            ),
            Syscall(attr.ordinal, (ArgValue.const_enum(0xC0), ArgValue.buffer(bytes(range(32))))),
            Syscall(free.ordinal, (ArgValue.resource_ref(0),)),
        )
    )
    assert deserialize_payload(serialize_payload(tc), templates) == tc
