"""Binary payload codec for shipping test cases to the execution engine.

Wire format (all multi-byte integers little-endian):

    magic   4 bytes  53 5A 54 52
    version u8       1
    count   u16      number of calls
    per call:
        ordinal   u16
        arg count u8
        per arg:  tag u8, then value
            tag 0 scalar32     4 bytes
            tag 1 scalar64     8 bytes
            tag 2 buffer       u16 length + bytes
            tag 3 resource_ref u16 call index
            tag 4 const_enum   4 bytes
"""

from __future__ import annotations

import struct
from enum import Enum

from .templates import TemplateSet
from .testcase import ArgKind, ArgValue, Syscall, TestCase

MAGIC = b"\x53\x5a\x54\x52"
VERSION = 1


class PayloadErrorCode(Enum):
    BAD_MAGIC = "bad_magic"
    BAD_VERSION = "bad_version"
    TRUNCATED = "truncated"
    UNKNOWN_ORDINAL = "unknown_ordinal"
    UNKNOWN_ARG_TAG = "unknown_arg_tag"
    BUFFER_TOO_LONG = "buffer_too_long"


class PayloadError(Exception):
    def __init__(self, code: PayloadErrorCode, detail: str = ""):
        self.code = code
        super().__init__(f"{code.value}: {detail}" if detail else code.value)


_TAG = {
    ArgKind.SCALAR32: 0,
    ArgKind.SCALAR64: 1,
    ArgKind.BUFFER: 2,
    ArgKind.RESOURCE_REF: 3,
    ArgKind.CONST_ENUM: 4,
}


def serialize_payload(tc: TestCase) -> bytes:
    out = bytearray(MAGIC)
    out.append(VERSION)
    out += struct.pack("<H", len(tc.calls))
    for call in tc.calls:
        out += struct.pack("<HB", call.ordinal, len(call.args))
        for arg in call.args:
            out.append(_TAG[arg.kind])
            if arg.kind is ArgKind.SCALAR32 or arg.kind is ArgKind.CONST_ENUM:
                out += struct.pack("<I", arg.value)
            elif arg.kind is ArgKind.SCALAR64:
                out += struct.pack("<Q", arg.value)
            elif arg.kind is ArgKind.BUFFER:
                if len(arg.value) > 0xFFFF:
                    raise PayloadError(
                        PayloadErrorCode.BUFFER_TOO_LONG,
                        f"{len(arg.value)} bytes",
                    )
                out += struct.pack("<H", len(arg.value))
                out += arg.value
            else:
                out += struct.pack("<H", arg.value)
    return bytes(out)


def deserialize_payload(data: bytes, templates: TemplateSet) -> TestCase:
    """Exact inverse of serialize_payload on its image.

    Decoding is structural: ordinals must exist in the template set (the
    executor only dispatches known syscalls) but arity and argument typing
    against templates stay the validator's job.
    """
    end = len(data)
    if end < 4 or data[:4] != MAGIC:
        if end >= 4:
            raise PayloadError(PayloadErrorCode.BAD_MAGIC)
        raise PayloadError(PayloadErrorCode.TRUNCATED, "short header")
    if end < 7:
        raise PayloadError(PayloadErrorCode.TRUNCATED, "short header")
    if data[4] != VERSION:
        raise PayloadError(PayloadErrorCode.BAD_VERSION, f"version {data[4]}")
    count = data[5] | (data[6] << 8)
    pos = 7
    known = templates.by_ordinal
    unpack = struct.unpack_from
    calls = []
    scalar32 = ArgKind.SCALAR32
    scalar64 = ArgKind.SCALAR64
    buffer_k = ArgKind.BUFFER
    resref = ArgKind.RESOURCE_REF
    enum_k = ArgKind.CONST_ENUM
    try:
        for _ in range(count):
            ordinal = data[pos] | (data[pos + 1] << 8)
            if ordinal not in known:
                raise PayloadError(PayloadErrorCode.UNKNOWN_ORDINAL, str(ordinal))
            argc = data[pos + 2]
            pos += 3
            args = []
            for _ in range(argc):
                tag = data[pos]
                pos += 1
                if tag == 0 or tag == 4:
                    if pos + 4 > end:
                        raise IndexError
                    args.append(
                        ArgValue(scalar32 if tag == 0 else enum_k, unpack("<I", data, pos)[0])
                    )
                    pos += 4
                elif tag == 1:
                    if pos + 8 > end:
                        raise IndexError
                    args.append(ArgValue(scalar64, unpack("<Q", data, pos)[0]))
                    pos += 8
                elif tag == 2:
                    if pos + 2 > end:
                        raise IndexError
                    blen = data[pos] | (data[pos + 1] << 8)
                    pos += 2
                    if pos + blen > end:
                        raise IndexError
                    args.append(ArgValue(buffer_k, data[pos : pos + blen]))
                    pos += blen
                elif tag == 3:
                    if pos + 2 > end:
                        raise IndexError
                    args.append(ArgValue(resref, data[pos] | (data[pos + 1] << 8)))
                    pos += 2
                else:
                    raise PayloadError(PayloadErrorCode.UNKNOWN_ARG_TAG, str(tag))
            calls.append(Syscall(ordinal, tuple(args)))
    except IndexError:
        raise PayloadError(PayloadErrorCode.TRUNCATED, f"at offset {pos}")
    return TestCase(tuple(calls))
