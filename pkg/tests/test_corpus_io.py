import logging

import pytest

from teefuzz.corpus_io import (
    ProgramParseError,
    format_program,
    load_seed_corpus,
    parse_program,
)
from teefuzz.testcase import generate_testcase, validate_testcase
from random import Random


def test_bundled_corpus_is_at_least_10_valid_seeds(seed_corpus, templates):
    assert len(seed_corpus) >= 10
    for tc in seed_corpus:
        assert validate_testcase(tc, templates) == []


def test_undefined_resource_variable_rejected(templates):
    with pytest.raises(ProgramParseError, match="r5"):
        parse_program("TEE_FreeOperation(r5)\n", templates)


def test_seed_with_undefined_var_is_skipped_with_diagnostic(tmp_path, templates, caplog):
    (tmp_path / "bad.prog").write_text("TEE_FreeOperation(r5)\n")
    (tmp_path / "good.prog").write_text("TEE_Malloc(8, 0)\n")
    with caplog.at_level(logging.WARNING, logger="teefuzz.corpus"):
        seeds = load_seed_corpus(tmp_path, templates)
    assert len(seeds) == 1
    assert any("bad.prog" in r.message for r in caplog.records)


def test_empty_directory_warns_and_returns_empty(tmp_path, templates, caplog):
    with caplog.at_level(logging.WARNING, logger="teefuzz.corpus"):
        seeds = load_seed_corpus(tmp_path, templates)
    assert seeds == []
    assert any("empty" in r.message for r in caplog.records)


def test_unreadable_path_is_an_error(tmp_path, templates):
    with pytest.raises(FileNotFoundError):
        load_seed_corpus(tmp_path / "nope", templates)


def test_format_parse_roundtrip(templates):
    rng = Random(31)
    for _ in range(300):
        tc = generate_testcase(templates, rng, 10)
        text = format_program(tc, templates)
        assert parse_program(text, templates) == tc


def test_unknown_syscall_name(templates):
    with pytest.raises(ProgramParseError, match="unknown syscall"):
        parse_program("TEE_Bogus()\n", templates)


def test_wrong_arity(templates):
    with pytest.raises(ProgramParseError, match="takes 2 args"):
        parse_program("TEE_Malloc(1)\n", templates)


def test_buffer_must_be_quoted_hex(templates):
    with pytest.raises(ProgramParseError, match="hexbytes"):
        parse_program('r0 = TEE_InitRefAttribute(0xC0, 42)\n', templates)
    with pytest.raises(ProgramParseError, match="bad hex"):
        parse_program('r0 = TEE_InitRefAttribute(0xC0, "zz")\n', templates)


def test_comments_and_hex_ints(templates):
    tc = parse_program(
        "# a comment\nTEE_Malloc(0x40, 1)  # trailing\n", templates
    )
    assert len(tc.calls) == 1
    assert tc.calls[0].args[0].value == 64


def test_invalid_seed_validation_skip(tmp_path, templates, caplog):
    # parses, but is semantically invalid: buffer longer than max_len
    (tmp_path / "long.prog").write_text(
        'r0 = TEE_InitRefAttribute(0xC0, "' + "00" * 40 + '")\n'
    )
    with caplog.at_level(logging.WARNING, logger="teefuzz.corpus"):
        seeds = load_seed_corpus(tmp_path, templates)
    assert seeds == []
